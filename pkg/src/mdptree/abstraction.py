"""Game abstraction of a subfamily and policy-consistency analysis.

Player 1 owns the quotient states and picks a base action, which moves the
play to the Player-2 state ``(s, action)``, i.e. a group of the quotient.
Player 2 then picks one of the surviving identifier classes of that group.
The game therefore reuses the quotient's CSR arrays unchanged: only the
choice mask differs between subfamilies.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .indexset import IndexSet
from .kernels import OP_MIN
from .model.quotient import QuotientMdp, Restriction, restrict
from .solver import SolveResult, sg_solve


@dataclass(eq=False)
class GameAbstraction:
    restriction: Restriction

    @property
    def quotient(self) -> QuotientMdp:
        return self.restriction.quotient

    @property
    def structure(self):
        return self.quotient.structure

    @property
    def initial(self) -> int:
        return self.quotient.initial

    def solver_view(self):
        st = self.structure
        return st, self.initial, True, np.full(st.n_groups, OP_MIN, dtype=np.int8), self.restriction.choice_mask

    @property
    def player2_states(self) -> np.ndarray:
        """Groups with at least one surviving class."""
        st = self.structure
        alive = np.maximum.reduceat(self.restriction.choice_mask.astype(np.uint8), st.group_ptr[:-1])
        return np.flatnonzero(alive)

    def player2_actions(self, g: int) -> list[tuple[int, IndexSet]]:
        """Surviving classes of group ``g`` with their effective colors."""
        return [(c, self.restriction.effective(c)) for c in self.restriction.surviving(g)]

    def solve(self, targets, method: str = "vi") -> SolveResult:
        return sg_solve(self, targets, method=method)

    def to_dot(self, targets: Optional[np.ndarray] = None, limit: int = 200) -> str:
        """Circles for Player-1 states, boxes for Player-2 states."""
        q = self.quotient
        st = self.structure
        if st.n_states + st.n_groups > limit:
            raise ValueError(f"game has more than {limit} states")
        lines = ["digraph game {", "  rankdir=LR;"]
        for s in range(st.n_states):
            extra = ", peripheries=2" if targets is not None and targets[s] else ""
            lines.append(f'  s{s} [shape=circle, label="{q.state_name(s)}"{extra}];')
        for g in self.player2_states:
            s = st.group_state[g]
            action = q.action_names[q.group_action[g]]
            lines.append(f'  g{g} [shape=box, label="{q.state_name(s)},{action}"];')
            lines.append(f'  s{s} -> g{g} [label="{action}"];')
            for c, color in self.player2_actions(g):
                label = "{" + ",".join(str(i) for i in color) + "}" if len(color) <= 8 else f"{len(color)} ids"
                succ, prob = st.row(c)
                for t, p in zip(succ, prob):
                    lines.append(f'  g{g} -> s{t} [label="{label}: {p:g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def build_game(quotient: QuotientMdp, restriction: Optional[Restriction] = None) -> GameAbstraction:
    if restriction is None:
        restriction = restrict(quotient, quotient.full)
    if restriction.quotient is not quotient:
        raise ValueError("restriction belongs to a different quotient")
    return GameAbstraction(restriction)


# ---------------------------------------------------------------- consistency


def game_reachable(game: GameAbstraction, state_group: np.ndarray, group_choice: np.ndarray, targets) -> np.ndarray:
    """Player-1 states reachable under a policy pair; targets are not expanded."""
    st = game.structure
    seen = np.zeros(st.n_states, dtype=bool)
    seen[game.initial] = True
    queue = deque([game.initial])
    while queue:
        s = queue.popleft()
        if targets is not None and targets[s]:
            continue
        c = group_choice[state_group[s]]
        for t in st.succ[st.choice_ptr[c] : st.choice_ptr[c + 1]]:
            if not seen[t]:
                seen[t] = True
                queue.append(int(t))
    return seen


def chosen_classes(
    game: GameAbstraction, state_group, group_choice, targets, scope: str = "reachable"
) -> list[tuple[int, IndexSet]]:
    """``(group, effective color of the chosen class)`` over the Player-2 states in scope."""
    st = game.structure
    r = game.restriction
    if scope == "reachable":
        reach = game_reachable(game, state_group, group_choice, targets)
        groups = [int(state_group[s]) for s in np.flatnonzero(reach) if targets is None or not targets[s]]
    elif scope == "all":
        groups = [int(g) for g in game.player2_states if targets is None or not targets[st.group_state[g]]]
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return [(g, r.effective(int(group_choice[g]))) for g in sorted(groups)]


def consistent_ids_game(game: GameAbstraction, state_group, group_choice, targets=None, scope: str = "reachable") -> IndexSet:
    """Members ``i`` such that every in-scope Player-2 choice contains ``i``."""
    out = game.restriction.subset
    for _, color in chosen_classes(game, state_group, group_choice, targets, scope):
        out = out & color
    return out


def quotient_chosen_classes(view: Restriction, choices: np.ndarray, targets=None) -> list[tuple[int, IndexSet]]:
    from .model.quotient import reachable_fragment

    st = view.quotient.structure
    reach = reachable_fragment(view.quotient, choices=choices, stop=targets)
    out = []
    for s in np.flatnonzero(reach):
        if targets is not None and targets[s]:
            continue
        c = int(choices[s])
        out.append((int(st.choice_group[c]), view.effective(c)))
    return sorted(out, key=lambda gc: gc[0])


def consistent_ids_quotient(view: Restriction, choices: np.ndarray, targets=None) -> IndexSet:
    """Intersection of the colors of chosen quotient actions over the reachable fragment."""
    out = view.subset
    for _, color in quotient_chosen_classes(view, choices, targets):
        out = out & color
    return out
