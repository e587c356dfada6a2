"""Explicit sparse models.

Every model in the package is stored as a three-level CSR structure::

    state --state_ptr--> groups --group_ptr--> choices --choice_ptr--> transitions

A *group* is a base action available in a state. A *choice* is one concrete
distribution for that action. Plain MDPs have exactly one choice per group;
a quotient MDP has one choice per identifier class; a game abstraction reads
groups as Player-2 states and choices as Player-2 actions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np


@dataclass(eq=False)
class TransitionStructure:
    state_ptr: np.ndarray
    group_ptr: np.ndarray
    choice_ptr: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    group_state: np.ndarray = field(init=False, repr=False)
    choice_group: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.state_ptr = np.ascontiguousarray(self.state_ptr, dtype=np.int64)
        self.group_ptr = np.ascontiguousarray(self.group_ptr, dtype=np.int64)
        self.choice_ptr = np.ascontiguousarray(self.choice_ptr, dtype=np.int64)
        self.succ = np.ascontiguousarray(self.succ, dtype=np.int64)
        self.prob = np.ascontiguousarray(self.prob, dtype=np.float64)
        if np.any(np.diff(self.state_ptr) < 1):
            raise ValueError("every state needs at least one action")
        if np.any(np.diff(self.group_ptr) < 1):
            raise ValueError("every action needs at least one choice")
        if np.any(np.diff(self.choice_ptr) < 1):
            raise ValueError("every choice needs at least one transition")
        if self.succ.size and (self.succ.min() < 0 or self.succ.max() >= self.n_states):
            raise ValueError("successor out of range")
        self.group_state = np.repeat(np.arange(self.n_states, dtype=np.int64), np.diff(self.state_ptr))
        self.choice_group = np.repeat(np.arange(self.n_groups, dtype=np.int64), np.diff(self.group_ptr))

    @property
    def n_states(self) -> int:
        return len(self.state_ptr) - 1

    @property
    def n_groups(self) -> int:
        return len(self.group_ptr) - 1

    @property
    def n_choices(self) -> int:
        return len(self.choice_ptr) - 1

    def groups(self, s: int) -> range:
        return range(self.state_ptr[s], self.state_ptr[s + 1])

    def choices(self, g: int) -> range:
        return range(self.group_ptr[g], self.group_ptr[g + 1])

    def row(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.choice_ptr[c], self.choice_ptr[c + 1]
        return self.succ[lo:hi], self.prob[lo:hi]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Sequence[Sequence[tuple[int, float]]]]]) -> TransitionStructure:
        """Build from ``rows[state][group][choice] = [(succ, prob), ...]``."""
        state_ptr, group_ptr, choice_ptr = [0], [0], [0]
        succ, prob = [], []
        for groups in rows:
            for choices in groups:
                for dist in choices:
                    for t, p in dist:
                        succ.append(t)
                        prob.append(float(p))
                    choice_ptr.append(len(succ))
                group_ptr.append(len(choice_ptr) - 1)
            state_ptr.append(len(group_ptr) - 1)
        return cls(np.array(state_ptr), np.array(group_ptr), np.array(choice_ptr), np.array(succ, dtype=np.int64), np.array(prob))


@dataclass(eq=False)
class ExplicitMdp:
    """A single MDP with exact transition probabilities.

    ``group_action[g]`` is the index into ``action_names`` of group ``g``.
    Each group has exactly one choice, so groups and choices coincide.
    """

    structure: TransitionStructure
    group_action: np.ndarray
    action_names: list[str]
    exact: list[Fraction]
    initial: int = 0
    valuations: Optional[np.ndarray] = None
    variable_names: list[str] = field(default_factory=list)
    targets: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.structure.n_groups != self.structure.n_choices:
            raise ValueError("an explicit MDP has one distribution per action")
        self.group_action = np.asarray(self.group_action, dtype=np.int64)

    @property
    def n_states(self) -> int:
        return self.structure.n_states

    def actions(self, s: int) -> list[str]:
        return [self.action_names[self.group_action[g]] for g in self.structure.groups(s)]

    def distribution(self, s: int, action: str) -> dict[int, Fraction]:
        st = self.structure
        for g in st.groups(s):
            if self.action_names[self.group_action[g]] == action:
                c = st.group_ptr[g]
                lo, hi = st.choice_ptr[c], st.choice_ptr[c + 1]
                return {int(st.succ[k]): self.exact[k] for k in range(lo, hi)}
        raise KeyError(f"action {action!r} not available in state {s}")

    def state_name(self, s: int) -> str:
        return valuation_name(self.variable_names, self.valuations, s)

    def state_index(self) -> dict[tuple, int]:
        return {tuple(int(x) for x in row): s for s, row in enumerate(self.valuations)}

    @classmethod
    def from_dict(cls, transitions: dict, initial=None, targets=()) -> ExplicitMdp:
        """Small hand-written MDPs: ``{state: {action: {succ: prob}}}``.

        States and actions are arbitrary hashable names; the first state key
        is the initial state unless ``initial`` is given.
        """
        names = list(transitions)
        for acts in transitions.values():
            for dist in acts.values():
                for t in dist:
                    if t not in names:
                        names.append(t)
        index = {n: i for i, n in enumerate(names)}
        action_names: list[str] = []
        rows, group_action, exact = [], [], []
        for n in names:
            acts = transitions.get(n) or {"_selfloop": {n: 1}}
            groups = []
            for a, dist in acts.items():
                if a not in action_names:
                    action_names.append(a)
                group_action.append(action_names.index(a))
                items = sorted((index[t], Fraction(p)) for t, p in dist.items())
                if sum(p for _, p in items) != 1:
                    raise ValueError(f"distribution of {a!r} in {n!r} does not sum to 1")
                exact.extend(p for _, p in items)
                groups.append([items])
            rows.append(groups)
        mdp = cls(
            TransitionStructure.from_rows(rows),
            np.array(group_action),
            action_names,
            exact,
            initial=index[names[0] if initial is None else initial],
            valuations=np.arange(len(names)).reshape(-1, 1),
            variable_names=["state"],
        )
        mdp.targets = np.zeros(len(names), dtype=bool)
        for t in targets:
            mdp.targets[index[t]] = True
        mdp.state_names = names
        return mdp

    def to_json(self) -> str:
        return json.dumps(_export(self, None), indent=1)


def valuation_name(variable_names: Sequence[str], valuations: Optional[np.ndarray], s: int) -> str:
    if valuations is None or not variable_names:
        return str(s)
    return ",".join(f"{n}={int(x)}" for n, x in zip(variable_names, valuations[s]))


def frac_str(p: Fraction) -> str:
    return f"{p.numerator}/{p.denominator}"


def _export(model, colors) -> dict:
    st = model.structure
    states = []
    for s in range(st.n_states):
        actions = []
        for g in st.groups(s):
            entry = {"action": model.action_names[model.group_action[g]]}
            choices = []
            for c in st.choices(g):
                lo, hi = st.choice_ptr[c], st.choice_ptr[c + 1]
                dist = {str(int(st.succ[k])): frac_str(model.exact[k]) for k in range(lo, hi)}
                if colors is None:
                    entry["distribution"] = dist
                else:
                    choices.append({"identifiers": [list(r) for r in colors[c].runs()], "distribution": dist})
            if colors is not None:
                entry["classes"] = choices
            actions.append(entry)
        item = {"id": s, "actions": actions}
        if model.valuations is not None and model.variable_names:
            item["valuation"] = {n: int(x) for n, x in zip(model.variable_names, model.valuations[s])}
        if model.targets is not None and model.targets[s]:
            item["target"] = True
        states.append(item)
    return {"initial": int(model.initial), "states": states}
