"""Quotient MDPs: one shared state space, actions split into identifier classes."""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from ..indexset import IndexSet, mask_to_bits
from .structure import ExplicitMdp, TransitionStructure, _export, valuation_name


class FamilyError(ValueError):
    """The members of a family disagree on action availability."""


@dataclass(eq=False)
class QuotientMdp:
    """Shared-state-space MDP whose choices carry identifier classes.

    Groups are (state, base action) pairs; the choices of a group are the
    identifier classes of that pair, ordered by their smallest member.
    ``colors[c]`` is the class of choice ``c`` as an :class:`IndexSet`.
    """

    structure: TransitionStructure
    group_action: np.ndarray
    action_names: list[str]
    exact: list[Fraction]
    colors: list[IndexSet]
    family_size: int
    initial: int = 0
    valuations: Optional[np.ndarray] = None
    variable_names: list[str] = field(default_factory=list)
    targets: Optional[np.ndarray] = None
    state_names: Optional[list] = None
    _packed: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.group_action = np.asarray(self.group_action, dtype=np.int64)
        if len(self.colors) != self.structure.n_choices:
            raise ValueError("one color per choice required")

    @property
    def n_states(self) -> int:
        return self.structure.n_states

    @property
    def full(self) -> IndexSet:
        return IndexSet.full(self.family_size)

    @property
    def packed_colors(self) -> np.ndarray:
        """Colors as a ``(n_choices, ceil(|F|/8))`` little-endian bit matrix."""
        if self._packed is None:
            nbytes = (self.family_size + 7) // 8
            out = np.zeros((len(self.colors), nbytes), dtype=np.uint8)
            for c, col in enumerate(self.colors):
                out[c] = np.frombuffer(col.bits.to_bytes(nbytes, "little"), dtype=np.uint8)
            self._packed = out
        return self._packed

    def member_choices(self, i: int) -> np.ndarray:
        """Choice mask selecting, in every group, the class containing member ``i``."""
        return ((self.packed_colors[:, i >> 3] >> (i & 7)) & 1).astype(bool)

    def state_name(self, s: int) -> str:
        if self.state_names is not None:
            return str(self.state_names[s])
        return valuation_name(self.variable_names, self.valuations, s)

    def action_label(self, c: int) -> str:
        g = self.structure.choice_group[c]
        return f"{self.action_names[self.group_action[g]]}{list(self.colors[c])}"

    def to_json(self) -> str:
        return json.dumps(_export(self, self.colors), indent=1)

    def member(self, i: int) -> ExplicitMdp:
        """The member MDP ``i`` on the shared state space."""
        st = self.structure
        pick = self.member_choices(i)
        rows, exact = [], []
        for s in range(st.n_states):
            groups = []
            for g in st.groups(s):
                c = next(c for c in st.choices(g) if pick[c])
                lo, hi = st.choice_ptr[c], st.choice_ptr[c + 1]
                groups.append([list(zip(st.succ[lo:hi].tolist(), self.exact[lo:hi]))])
                exact.extend(self.exact[lo:hi])
            rows.append(groups)
        mdp = ExplicitMdp(
            TransitionStructure.from_rows(rows),
            self.group_action.copy(),
            list(self.action_names),
            exact,
            initial=self.initial,
            valuations=self.valuations,
            variable_names=list(self.variable_names),
            targets=self.targets,
        )
        if self.state_names is not None:
            mdp.state_names = self.state_names
        return mdp

    @classmethod
    def from_members(cls, members: Sequence[dict], initial=None, targets=()) -> QuotientMdp:
        """Quotient of hand-written members ``{state: {action: {succ: prob}}}``.

        Every member must offer the same actions in every state named by any
        member. Member ``k`` gets identifier ``k``.
        """
        names: list = []
        for m in members:
            for s, acts in m.items():
                if s not in names:
                    names.append(s)
                for dist in acts.values():
                    for t in dist:
                        if t not in names:
                            names.append(t)
        index = {n: i for i, n in enumerate(names)}
        n = len(members)
        action_names: list[str] = []
        rows, group_action, exact, colors = [], [], [], []
        for s in names:
            avail = [tuple(m.get(s, {})) for m in members]
            if any(set(a) != set(avail[0]) for a in avail):
                raise FamilyError(f"members disagree on the actions of state {s!r}")
            acts = list(avail[0]) or ["_selfloop"]
            groups = []
            for a in acts:
                if a not in action_names:
                    action_names.append(a)
                group_action.append(action_names.index(a))
                classes: dict[tuple, list[int]] = {}
                for k, m in enumerate(members):
                    dist = m.get(s, {}).get(a, {s: 1})
                    key = tuple(sorted((index[t], Fraction(p)) for t, p in dist.items() if Fraction(p) != 0))
                    if sum(p for _, p in key) != 1:
                        raise ValueError(f"distribution of {a!r} in {s!r} does not sum to 1")
                    classes.setdefault(key, []).append(k)
                choices = []
                for key, ids in sorted(classes.items(), key=lambda kv: kv[1][0]):
                    choices.append(list(key))
                    exact.extend(p for _, p in key)
                    colors.append(IndexSet.from_indices(ids, n))
                groups.append(choices)
            rows.append(groups)
        q = cls(
            TransitionStructure.from_rows(rows),
            np.array(group_action),
            action_names,
            exact,
            colors,
            n,
            initial=index[names[0] if initial is None else initial],
            state_names=names,
        )
        q.targets = np.zeros(len(names), dtype=bool)
        for t in targets:
            q.targets[index[t]] = True
        return q


# ---------------------------------------------------------------- construction from sketches


def build_quotient(program, target=None, state_cap: Optional[int] = None) -> QuotientMdp:
    """Quotient MDP of the family described by a sketch.

    The state space is everything reachable from the initial valuation when
    every step may use any member's transition. Classes are computed exactly
    by grouping members with equal rational successor distributions.
    """
    from ..sketch.explore import DEFAULT_STATE_CAP, StateCapExceeded, compiled
    from ..sketch.program import SELF_LOOP, hole_grid

    sk = compiled(program)
    prog = sk.program
    cap = DEFAULT_STATE_CAP if state_cap is None else state_cap
    grid = hole_grid(prog)
    shape = tuple(len(h.domain) for h in prog.holes)
    n = prog.family_size
    radix = [int(r) for r in sk.radix]
    action_names = sk.action_names

    init_code = sk.encode(sk.initial)
    ids = {init_code: 0}
    codes = [init_code]
    queue = deque([sk.initial])
    rows, group_action, exact, colors = [], [], [], []
    deadlocks = 0

    def state_id(code: int) -> int:
        sid = ids.get(code)
        if sid is None:
            if len(ids) >= cap:
                raise StateCapExceeded(f"more than {cap} quotient states")
            sid = ids[code] = len(ids)
            codes.append(code)
            queue.append(sk.decode(code))
        return sid

    while queue:
        v = queue.popleft()
        groups = []
        for a, action in enumerate(sk.actions):
            classes = _action_classes(sk, action, v, grid, shape, n, radix)
            if classes is None:
                continue
            choices = []
            for dist, mask in classes:
                row = sorted((state_id(code), p) for code, p in dist)
                choices.append(row)
                exact.extend(p for _, p in row)
                colors.append(IndexSet(mask_to_bits(mask), n))
            groups.append(choices)
            group_action.append(a)
        if not groups:
            deadlocks += 1
            sid = ids[sk.encode(v)]
            groups.append([[(sid, Fraction(1))]])
            group_action.append(action_names.index(SELF_LOOP))
            exact.append(Fraction(1))
            colors.append(IndexSet.full(n))
        rows.append(groups)
    if deadlocks:
        import warnings

        warnings.warn(f"{deadlocks} deadlock state(s) completed with a self-loop", stacklevel=2)

    valuations = np.array([sk.decode(c) for c in codes], dtype=np.int64).reshape(len(codes), len(sk.variable_names))
    q = QuotientMdp(
        TransitionStructure.from_rows(rows),
        np.array(group_action, dtype=np.int64),
        list(action_names),
        exact,
        colors,
        n,
        initial=0,
        valuations=valuations,
        variable_names=list(sk.variable_names),
    )
    if target is not None:
        pred = sk.predicate(target)
        q.targets = np.array([bool(pred(tuple(int(x) for x in row), ())) for row in valuations], dtype=bool)
    q.program = prog
    return q


def _as_member_array(value, shape, n) -> np.ndarray:
    return np.broadcast_to(np.asarray(value), shape).reshape(n)


def _action_classes(sk, action, v, grid, shape, n, radix):
    """Identifier classes of ``action`` at valuation ``v``.

    Returns ``None`` if no member enables the action, else a list of
    ``(distribution, member_mask)`` with distributions as sorted
    ``((successor_code, prob), ...)`` tuples, ordered by smallest member.
    """
    from ..sketch.syntax import SketchError

    enabled_cmds = []
    overall = np.ones(n, dtype=bool)
    for commands in action.participants:
        masks = [_as_member_array(c.guard(v, grid), shape, n).astype(bool) for c in commands]
        count = np.sum(masks, axis=0) if masks else np.zeros(n, dtype=np.int64)
        overall &= count > 0
        enabled_cmds.append((commands, masks, count))
    if not overall.any():
        return None
    if not overall.all():
        i = int(np.flatnonzero(~overall)[0])
        j = int(np.flatnonzero(overall)[0])
        raise FamilyError(
            f"action {action.name!r} at {sk.describe(v)} is enabled for member {j} but not for member {i}"
        )
    per_participant = []
    for commands, masks, count in enabled_cmds:
        if (count > 1).any():
            both = [c for c, m in zip(commands, masks) if m[int(np.flatnonzero(count > 1)[0])]]
            lines = ", ".join(str(c.line) for c in both)
            raise SketchError(
                f"commands on lines {lines} with action {action.name!r} are enabled together in module "
                f"{both[0].module!r} at {sk.describe(v)}"
            )
        per_participant.append([(c, m) for c, m in zip(commands, masks) if m.any()])

    base = int(np.dot(np.asarray(v, dtype=np.int64) - sk.lo, sk.radix))
    buckets: dict[tuple, np.ndarray] = {}
    for combo in itertools.product(*per_participant):
        mask = np.ones(n, dtype=bool)
        for _, m in combo:
            mask &= m
        members = np.flatnonzero(mask)
        if members.size == 0:
            continue
        branch_lists = [_vector_branches(sk, cmd, v, grid, shape, n, members) for cmd, _ in combo]
        probs, deltas = [], []
        for parts in itertools.product(*branch_lists):
            p = Fraction(1)
            delta = np.zeros(members.size, dtype=np.int64)
            for q, d in parts:
                p *= q
                delta = delta + d
            if p == 0:
                continue
            probs.append(p)
            deltas.append(delta)
        table = np.vstack(deltas) + base  # branches x members
        columns, inverse = np.unique(table.T, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        for u, col in enumerate(columns):
            dist: dict[int, Fraction] = {}
            for code, p in zip(col.tolist(), probs):
                dist[code] = dist.get(code, Fraction(0)) + p
            key = tuple(sorted(dist.items()))
            selected = members[inverse == u]
            bucket = buckets.get(key)
            if bucket is None:
                bucket = buckets[key] = np.zeros(n, dtype=bool)
            bucket[selected] = True
    return sorted(buckets.items(), key=lambda kv: int(np.argmax(kv[1])))


def _vector_branches(sk, cmd, v, grid, shape, n, members):
    """Branches of ``cmd`` as ``(prob, code_delta_per_member)`` pairs."""
    from ..sketch.syntax import SketchError

    out = []
    total = Fraction(0)
    for prob_fn, assigns in cmd.updates:
        p = Fraction(1) if prob_fn is None else prob_fn(v, grid)
        if isinstance(p, (bool, np.ndarray)) or not isinstance(p, (int, Fraction)):
            raise SketchError(f"probability on line {cmd.line} is not a number", cmd.line)
        p = Fraction(p)
        if p < 0 or p > 1:
            raise SketchError(f"probability {p} on line {cmd.line} outside [0, 1]", cmd.line)
        total += p
        delta = np.zeros(members.size, dtype=np.int64)
        for k, fn in assigns:
            raw = fn(v, grid)
            if isinstance(raw, Fraction):
                if raw.denominator != 1:
                    raise SketchError(f"non-integer value assigned to {sk.variable_names[k]!r}", cmd.line)
                raw = int(raw)
            vals = _as_member_array(raw, shape, n)[members]
            vals = vals.astype(bool).astype(np.int64) if sk.is_bool[k] else vals.astype(np.int64)
            bad = (vals < sk.lo[k]) | (vals > sk.hi[k])
            if bad.any():
                val = int(vals[np.flatnonzero(bad)[0]])
                raise SketchError(
                    f"update on line {cmd.line} sets {sk.variable_names[k]}={val}, outside "
                    f"[{sk.lo[k]}..{sk.hi[k]}] at {sk.describe(v)}",
                    cmd.line,
                )
            delta = delta + (vals - v[k]) * sk.radix[k]
        out.append((p, delta))
    if total != 1:
        raise SketchError(f"probabilities of the command on line {cmd.line} sum to {total}, not 1", cmd.line)
    return out


# ---------------------------------------------------------------- views


class Restriction:
    """The quotient seen through a subfamily: only classes meeting it survive."""

    __slots__ = ("quotient", "subset", "choice_mask")

    def __init__(self, quotient: QuotientMdp, subset: IndexSet, choice_mask: np.ndarray):
        self.quotient = quotient
        self.subset = subset
        self.choice_mask = choice_mask

    def effective(self, c: int) -> IndexSet:
        return self.quotient.colors[c] & self.subset

    def surviving(self, g: int) -> list[int]:
        return [c for c in self.quotient.structure.choices(g) if self.choice_mask[c]]

    def restrict(self, subset: IndexSet) -> Restriction:
        return restrict(self.quotient, self.subset & subset)


def restrict(quotient: QuotientMdp, subset: IndexSet) -> Restriction:
    if subset.universe != quotient.family_size:
        raise ValueError("subset is over a different family")
    if not subset:
        raise ValueError("cannot restrict to an empty subfamily")
    if subset.bits == (1 << quotient.family_size) - 1:
        mask = np.ones(quotient.structure.n_choices, dtype=bool)
    elif len(subset) == 1:
        mask = quotient.member_choices(subset.min())
    else:
        nbytes = (quotient.family_size + 7) // 8
        packed = np.frombuffer(subset.bits.to_bytes(nbytes, "little"), dtype=np.uint8)
        mask = (quotient.packed_colors & packed).any(axis=1)
    return Restriction(quotient, subset, mask)


@dataclass(eq=False)
class MarkovChain:
    structure: TransitionStructure
    initial: int = 0


def induced_mc(model: Union[ExplicitMdp, QuotientMdp, Restriction], choices: np.ndarray) -> MarkovChain:
    """Chain obtained by fixing choice ``choices[s]`` in every state ``s``."""
    mask = None
    if isinstance(model, Restriction):
        mask = model.choice_mask
        model = model.quotient
    st = model.structure
    choices = np.asarray(choices, dtype=np.int64)
    if choices.shape != (st.n_states,):
        raise ValueError("policy must assign a choice to every state")
    if np.any(choices < 0) or np.any(choices >= st.n_choices):
        raise ValueError("policy selects an unknown action")
    owner = st.group_state[st.choice_group[choices]]
    if np.any(owner != np.arange(st.n_states)):
        s = int(np.flatnonzero(owner != np.arange(st.n_states))[0])
        raise ValueError(f"policy selects an action unavailable in state {s}")
    if mask is not None and not mask[choices].all():
        s = int(np.flatnonzero(~mask[choices])[0])
        raise ValueError(f"policy selects an action removed by the restriction in state {s}")
    lo = st.choice_ptr[choices]
    hi = st.choice_ptr[choices + 1]
    counts = hi - lo
    idx = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]) if st.n_states else np.zeros(0, dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(counts)])
    unit = np.arange(st.n_states + 1)
    return MarkovChain(TransitionStructure(unit, unit, ptr, st.succ[idx], st.prob[idx]), model.initial)


def reachable_fragment(
    model, choices: Optional[np.ndarray] = None, stop: Optional[np.ndarray] = None, choice_mask=None
) -> np.ndarray:
    """States reachable from the initial state.

    With ``choices`` only the chosen choice of each state is followed; with
    ``choice_mask`` every allowed choice is followed. States in ``stop`` are
    included but not expanded.
    """
    if isinstance(model, Restriction):
        choice_mask = model.choice_mask if choice_mask is None else choice_mask
        model = model.quotient
    st = model.structure
    seen = np.zeros(st.n_states, dtype=bool)
    seen[model.initial] = True
    queue = deque([model.initial])
    while queue:
        s = queue.popleft()
        if stop is not None and stop[s]:
            continue
        if choices is not None:
            picked = [int(choices[s])]
        else:
            picked = [c for g in st.groups(s) for c in st.choices(g) if choice_mask is None or choice_mask[c]]
        for c in picked:
            for t in st.succ[st.choice_ptr[c] : st.choice_ptr[c + 1]]:
                if not seen[t]:
                    seen[t] = True
                    queue.append(int(t))
    return seen
