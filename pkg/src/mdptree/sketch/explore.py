"""Forward exploration of single family members."""

from __future__ import annotations

import warnings
from collections import deque
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from ..model.structure import ExplicitMdp, TransitionStructure
from .program import SELF_LOOP, CompiledSketch, assignment_index, assignment_values
from .syntax import SketchError, SketchProgram

DEFAULT_STATE_CAP = 1_000_000


class StateCapExceeded(SketchError):
    pass


def compiled(program: Union[SketchProgram, CompiledSketch]) -> CompiledSketch:
    """Compiled view of a program, cached on the program object."""
    if isinstance(program, CompiledSketch):
        return program
    cached = getattr(program, "_compiled", None)
    if cached is None:
        cached = CompiledSketch(program)
        program._compiled = cached
    return cached


def instantiate(
    program: Union[SketchProgram, CompiledSketch],
    assignment: Union[int, dict],
    target=None,
    state_cap: int = DEFAULT_STATE_CAP,
) -> ExplicitMdp:
    """Explicit MDP of one family member, states in breadth-first discovery order.

    ``assignment`` is a member index or a ``{hole: value}`` dict. ``target`` is
    an optional hole-free expression marking target states.
    """
    sk = compiled(program)
    index = assignment if isinstance(assignment, int) else assignment_index(sk.program, assignment)
    h = assignment_values(sk.program, index)
    ids = {sk.initial: 0}
    order = [sk.initial]
    queue = deque([sk.initial])
    rows, group_action, exact = [], [], []
    names = sk.action_names
    deadlocks = 0
    while queue:
        v = queue.popleft()
        groups = []
        for a, action in enumerate(sk.actions):
            dist = sk.distribution(action, v, h)
            if dist is None:
                continue
            items = []
            for succ, p in dist.items():
                if succ not in ids:
                    if len(ids) >= state_cap:
                        raise StateCapExceeded(f"more than {state_cap} states")
                    ids[succ] = len(ids)
                    order.append(succ)
                    queue.append(succ)
                items.append((ids[succ], p))
            items.sort()
            groups.append([items])
            group_action.append(a)
            exact.extend(p for _, p in items)
        if not groups:
            deadlocks += 1
            groups.append([[(ids[v], Fraction(1))]])
            group_action.append(len(names) - 1)
            exact.append(Fraction(1))
        rows.append(groups)
    if deadlocks:
        warnings.warn(f"{deadlocks} deadlock state(s) completed with a self-loop", stacklevel=2)
    valuations = np.array(order, dtype=np.int64).reshape(len(order), len(sk.variable_names))
    mdp = ExplicitMdp(
        TransitionStructure.from_rows(rows),
        np.array(group_action, dtype=np.int64),
        list(names),
        exact,
        initial=0,
        valuations=valuations,
        variable_names=list(sk.variable_names),
    )
    if target is not None:
        pred = sk.predicate(target)
        mdp.targets = np.array([bool(pred(tuple(int(x) for x in row), ())) for row in valuations], dtype=bool)
    return mdp


def action_sets(mdp: ExplicitMdp) -> dict[tuple, frozenset]:
    """Available action names per state valuation."""
    return {
        tuple(int(x) for x in mdp.valuations[s]): frozenset(mdp.actions(s)) for s in range(mdp.n_states)
    }


__all__ = ["instantiate", "compiled", "action_sets", "StateCapExceeded", "DEFAULT_STATE_CAP", "SELF_LOOP"]
