"""Reachability solvers for chains, MDPs and turn-based stochastic games."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .kernels import OP_MAX, OP_MEAN, OP_MIN
from .model.quotient import MarkovChain, QuotientMdp, Restriction
from .model.structure import ExplicitMdp, TransitionStructure

TOLERANCE = 1e-12
OPTIMALITY = 1e-8
THRESHOLD_SLACK = 1e-6
MAX_ITERATIONS = 1_000_000


class SolverError(RuntimeError):
    """Value iteration hit its iteration cap before converging."""


@dataclass
class SolveResult:
    """Result of a reachability solve.

    ``state_group[s]`` is the group picked in state ``s`` (the base action,
    or Player 1's move); ``group_choice[g]`` is the choice picked in group
    ``g`` (the identifier class, or Player 2's move), -1 where the group
    averages its choices.
    """

    value: float
    values: np.ndarray
    state_group: np.ndarray
    group_choice: np.ndarray
    iterations: int
    converged: bool = True

    @property
    def choices(self) -> np.ndarray:
        """One choice per state: ``group_choice[state_group[s]]``."""
        return self.group_choice[self.state_group]


@dataclass(eq=False)
class StochasticGame:
    """Turn-based game on an explicit MDP; ``player1[s]`` marks maximiser states."""

    mdp: ExplicitMdp
    player1: np.ndarray

    def __post_init__(self):
        self.player1 = np.asarray(self.player1, dtype=bool)
        if self.player1.shape != (self.mdp.n_states,):
            raise ValueError("player partition must cover every state")

    @property
    def structure(self) -> TransitionStructure:
        return self.mdp.structure

    @property
    def initial(self) -> int:
        return self.mdp.initial

    def solver_view(self):
        st = self.structure
        return st, self.initial, self.player1, np.full(st.n_groups, OP_MAX, dtype=np.int8), None


def _unpack(model):
    """(structure, initial, choice_mask) of any model view."""
    if isinstance(model, Restriction):
        return model.quotient.structure, model.quotient.initial, model.choice_mask
    if isinstance(model, TransitionStructure):
        return model, 0, None
    return model.structure, model.initial, None


def solve(
    structure: TransitionStructure,
    initial: int,
    targets: np.ndarray,
    state_max: np.ndarray,
    group_op: np.ndarray,
    choice_mask: Optional[np.ndarray] = None,
    group_mask: Optional[np.ndarray] = None,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITERATIONS,
    extract: bool = True,
) -> SolveResult:
    """Value iteration with zero-state pinning and optimal-choice extraction."""
    st = structure
    targets = np.ascontiguousarray(targets, dtype=np.bool_)
    state_max = np.ascontiguousarray(np.broadcast_to(state_max, (st.n_states,)), dtype=np.bool_)
    group_op = np.ascontiguousarray(np.broadcast_to(group_op, (st.n_groups,)), dtype=np.int8)
    choice_mask = np.ones(st.n_choices, dtype=np.bool_) if choice_mask is None else np.ascontiguousarray(choice_mask, dtype=np.bool_)
    group_mask = np.ones(st.n_groups, dtype=np.bool_) if group_mask is None else np.ascontiguousarray(group_mask, dtype=np.bool_)
    be = kernels.backend
    arrays = (st.state_ptr, st.group_ptr, st.choice_ptr, st.succ, st.prob, state_max, group_op, choice_mask, group_mask, targets)
    zero = ~be.positive(*arrays)
    values, iterations, converged = be.iterate(*arrays, zero, tol, max_iter)
    if not converged:
        raise SolverError(f"value iteration did not converge within {max_iter} iterations")
    if extract:
        state_group, group_choice = be.extract(*arrays, zero, values, OPTIMALITY)
    else:
        state_group = np.full(st.n_states, -1, dtype=np.int64)
        group_choice = np.full(st.n_groups, -1, dtype=np.int64)
    return SolveResult(float(values[initial]), values, state_group, group_choice, int(iterations), converged)


def mc_reach(chain, targets: np.ndarray, **kw) -> SolveResult:
    """Reachability probabilities of a Markov chain (one choice per state)."""
    st, initial, _ = _unpack(chain)
    if st.n_choices != st.n_states:
        raise ValueError("a Markov chain has exactly one choice per state")
    return solve(st, initial, targets, True, OP_MAX, **kw)


def mdp_opt_reach(model, targets: np.ndarray, direction: str = "max", **kw) -> SolveResult:
    """Optimal reachability over all choices of an MDP, quotient or restriction."""
    if direction not in ("max", "min"):
        raise ValueError("direction must be 'max' or 'min'")
    st, initial, mask = _unpack(model)
    op = OP_MAX if direction == "max" else OP_MIN
    return solve(st, initial, targets, direction == "max", op, choice_mask=mask, **kw)


def sg_solve(game, targets: np.ndarray, method: str = "vi", **kw) -> SolveResult:
    """Player 1 maximises, Player 2 minimises the probability to reach ``targets``."""
    st, initial, state_max, group_op, mask = game.solver_view()
    if method == "vi":
        return solve(st, initial, targets, state_max, group_op, choice_mask=mask, **kw)
    if method == "pi":
        return policy_iteration(st, initial, targets, state_max, group_op, mask)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- exact evaluation


def chain_matrix(st: TransitionStructure, state_group, group_choice, group_op, choice_mask) -> sp.csr_matrix:
    """Transition matrix after fixing every decision; averaged groups are mixed."""
    rows, cols, vals = [], [], []
    for s in range(st.n_states):
        g = int(state_group[s])
        if g < 0:
            rows.append(s), cols.append(s), vals.append(1.0)
            continue
        if group_op[g] == OP_MEAN:
            picked = [c for c in st.choices(g) if choice_mask[c]]
        else:
            picked = [int(group_choice[g])]
        w = 1.0 / len(picked)
        for c in picked:
            succ, prob = st.row(c)
            rows.extend([s] * len(succ))
            cols.extend(succ.tolist())
            vals.extend((w * prob).tolist())
    n = st.n_states
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def chain_values(matrix: sp.csr_matrix, targets: np.ndarray) -> np.ndarray:
    """Exact-up-to-rounding reachability values by a sparse linear solve."""
    n = matrix.shape[0]
    targets = np.asarray(targets, dtype=bool)
    # states that can reach a target at all
    reach = targets.copy()
    back = matrix.T.tocsr()
    frontier = list(np.flatnonzero(targets))
    while frontier:
        t = frontier.pop()
        for s in back.indices[back.indptr[t] : back.indptr[t + 1]]:
            if not reach[s]:
                reach[s] = True
                frontier.append(s)
    unknown = reach & ~targets
    x = targets.astype(float)
    idx = np.flatnonzero(unknown)
    if idx.size:
        sub = matrix[idx][:, idx]
        rhs = np.asarray(matrix[idx][:, np.flatnonzero(targets)].sum(axis=1)).ravel()
        a = sp.identity(idx.size, format="csc") - sub.tocsc()
        x[idx] = spla.spsolve(a, rhs) if idx.size > 1 else rhs / a.toarray()[0, 0]
    return np.clip(x, 0.0, 1.0)


def _decision_values(st, x, group_op, choice_mask):
    q = np.add.reduceat(st.prob * x[st.succ], st.choice_ptr[:-1])
    gv = np.zeros(st.n_groups)
    for g in range(st.n_groups):
        allowed = [q[c] for c in st.choices(g) if choice_mask[c]]
        if not allowed:
            gv[g] = np.nan
        elif group_op[g] == OP_MIN:
            gv[g] = min(allowed)
        elif group_op[g] == OP_MAX:
            gv[g] = max(allowed)
        else:
            gv[g] = sum(allowed) / len(allowed)
    return q, gv


def policy_iteration(st, initial, targets, state_max, group_op, choice_mask=None, max_rounds: int = 10_000) -> SolveResult:
    """Strategy improvement with exact evaluation, as an independent cross-check.

    Player 1 starts from a strategy reaching the target with positive
    probability wherever possible and only switches on strict improvement;
    Player 2's best response is found by an inner improvement loop from the
    same kind of start.
    """
    targets = np.asarray(targets, dtype=bool)
    state_max = np.broadcast_to(np.asarray(state_max, dtype=bool), (st.n_states,)).copy()
    group_op = np.broadcast_to(np.asarray(group_op, dtype=np.int8), (st.n_groups,)).copy()
    choice_mask = np.ones(st.n_choices, dtype=bool) if choice_mask is None else np.asarray(choice_mask, dtype=bool)
    for g in range(st.n_groups):
        if group_op[g] == OP_MAX and sum(1 for c in st.choices(g) if choice_mask[c]) > 1:
            raise ValueError("policy iteration supports maximising decisions at states only")
    base = solve(st, initial, targets, state_max, group_op, choice_mask)
    sigma1 = base.state_group.copy()
    eps = 1e-12
    rounds = 0
    while True:
        rounds += 1
        if rounds > max_rounds:
            raise SolverError("policy iteration did not stabilise")
        x, sigma_min_states, sigma2 = _best_response(st, targets, state_max, group_op, choice_mask, sigma1, base)
        _, gv = _decision_values(st, x, group_op, choice_mask)
        changed = False
        for s in np.flatnonzero(state_max & ~targets):
            best = sigma1[s]
            for g in st.groups(s):
                if not np.isnan(gv[g]) and gv[g] > gv[best] + eps and gv[g] > x[s] + eps:
                    if best == sigma1[s] or gv[g] > gv[best] + eps:
                        best = g
            if best != sigma1[s]:
                sigma1[s] = best
                changed = True
        if not changed:
            state_group = np.where(state_max, sigma1, sigma_min_states)
            return SolveResult(float(x[initial]), x, state_group, sigma2, rounds, True)


def _best_response(st, targets, state_max, group_op, choice_mask, sigma1, base):
    """Player 2's optimal reply to a fixed Player-1 strategy, exactly evaluated."""
    group_mask = np.zeros(st.n_groups, dtype=bool)
    for s in range(st.n_states):
        if state_max[s]:
            group_mask[sigma1[s]] = True
        else:
            group_mask[list(st.groups(s))] = True
    fixed = solve(st, 0, targets, state_max, group_op, choice_mask, group_mask)
    sig_states = fixed.state_group.copy()
    sig_groups = fixed.group_choice.copy()
    eps = 1e-12
    for _ in range(10_000):
        state_group = np.where(state_max, sigma1, sig_states)
        x = chain_values(chain_matrix(st, state_group, sig_groups, group_op, choice_mask), targets)
        q, gv = _decision_values(st, x, group_op, choice_mask)
        changed = False
        for g in range(st.n_groups):
            if group_op[g] != OP_MIN or not group_mask[g]:
                continue
            cur = sig_groups[g]
            for c in st.choices(g):
                if choice_mask[c] and q[c] < q[cur] - eps:
                    cur = c
            if cur != sig_groups[g]:
                sig_groups[g] = cur
                changed = True
        for s in np.flatnonzero(~state_max & ~targets):
            cur = sig_states[s]
            for g in st.groups(s):
                if not np.isnan(gv[g]) and gv[g] < gv[cur] - eps:
                    cur = g
            if cur != sig_states[s]:
                sig_states[s] = cur
                changed = True
        if not changed:
            return x, sig_states, sig_groups
    raise SolverError("best-response iteration did not stabilise")


def meets(value: float, threshold: float) -> bool:
    """Threshold check with the documented slack."""
    return value >= threshold - THRESHOLD_SLACK
