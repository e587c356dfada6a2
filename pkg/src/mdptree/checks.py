"""Certificates shared by synthesis, post-processing and verification."""

from __future__ import annotations

import numpy as np

from .kernels import OP_MIN
from .model.quotient import Restriction, reachable_fragment
from .solver import SolveResult, meets, mdp_opt_reach, solve


def policy_group_mask(view: Restriction, actions: np.ndarray) -> np.ndarray:
    st = view.quotient.structure
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (st.n_states,) or np.any(st.group_state[actions] != np.arange(st.n_states)):
        raise ValueError("policy must pick an available action in every state")
    mask = np.zeros(st.n_groups, dtype=bool)
    mask[actions] = True
    return mask


def policy_min_value(view: Restriction, actions: np.ndarray, targets: np.ndarray) -> SolveResult:
    """Reachability under the base policy when the class choice is adversarial."""
    st = view.quotient.structure
    return solve(
        st,
        view.quotient.initial,
        targets,
        True,
        np.full(st.n_groups, OP_MIN, dtype=np.int8),
        choice_mask=view.choice_mask,
        group_mask=policy_group_mask(view, actions),
    )


def test_policy_robust(view: Restriction, actions: np.ndarray, targets: np.ndarray, threshold: float) -> bool:
    """True iff the base policy wins for every member of the restriction."""
    return meets(policy_min_value(view, actions, targets).value, threshold)


def test_unsat(view: Restriction, targets: np.ndarray, threshold: float) -> tuple[bool, SolveResult]:
    """True iff even the quotient's best policy stays below the threshold."""
    res = mdp_opt_reach(view, targets, "max")
    return not meets(res.value, threshold), res


def policy_fragment(view: Restriction, actions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """States reachable under the base policy through any surviving class."""
    st = view.quotient.structure
    mask = view.choice_mask & policy_group_mask(view, actions)[st.choice_group]
    return reachable_fragment(view.quotient, stop=targets, choice_mask=mask)


# keep pytest from collecting these when tests import them by name
test_policy_robust.__test__ = False
test_unsat.__test__ = False


def default_actions(structure) -> np.ndarray:
    """Lowest-index action of every state."""
    return structure.state_ptr[:-1].copy()


__all__ = [
    "policy_fragment",
    "policy_group_mask",
    "policy_min_value",
    "test_policy_robust",
    "test_unsat",
    "default_actions",
]
