from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdptree import kernels
from mdptree.indexset import IndexSet
from mdptree.kernels import OP_MAX
from mdptree.model import ExplicitMdp, induced_mc, restrict
from mdptree.model.structure import TransitionStructure
from mdptree.solver import (
    THRESHOLD_SLACK,
    SolverError,
    StochasticGame,
    chain_matrix,
    chain_values,
    mc_reach,
    mdp_opt_reach,
    meets,
    sg_solve,
    solve,
)

from conftest import load
from oracles import chain_reach, dense_row, game_brute, mdp_brute, random_rows

seeds = st.integers(0, 2**31)


def explicit(rows, targets=()):
    data = {
        s: {f"a{k}": {t: Fraction(round(p * 10), 10) for t, p in choice} for k, choice in enumerate(acts)}
        for s, acts in enumerate(rows)
    }
    return ExplicitMdp.from_dict(data, initial=0, targets=targets)


def test_chain_target_is_initial():
    m = ExplicitMdp.from_dict({"a": {"go": {"b": 1}}, "b": {"go": {"a": 1}}}, targets=["a"])
    assert mc_reach(m, m.targets).value == 1.0


def test_two_step_chain():
    m = ExplicitMdp.from_dict({"s0": {"go": {"sT": "4/5", "sF": "1/5"}}}, targets=["sT"])
    res = mc_reach(m, m.targets)
    assert res.value == pytest.approx(0.8, abs=1e-12)
    assert res.values[m.state_names.index("sF")] == 0.0


@given(seeds)
@settings(max_examples=30)
def test_chain_matches_linear_solve(seed):
    rng = np.random.default_rng(seed)
    rows = [acts[:1] for acts in random_rows(rng, 20, max_actions=1)]
    targets = np.zeros(20, dtype=bool)
    targets[rng.choice(20, size=2, replace=False)] = True
    m = explicit(rows)
    dense = np.array([dense_row(r[0], 20) for r in rows])
    assert np.allclose(mc_reach(m, targets).values, chain_reach(dense, targets), atol=1e-8)


def test_chain_rejects_nondeterminism():
    m = ExplicitMdp.from_dict({"a": {"x": {"a": 1}, "y": {"a": 1}}})
    with pytest.raises(ValueError):
        mc_reach(m, np.array([True]))


def test_two_member_quotient_max(two_member_explicit):
    q = two_member_explicit
    res = mdp_opt_reach(q, q.targets, "max")
    assert res.value == pytest.approx(0.8, abs=1e-9)
    c = res.choices[q.initial]
    assert q.action_label(c) == "alpha[0]"


def test_everything_target():
    m = explicit(random_rows(np.random.default_rng(3), 6), targets=range(6))
    for d in ("max", "min"):
        assert mdp_opt_reach(m, m.targets, d).value == 1.0


@given(seeds, st.sampled_from(["max", "min"]))
@settings(max_examples=40)
def test_mdp_matches_policy_enumeration(seed, direction):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    rows = random_rows(rng, n)
    targets = np.zeros(n, dtype=bool)
    targets[int(rng.integers(0, n))] = True
    res = mdp_opt_reach(explicit(rows), targets, direction)
    assert res.value == pytest.approx(mdp_brute(rows, targets, 0, direction), abs=1e-8)


@given(seeds, st.sampled_from(["max", "min"]))
@settings(max_examples=40)
def test_extracted_policy_realises_value(seed, direction):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    m = explicit(random_rows(rng, n))
    targets = np.zeros(n, dtype=bool)
    targets[n - 1] = True
    res = mdp_opt_reach(m, targets, direction)
    chain = induced_mc(m, res.choices)
    exact = chain_values(chain_matrix(chain.structure, np.arange(n), np.arange(n), np.zeros(n, np.int8), np.ones(n, bool)), targets)
    assert np.allclose(exact, res.values, atol=1e-8)


def random_game(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 11))
    rows = random_rows(rng, n, max_actions=2)
    player1 = rng.random(n) < 0.5
    targets = np.zeros(n, dtype=bool)
    targets[int(rng.integers(0, n))] = True
    return rows, player1, targets


@given(seeds)
@settings(max_examples=40)
def test_game_matches_double_enumeration(seed):
    rows, player1, targets = random_game(seed)
    sup_inf, inf_sup = game_brute(rows, player1, targets, 0)
    assert sup_inf == pytest.approx(inf_sup, abs=1e-9)
    game = StochasticGame(explicit(rows), player1)
    assert sg_solve(game, targets).value == pytest.approx(sup_inf, abs=1e-8)


@given(seeds)
@settings(max_examples=25)
def test_policy_iteration_agrees(seed):
    rows, player1, targets = random_game(seed)
    game = StochasticGame(explicit(rows), player1)
    vi, pi = sg_solve(game, targets), sg_solve(game, targets, method="pi")
    assert np.allclose(vi.values, pi.values, atol=1e-8)


def test_game_without_minimiser_is_mdp():
    rows = random_rows(np.random.default_rng(11), 7)
    m = explicit(rows, targets=[6])
    game = StochasticGame(m, np.ones(7, dtype=bool))
    assert sg_solve(game, m.targets).value == pytest.approx(mdp_opt_reach(m, m.targets).value, abs=1e-12)


def test_game_partition_shape():
    m = explicit(random_rows(np.random.default_rng(1), 4))
    with pytest.raises(ValueError):
        StochasticGame(m, np.ones(3, dtype=bool))
    with pytest.raises(ValueError):
        sg_solve(StochasticGame(m, np.ones(4, dtype=bool)), m.targets, method="magic")


@given(seeds)
@settings(max_examples=20)
def test_iterates_increase_from_zero(seed):
    rows, player1, targets = random_game(seed)
    st_ = TransitionStructure.from_rows([[[c] for c in acts] for acts in rows])
    args = (
        st_.state_ptr, st_.group_ptr, st_.choice_ptr, st_.succ, st_.prob,
        player1, np.full(st_.n_groups, OP_MAX, np.int8), np.ones(st_.n_choices, bool), np.ones(st_.n_groups, bool), targets,
    )
    zero = ~kernels.backend.positive(*args)
    prev = None
    for k in range(1, 30):
        x, _, _ = kernels.backend.iterate(*args, zero, 0.0, k)
        if prev is not None:
            assert (x >= prev - 1e-15).all()
        prev = x


def test_nonconvergence_is_reported():
    m = ExplicitMdp.from_dict({"a": {"go": {"a": "9/10", "t": "1/10"}}}, targets=["t"])
    with pytest.raises(SolverError):
        mdp_opt_reach(m, m.targets, max_iter=5)


@given(st.integers(1, 2**12 - 1))
@settings(max_examples=40)
def test_restriction_never_raises_max(bits):
    _, _, q = load_grid()
    sub = IndexSet(bits, 12)
    full = mdp_opt_reach(q, q.targets).value
    assert mdp_opt_reach(restrict(q, sub), q.targets).value <= full + 1e-9


_grid = []


def load_grid():
    if not _grid:
        from mdptree import families

        _grid.append(load(families.GRID_SKETCH))
    return _grid[0]


def test_threshold_slack():
    assert meets(0.5 - THRESHOLD_SLACK / 2, 0.5)
    assert not meets(0.5 - 2 * THRESHOLD_SLACK, 0.5)


def test_solve_without_extraction():
    m = explicit(random_rows(np.random.default_rng(5), 5), targets=[4])
    res = solve(m.structure, 0, m.targets, True, OP_MAX, extract=False)
    assert (res.state_group == -1).all()
