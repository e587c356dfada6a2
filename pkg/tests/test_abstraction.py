import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdptree import families
from mdptree.abstraction import (
    build_game,
    chosen_classes,
    consistent_ids_game,
    consistent_ids_quotient,
)
from mdptree.indexset import IndexSet
from mdptree.model import restrict
from mdptree.solver import mdp_opt_reach

from conftest import load
from oracles import chain_reach, mdp_brute


def action_at(q, res, name):
    s = next(k for k in range(q.n_states) if q.state_name(k) == name)
    return q.action_names[q.group_action[res.state_group[s]]]


def test_two_member_game(two_member):
    # alpha guarantees min(0.8, 0.6); beta only min(0.5 * 0.7, 0.7)
    _, _, q = two_member
    game = build_game(q)
    res = game.solve(q.targets)
    assert res.value == pytest.approx(0.6, abs=1e-9)
    assert action_at(q, res, "s=0") == "alpha"
    # the adversary answers alpha with the second member
    assert consistent_ids_game(game, res.state_group, res.group_choice, q.targets) == IndexSet.from_indices([1], 2)


def test_trap_game_value_zero(trap):
    _, _, q = trap
    game = build_game(q)
    res = game.solve(q.targets)
    assert res.value == 0.0
    # alpha at s0 is answered by the class {H=1, H=2} leading to the dead end
    assert action_at(q, res, "s=0") == "alpha"
    ids = consistent_ids_game(game, res.state_group, res.group_choice, q.targets)
    assert ids == IndexSet.from_indices([0, 1], 3)


def test_all_scope_sees_unreachable_disagreement(trap):
    _, _, q = trap
    game = build_game(q)
    res = game.solve(q.targets)
    assert consistent_ids_game(game, res.state_group, res.group_choice, q.targets, scope="all") == IndexSet.empty(3)
    at_s1 = [color for g, color in chosen_classes(game, res.state_group, res.group_choice, q.targets, "all")
             if q.state_name(q.structure.group_state[g]) == "s=1"]
    assert sorted(map(list, at_s1)) == [[0], [1]]
    with pytest.raises(ValueError):
        chosen_classes(game, res.state_group, res.group_choice, q.targets, "nearby")


def test_quotient_consistency(two_member):
    _, _, q = two_member
    res = mdp_opt_reach(q, q.targets)
    assert consistent_ids_quotient(restrict(q, q.full), res.choices, q.targets) == IndexSet.from_indices([0], 2)


def test_player2_states_follow_restriction(trap):
    _, _, q = trap
    assert len(build_game(q).player2_states) == q.structure.n_groups
    sub = build_game(q, restrict(q, IndexSet.from_indices([2], 3)))
    assert len(sub.player2_states) == q.structure.n_groups
    for g in sub.player2_states:
        assert all(color == IndexSet.from_indices([2], 3) for _, color in sub.player2_actions(g))
    with pytest.raises(ValueError):
        build_game(q, restrict(load(families.TRAP_SKETCH)[2], q.full))


def test_dot_shapes(two_member):
    _, _, q = two_member
    dot = build_game(q).to_dot(q.targets)
    assert dot.startswith("digraph game {")
    assert dot.count("shape=circle") == q.n_states
    assert dot.count("shape=box") == q.structure.n_groups
    assert "peripheries=2" in dot
    with pytest.raises(ValueError):
        build_game(q).to_dot(limit=3)


def test_singleton_game_is_member_mdp(grid):
    _, _, q = grid
    for i in (0, 5, 11):
        view = restrict(q, IndexSet.from_indices([i], 12))
        assert build_game(q, view).solve(q.targets).value == pytest.approx(mdp_opt_reach(view, q.targets).value, abs=1e-9)


def _member_chain(q, i, state_group):
    """Dense chain of member i under a base policy, read off the class colors."""
    st_ = q.structure
    n = q.n_states
    m = np.zeros((n, n))
    for s in range(n):
        g = state_group[s]
        c = next(c for c in st_.choices(g) if i in q.colors[c])
        for t, p in zip(*st_.row(c)):
            m[s, t] += p
    return m


def _member_rows(q, i):
    st_ = q.structure
    rows = []
    for s in range(q.n_states):
        acts = []
        for g in st_.groups(s):
            c = next(c for c in st_.choices(g) if i in q.colors[c])
            acts.append(list(zip(*st_.row(c))))
        rows.append(acts)
    return rows


@given(st.integers(0, 2**31))
@settings(max_examples=15)
def test_game_bounds_and_consistent_members(seed):
    rng = np.random.default_rng(seed)
    _, _, q = load(families.random_sketch(rng, max_states=6, max_members=6, max_actions=2))
    game = build_game(q)
    res = game.solve(q.targets)
    ids = consistent_ids_game(game, res.state_group, res.group_choice, q.targets)
    for i in range(q.family_size):
        guaranteed = chain_reach(_member_chain(q, i, res.state_group), q.targets)[q.initial]
        # the strategy is robust: no member does worse than the game value
        assert guaranteed >= res.value - 1e-8
        # and no member's optimum lies below the game value
        assert mdp_brute(_member_rows(q, i), q.targets, q.initial) >= res.value - 1e-8
        if i in ids:
            assert guaranteed == pytest.approx(res.value, abs=1e-8)
