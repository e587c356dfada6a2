import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdptree import families
from mdptree.checks import policy_min_value
from mdptree.indexset import IndexSet
from mdptree.model import restrict
from mdptree.policytree import POLICY, UNKNOWN, export_json, verify_tree
from mdptree.solver import meets
from mdptree.synthesis import (
    METHODS,
    SPLITS,
    StateCapError,
    SynthesisConfig,
    baseline_all_in_one,
    baseline_one_by_one,
    build_tree,
    create_split,
    find_robust_random,
    synthesize,
)

from conftest import load
from oracles import mdp_brute

CONFIGS = [(m, s) for m in METHODS for s in SPLITS if m == "game" or s == "pessimistic"]


def run(q, threshold, **kw):
    return synthesize(q, q.targets, SynthesisConfig(threshold, **kw))


# two members: best values 0.8 (alpha) and 0.7 (beta); alpha guarantees 0.6


def test_two_member_single_policy(two_member):
    _, _, q = two_member
    tree, stats = run(q, 0.5)
    assert (stats.nodes, stats.leaves, stats.policies) == (1, 1, 1)
    assert tree.classification() == {0: True, 1: True}
    assert stats.iterations == 1


def test_two_member_unsat(two_member):
    _, _, q = two_member
    tree, stats = run(q, 0.9)
    assert (stats.leaves, stats.unsat_leaves, stats.policies) == (1, 1, 0)
    assert tree.classification() == {0: False, 1: False}


def test_two_member_needs_two_policies(two_member):
    _, _, q = two_member
    tree, stats = run(q, 0.7)
    assert (stats.nodes, stats.policies) == (3, 2)
    assert tree.classification() == {0: True, 1: True}
    assert verify_tree(tree).ok


@pytest.mark.parametrize(
    "split, counts",
    [
        # every class considered: members 1 and 2 separate at s1, then {2,3} share a policy
        ("optimistic-unreachable", (4, 3, 2)),
        # reachable only: {1,2} split off first, then again at s1
        ("optimistic-reachable", (7, 5, 3)),
        ("pessimistic", (7, 5, 3)),
    ],
)
def test_trap_ablation(trap, split, counts):
    _, _, q = trap
    tree, stats = run(q, 1.0, split=split, postprocess=False)
    assert (stats.iterations, stats.nodes, stats.policies) == counts
    assert set(tree.classification().values()) == {True}


def test_randomized_abstraction(two_member):
    _, _, q = two_member
    view = restrict(q, q.full)
    ok, actions, res = find_robust_random(view, q.targets, 0.5)
    # uniform mixing: alpha averages 0.8 and 0.6, beta averages 0.35 and 0.7
    assert res.value == pytest.approx(0.7, abs=1e-9)
    assert ok
    assert policy_min_value(view, actions, q.targets).value == pytest.approx(0.6, abs=1e-9)
    assert not find_robust_random(view, q.targets, 0.7)[0]


@pytest.mark.parametrize(
    "kw",
    [
        dict(threshold=1.5),
        dict(threshold=0.5, method="sampling"),
        dict(threshold=0.5, split="widest"),
        dict(threshold=0.5, method="random", split="optimistic-reachable"),
        dict(threshold=0.5, split_rule="coin"),
        dict(threshold=0.5, jobs=0),
    ],
)
def test_config_errors(kw):
    with pytest.raises(ValueError):
        SynthesisConfig(**kw)


def test_default_split_depends_on_method():
    assert SynthesisConfig(0.5).split == "optimistic-unreachable"
    assert SynthesisConfig(0.5, method="random").split == "pessimistic"


def test_split_consistent_members_first(trap):
    _, _, q = trap
    full = q.full
    a, b, c = (IndexSet.from_indices(x, 3) for x in ([0, 1], [0], [1]))
    sub, _, _ = create_split(q, full, [(0, a), (1, full)])
    assert sub == a
    sub, _, _ = create_split(q, full, [(0, b), (1, c)])
    assert sub and sub != full and b & sub != c & sub
    with pytest.raises(ValueError):
        create_split(q, b, [])


@given(st.integers(0, 2**31), st.integers(0, 2**31))
@settings(max_examples=30)
def test_split_is_proper(seed, pick):
    rng = np.random.default_rng(seed)
    _, _, q = _grid()
    subset = IndexSet.from_indices(rng.choice(12, size=int(rng.integers(2, 13)), replace=False).tolist(), 12)
    chosen = [(g, q.colors[c] & subset) for g in range(q.structure.n_groups) if (pick >> (g % 31)) & 1
              for c in q.structure.choices(g)[:1] if q.colors[c] & subset]
    for rule in ("hole", "class"):
        sub, _, _ = create_split(q, subset, chosen, rule)
        assert sub and sub < subset


_GRID = []


def _grid():
    if not _GRID:
        _GRID.append(load(families.GRID_SKETCH, "P>=0.5 [ F (x=6 & y=6) ]"))
    return _GRID[0]


def _member_rows(q, i):
    rows = []
    for s in range(q.n_states):
        rows.append([list(zip(*q.structure.row(next(c for c in q.structure.choices(g) if i in q.colors[c]))))
                     for g in q.structure.groups(s)])
    return rows


@given(st.integers(0, 2**31), st.sampled_from(CONFIGS), st.sampled_from(["hole", "class"]))
@settings(max_examples=40)
def test_random_sketches_match_enumeration(seed, config, rule):
    rng = np.random.default_rng(seed)
    _, _, q = load(families.random_sketch(rng, max_states=6, max_members=8, max_actions=2))
    values = [mdp_brute(_member_rows(q, i), q.targets, q.initial) for i in range(q.family_size)]
    threshold = float(np.round(rng.choice(values) - 1e-3, 4)) if rng.random() < 0.8 else float(rng.random())
    threshold = min(max(threshold, 0.0), 1.0)
    method, split = config
    tree, stats = run(q, threshold, method=method, split=split, split_rule=rule, check_invariants=True)
    for i, sat in tree.classification().items():
        # skip members whose value sits within solver noise of the threshold
        if abs(values[i] - threshold) > 1e-6:
            assert sat == (values[i] >= threshold), (i, values[i], threshold)
    assert verify_tree(tree).ok
    assert stats.nodes == tree.n_nodes and stats.policies <= stats.policy_leaves


def test_parallel_waves_agree(grid):
    _, _, q = grid
    for lam in (0.5, 0.9):
        serial, s1 = run(q, lam)
        parallel, s2 = run(q, lam, jobs=3)
        assert serial.classification() == parallel.classification()
        assert verify_tree(parallel).ok


def test_runs_are_deterministic(grid):
    _, _, q = grid
    a, _ = run(q, 0.9)
    b, _ = run(q, 0.9)
    assert export_json(a) == export_json(b)


def test_capped_run_leaves_unknowns(grid):
    _, _, q = grid
    tree, stats = run(q, 0.99, max_iterations=1)
    assert stats.capped and stats.unknown_leaves >= 1
    assert None in tree.classification().values()
    assert any(n.kind == UNKNOWN for n in tree.leaves())
    tree, stats = run(q, 0.99, time_limit=0.0)
    assert stats.capped and stats.iterations == 0


def test_unsplit_tree_skips_postprocessing(grid):
    _, _, q = grid
    tree = build_tree(q, q.targets, SynthesisConfig(0.9))
    assert all(n.kind != UNKNOWN for n in tree.leaves())
    with pytest.raises(ValueError):
        build_tree(q, q.targets, SynthesisConfig(0.9), subset=IndexSet.empty(12))


def test_baselines_two_member(two_member):
    _, _, q = two_member
    one = baseline_one_by_one(q, q.targets, 0.75)
    assert [m.value for m in one.members] == pytest.approx([0.8, 0.7], abs=1e-9)
    assert one.classification() == {0: True, 1: False}
    assert one.members[0].policy is not None and one.members[1].policy is None
    union = baseline_all_in_one(q, q.targets, 0.75)
    assert [m.value for m in union.members] == pytest.approx([0.8, 0.7], abs=1e-9)
    assert union.classification() == one.classification()
    assert union.states == 1 + 2 * q.n_states
    with pytest.raises(StateCapError):
        baseline_all_in_one(q, q.targets, 0.75, state_cap=4)


def test_explicit_members_agree_with_projection(grid):
    prog, spec, q = grid
    proj = baseline_one_by_one(q, q.targets, 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        expl = baseline_one_by_one(q, q.targets, 0.5, explicit_program=prog, target_expr=spec.target)
    assert [m.value for m in proj.members] == pytest.approx([m.value for m in expl.members], abs=1e-9)


@pytest.mark.parametrize("lam", [0.5, 0.9, 0.99])
def test_grid_tree_matches_one_by_one(grid, lam):
    _, _, q = grid
    tree, _ = run(q, lam)
    base = baseline_one_by_one(q, q.targets, lam)
    assert tree.classification() == base.classification()
    report = verify_tree(tree)
    assert report.ok, report.failures()
    for check in report.leaves:
        if check.kind == POLICY:
            assert meets(check.value, lam)
