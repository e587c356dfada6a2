import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdptree import families
from mdptree.indexset import IndexSet
from mdptree.policytree import (
    INNER,
    POLICY,
    UNSAT,
    LeafPolicy,
    Node,
    PolicyTree,
    compatible,
    export_dot,
    export_json,
    load_json,
    merge_policies,
    postprocess,
    verify_tree,
)
from mdptree.synthesis import SynthesisConfig, synthesize

from conftest import load
from oracles import merge_hand_tree


def test_hand_tree_counts_and_certificates():
    tree = merge_hand_tree()
    assert tree.counts() == (11, 6, 4)
    report = verify_tree(tree)
    assert report.ok, report.failures()


def test_hand_tree_postprocessing():
    tree = merge_hand_tree()
    before = tree.classification()
    out, stats = postprocess(tree)
    # A+B merge as siblings, C and D share a compatible policy, E+F collapse
    assert out.counts() == (7, 4, 2)
    assert (stats.nodes_before, stats.leaves_before, stats.policies_before) == (11, 6, 4)
    assert (stats.nodes_after, stats.leaves_after, stats.policies_after) == (7, 4, 2)
    assert out.classification() == before
    assert verify_tree(out).ok
    # the input tree is left alone
    assert tree.counts() == (11, 6, 4)


def test_unsat_siblings_collapse():
    tree = merge_hand_tree()
    out, _ = postprocess(tree)
    unsat = [n for n in out.leaves() if n.kind == UNSAT]
    assert [list(n.index_set) for n in unsat] == [list(range(12, 20))]


def test_mutated_policy_fails_verification():
    tree = merge_hand_tree()
    q = tree.quotient
    leaf = tree.leaf_of(0)
    s1 = next(s for s in range(q.n_states) if q.state_name(s) == "s=1")
    y = next(g for g in q.structure.groups(s1) if q.action_names[q.group_action[g]] == "y")
    leaf.policy.actions[s1] = y
    report = verify_tree(tree)
    assert not report.ok
    assert any("policy reaches only 0" in f for f in report.failures())


def test_wrong_unsat_and_broken_structure_reported():
    tree = merge_hand_tree()
    tree.leaf_of(0).kind = UNSAT
    tree.leaf_of(0).policy = None
    tree.root.children[1].index_set = IndexSet.from_indices(range(10, 20), 20)
    report = verify_tree(tree)
    assert any("meets threshold" in f for f in report.failures())
    assert report.structural


def test_json_round_trip_is_byte_stable():
    tree, _ = postprocess(merge_hand_tree())
    text = export_json(tree)
    assert export_json(tree) == text
    again = load_json(text, tree.quotient, tree.targets)
    assert export_json(again) == text
    assert verify_tree(again).ok


def test_json_policies_are_nonempty_maps():
    data = json.loads(export_json(merge_hand_tree()))
    for node in data["nodes"]:
        if node["kind"] == POLICY:
            assert node["policy"] and all(isinstance(v, str) for v in node["policy"].values())
            assert "s=0" in node["policy"]
        assert node["indexCount"] == sum(length for _, length in node["indexSet"])


@pytest.mark.parametrize(
    "edit, message",
    [
        (lambda d: d.pop("nodes"), "not a policy-tree"),
        (lambda d: d.update(familySize=3), "different size"),
        (lambda d: d["nodes"][0].update(indexCount=5), "indexCount"),
        (lambda d: d["nodes"][0].update(children=[0, 1]), "cycle"),
        (lambda d: d["nodes"][0].update(kind="fork"), "unknown kind"),
    ],
)
def test_load_rejects_bad_documents(edit, message):
    tree = merge_hand_tree()
    data = json.loads(export_json(tree))
    edit(data)
    with pytest.raises(ValueError, match=message):
        load_json(json.dumps(data), tree.quotient, tree.targets)


def test_dot_edges_carry_hole_predicates(grid):
    _, _, q = grid
    tree, _ = synthesize(q, q.targets, SynthesisConfig(0.99))
    dot = export_dot(tree)
    assert dot.startswith("digraph policytree {")
    edges = [line for line in dot.splitlines() if "->" in line]
    assert len(edges) == 2 * sum(1 for n in tree.nodes() if n.kind == INNER)
    for line in edges:
        label = line.split('label="')[1].rstrip('"];')
        assert label.startswith(("OX", "OY")) and ("<=" in label or ">" in label)
    assert dot.count("UNSAT") == sum(1 for n in tree.leaves() if n.kind == UNSAT)


bools = st.lists(st.booleans(), min_size=6, max_size=6)
acts = st.lists(st.integers(0, 5), min_size=6, max_size=6)


@given(acts, acts, bools, bools)
def test_merge_follows_first_on_its_fragment(a, b, fa, fb):
    a, b, fa, fb = map(np.array, (a, b, fa, fb))
    actions, frag = merge_policies(a, b, fa, fb)
    assert np.array_equal(actions[fa], a[fa])
    assert np.array_equal(actions[~fa], b[~fa])
    assert np.array_equal(frag, fa | fb)


@given(acts, acts, bools, bools)
def test_merge_of_compatible_pair_serves_both(a, b, fa, fb):
    a, b, fa, fb = map(np.array, (a, b, fa, fb))
    pa, pb = LeafPolicy(a, fa), LeafPolicy(b, fb)
    targets = np.zeros(6, dtype=bool)
    actions, _ = merge_policies(a, b, fa, fb)
    if compatible(pa, pb, targets):
        assert np.array_equal(actions[fb], b[fb])
    assert compatible(pa, pa, targets)


@given(st.integers(0, 2**31))
@settings(max_examples=25)
def test_postprocess_never_grows_or_reclassifies(seed):
    rng = np.random.default_rng(seed)
    _, _, q = load(families.random_sketch(rng, max_states=6, max_members=10, max_actions=3))
    threshold = float(rng.uniform(0.1, 0.9))
    raw, _ = synthesize(q, q.targets, SynthesisConfig(threshold, postprocess=False))
    out, stats = postprocess(raw)
    assert out.n_nodes <= raw.n_nodes and out.n_leaves <= raw.n_leaves and out.n_policies <= raw.n_policies
    assert out.classification() == raw.classification()
    assert verify_tree(out).ok
    assert stats.nodes_after == out.n_nodes


def test_single_leaf_tree():
    prog, spec, q = load(families.TWO_MEMBER_SKETCH)
    tree = PolicyTree(Node(q.full, UNSAT), q, q.targets, 0.9)
    out, stats = postprocess(tree)
    assert out.counts() == (1, 1, 0) and stats.collapses == 0
    assert verify_tree(out).ok
    assert tree.leaf_of(1) is tree.root
    with pytest.raises(KeyError):
        tree.leaf_of(5)
