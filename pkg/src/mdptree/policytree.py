"""Policy trees: structure, verification, post-processing and export."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .checks import default_actions, policy_fragment, test_policy_robust, test_unsat
from .indexset import IndexSet
from .model.quotient import QuotientMdp, restrict

INNER = "inner"
POLICY = "policyLeaf"
UNSAT = "unsatLeaf"
UNKNOWN = "unknownLeaf"

_uids = itertools.count()


@dataclass(eq=False)
class LeafPolicy:
    """Base action per state plus the fragment the policy is responsible for.

    ``actions`` holds quotient group indices; outside ``fragment`` they are
    defaults that never influence the leaf's verdict.
    """

    actions: np.ndarray
    fragment: np.ndarray
    uid: int = field(default_factory=lambda: next(_uids))

    def same_as(self, other: LeafPolicy) -> bool:
        return np.array_equal(self.actions, other.actions) and np.array_equal(self.fragment, other.fragment)


@dataclass(eq=False)
class Node:
    index_set: IndexSet
    kind: str
    children: Optional[tuple[Node, Node]] = None
    policy: Optional[LeafPolicy] = None
    edge: Optional[str] = None
    value: Optional[float] = None
    id: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.kind != INNER


class PolicyTree:
    """Binary tree over a family; leaves carry a robust policy or UNSAT."""

    def __init__(self, root: Node, quotient: QuotientMdp, targets: np.ndarray, threshold: float):
        self.root = root
        self.quotient = quotient
        self.targets = np.asarray(targets, dtype=bool)
        self.threshold = threshold
        self._parent: dict[int, LeafPolicy] = {}
        self.renumber()

    # union-find over policy identities
    def find(self, policy: LeafPolicy) -> LeafPolicy:
        root = policy
        while root.uid in self._parent:
            root = self._parent[root.uid]
        while policy.uid in self._parent:
            nxt = self._parent[policy.uid]
            self._parent[policy.uid] = root
            policy = nxt
        return root

    def union(self, merged: LeafPolicy, *members: LeafPolicy) -> None:
        for p in members:
            r = self.find(p)
            if r is not merged:
                self._parent[r.uid] = merged

    def label(self, node: Node):
        """Comparable leaf label: the representative policy or the kind."""
        if node.kind == POLICY:
            return self.find(node.policy).uid
        return node.kind

    # traversal
    def nodes(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            if n.children:
                stack.append(n.children[1])
                stack.append(n.children[0])
        return out

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes() if n.is_leaf]

    def renumber(self) -> None:
        for k, n in enumerate(self.nodes()):
            n.id = k

    def policies(self) -> list[LeafPolicy]:
        """Distinct representative policies in depth-first order."""
        seen: dict[int, LeafPolicy] = {}
        for n in self.leaves():
            if n.kind == POLICY:
                r = self.find(n.policy)
                seen.setdefault(r.uid, r)
        return list(seen.values())

    @property
    def n_nodes(self) -> int:
        return len(self.nodes())

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def n_policy_leaves(self) -> int:
        return sum(1 for n in self.leaves() if n.kind == POLICY)

    @property
    def n_policies(self) -> int:
        return len(self.policies())

    def counts(self) -> tuple[int, int, int]:
        return self.n_nodes, self.n_leaves, self.n_policies

    def leaf_of(self, member: int) -> Node:
        node = self.root
        if member not in node.index_set:
            raise KeyError(member)
        while node.children:
            node = node.children[0] if member in node.children[0].index_set else node.children[1]
        return node

    def classification(self) -> dict[int, Optional[bool]]:
        """Member -> True (policy leaf), False (UNSAT) or None (unknown)."""
        out = {}
        for leaf in self.leaves():
            verdict = {POLICY: True, UNSAT: False}.get(leaf.kind)
            for i in leaf.index_set:
                out[i] = verdict
        return out

    def policy_for(self, member: int) -> Optional[np.ndarray]:
        leaf = self.leaf_of(member)
        return self.find(leaf.policy).actions if leaf.kind == POLICY else None

    def copy(self) -> PolicyTree:
        def clone(n: Node) -> Node:
            kids = (clone(n.children[0]), clone(n.children[1])) if n.children else None
            pol = self.find(n.policy) if n.policy is not None else None
            return Node(n.index_set, n.kind, kids, pol, n.edge, n.value)

        return PolicyTree(clone(self.root), self.quotient, self.targets, self.threshold)


# ---------------------------------------------------------------- verification


@dataclass
class LeafCheck:
    node: int
    kind: str
    ok: bool
    value: Optional[float]
    message: str = ""


@dataclass
class VerificationReport:
    leaves: list[LeafCheck]
    structural: list[str]

    @property
    def ok(self) -> bool:
        return not self.structural and all(c.ok for c in self.leaves)

    def failures(self) -> list[str]:
        out = list(self.structural)
        out.extend(f"node {c.node} ({c.kind}): {c.message}" for c in self.leaves if not c.ok)
        return out


def check_structure(tree: PolicyTree) -> list[str]:
    errors = []
    q = tree.quotient
    if tree.root.index_set != q.full:
        errors.append("root does not cover the whole family")
    for n in tree.nodes():
        if not n.index_set:
            errors.append(f"node {n.id} is empty")
        if n.kind == INNER:
            if not n.children:
                errors.append(f"inner node {n.id} has no children")
                continue
            a, b = n.children[0].index_set, n.children[1].index_set
            if not a.isdisjoint(b) or (a | b) != n.index_set:
                errors.append(f"children of node {n.id} do not partition it")
        elif n.children:
            errors.append(f"leaf {n.id} has children")
        if n.kind == POLICY and n.policy is None:
            errors.append(f"policy leaf {n.id} carries no policy")
    return errors


def verify_tree(tree: PolicyTree, quotient: Optional[QuotientMdp] = None, targets=None, threshold=None) -> VerificationReport:
    """Re-check every leaf certificate against the quotient."""
    from .solver import meets
    from .checks import policy_min_value

    q = quotient or tree.quotient
    targets = tree.targets if targets is None else np.asarray(targets, dtype=bool)
    threshold = tree.threshold if threshold is None else threshold
    def per_member(subset, fn):
        return [fn(restrict(q, IndexSet.from_indices([i], subset.universe))) for i in subset]

    checks = []
    for leaf in tree.leaves():
        view = restrict(q, leaf.index_set)
        if leaf.kind == POLICY:
            actions = tree.find(leaf.policy).actions
            v = policy_min_value(view, actions, targets).value
            if not meets(v, threshold) and len(leaf.index_set) > 1:
                # merged leaves: the joint game is conservative, members decide
                v = min(per_member(leaf.index_set, lambda m: policy_min_value(m, actions, targets).value))
            ok = meets(v, threshold)
            checks.append(LeafCheck(leaf.id, leaf.kind, ok, v, "" if ok else f"policy reaches only {v:.6g}"))
        elif leaf.kind == UNSAT:
            unsat, res = test_unsat(view, targets, threshold)
            v = res.value
            if not unsat and len(leaf.index_set) > 1:
                v = max(per_member(leaf.index_set, lambda m: test_unsat(m, targets, threshold)[1].value))
                unsat = not meets(v, threshold)
            checks.append(LeafCheck(leaf.id, leaf.kind, unsat, v, "" if unsat else f"best value {v:.6g} meets threshold"))
        else:
            checks.append(LeafCheck(leaf.id, leaf.kind, False, None, "undecided leaf"))
    return VerificationReport(checks, check_structure(tree))


# ---------------------------------------------------------------- post-processing


def merge_policies(sigma_i, sigma_j, fragment_i, fragment_j) -> tuple[np.ndarray, np.ndarray]:
    """Follow ``sigma_i`` on its fragment and ``sigma_j`` everywhere else."""
    fragment_i = np.asarray(fragment_i, dtype=bool)
    actions = np.where(fragment_i, sigma_i, sigma_j)
    return actions, fragment_i | np.asarray(fragment_j, dtype=bool)


def compatible(a: LeafPolicy, b: LeafPolicy, targets: np.ndarray) -> bool:
    """Policies agree wherever both fragments overlap (targets excluded)."""
    both = a.fragment & b.fragment & ~targets
    return bool(np.array_equal(a.actions[both], b.actions[both]))


@dataclass
class PostprocessStats:
    nodes_before: int = 0
    nodes_after: int = 0
    leaves_before: int = 0
    leaves_after: int = 0
    policies_before: int = 0
    policies_after: int = 0
    sibling_merges: int = 0
    pair_merges: int = 0
    collapses: int = 0
    checks: int = 0


def postprocess(tree: PolicyTree, quotient: Optional[QuotientMdp] = None, targets=None, threshold=None) -> tuple[PolicyTree, PostprocessStats]:
    """Sibling merge, compatible-pair merge, then collapse of uniform subtrees."""
    tree = tree.copy()
    q = quotient or tree.quotient
    targets = tree.targets if targets is None else np.asarray(targets, dtype=bool)
    threshold = tree.threshold if threshold is None else threshold
    stats = PostprocessStats(nodes_before=tree.n_nodes, leaves_before=tree.n_leaves, policies_before=tree.n_policies)

    # sibling policy leaves
    for node in reversed(tree.nodes()):
        if not node.children:
            continue
        left, right = node.children
        if left.kind != POLICY or right.kind != POLICY:
            continue
        pl, pr = tree.find(left.policy), tree.find(right.policy)
        if pl is pr:
            continue
        for first, second, other in ((pl, pr, right), (pr, pl, left)):
            actions, _ = merge_policies(first.actions, second.actions, first.fragment, second.fragment)
            view = restrict(q, other.index_set)
            stats.checks += 1
            if test_policy_robust(view, actions, targets, threshold):
                frag = first.fragment | policy_fragment(view, actions, targets)
                merged = LeafPolicy(actions, frag)
                tree.union(merged, pl, pr)
                stats.sibling_merges += 1
                break

    # compatible pairs, eagerly, in depth-first order
    leaves = [n for n in tree.leaves() if n.kind == POLICY]
    for a, b in itertools.combinations(leaves, 2):
        pa, pb = tree.find(a.policy), tree.find(b.policy)
        if pa is pb or not compatible(pa, pb, targets):
            continue
        actions, frag = merge_policies(pa.actions, pb.actions, pa.fragment, pb.fragment)
        tree.union(LeafPolicy(actions, frag), pa, pb)
        stats.pair_merges += 1

    # collapse inner nodes with identically labelled leaf children
    changed = True
    while changed:
        changed = False
        for node in reversed(tree.nodes()):
            if not node.children:
                continue
            left, right = node.children
            if left.is_leaf and right.is_leaf and left.kind != UNKNOWN and tree.label(left) == tree.label(right):
                node.kind = left.kind
                node.policy = tree.find(left.policy) if left.policy is not None else None
                node.value = None
                node.children = None
                stats.collapses += 1
                changed = True
    tree.renumber()
    stats.nodes_after, stats.leaves_after, stats.policies_after = tree.counts()
    return tree, stats


# ---------------------------------------------------------------- export


def _policy_map(tree: PolicyTree, policy: LeafPolicy) -> dict[str, str]:
    q = tree.quotient
    st = q.structure
    out = {}
    for s in np.flatnonzero(policy.fragment):
        if tree.targets[s] and s != q.initial:
            continue
        if st.state_ptr[s + 1] - st.state_ptr[s] < 2 and s != q.initial:
            continue
        out[q.state_name(int(s))] = q.action_names[q.group_action[policy.actions[s]]]
    return out


def to_dict(tree: PolicyTree) -> dict:
    tree.renumber()
    policy_ids = {p.uid: k for k, p in enumerate(tree.policies())}
    nodes = []
    for n in tree.nodes():
        item = {
            "id": n.id,
            "kind": n.kind,
            "indexCount": len(n.index_set),
            "indexSet": [list(r) for r in n.index_set.runs()],
            "children": [c.id for c in n.children] if n.children else [],
        }
        if n.edge is not None:
            item["edge"] = n.edge
        if n.kind == POLICY:
            p = tree.find(n.policy)
            item["policyId"] = policy_ids[p.uid]
            item["policy"] = _policy_map(tree, p)
        nodes.append(item)
    return {
        "familySize": tree.quotient.family_size,
        "threshold": tree.threshold,
        "nodes": nodes,
    }


def export_json(tree: PolicyTree) -> str:
    return json.dumps(to_dict(tree), indent=1, sort_keys=True) + "\n"


def export_dot(tree: PolicyTree) -> str:
    tree.renumber()
    policy_ids = {p.uid: k for k, p in enumerate(tree.policies())}
    lines = ["digraph policytree {", "  node [fontname=Helvetica];"]
    for n in tree.nodes():
        size = len(n.index_set)
        if n.kind == INNER:
            lines.append(f'  n{n.id} [shape=ellipse, label="{size}"];')
        elif n.kind == POLICY:
            k = policy_ids[tree.find(n.policy).uid]
            lines.append(f'  n{n.id} [shape=box, label="policy {k}\\n{size}"];')
        elif n.kind == UNSAT:
            lines.append(f'  n{n.id} [shape=box, style=filled, fillcolor=lightgray, label="UNSAT\\n{size}"];')
        else:
            lines.append(f'  n{n.id} [shape=box, style=dashed, label="?\\n{size}"];')
        if n.children:
            for c in n.children:
                label = c.edge if c.edge is not None else f"|{len(c.index_set)}|"
                lines.append(f'  n{n.id} -> n{c.id} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_json(text: str, quotient: QuotientMdp, targets: np.ndarray) -> PolicyTree:
    """Rebuild a tree from :func:`export_json` output."""
    data = json.loads(text)
    if not isinstance(data, dict) or "nodes" not in data:
        raise ValueError("not a policy-tree document")
    if data.get("familySize") != quotient.family_size:
        raise ValueError("tree was built for a family of a different size")
    st = quotient.structure
    by_name = {quotient.state_name(s): s for s in range(st.n_states)}
    items = {int(d["id"]): d for d in data["nodes"]}
    cache: dict[tuple, LeafPolicy] = {}

    def policy(mapping: dict, subset: IndexSet) -> LeafPolicy:
        key = tuple(sorted(mapping.items()))
        if key in cache:
            return cache[key]
        actions = default_actions(st)
        for name, action in mapping.items():
            if name not in by_name:
                raise ValueError(f"unknown state {name!r}")
            s = by_name[name]
            groups = [g for g in st.groups(s) if quotient.action_names[quotient.group_action[g]] == action]
            if not groups:
                raise ValueError(f"action {action!r} not available in state {name!r}")
            actions[s] = groups[0]
        frag = policy_fragment(restrict(quotient, subset), actions, targets)
        cache[key] = LeafPolicy(actions, frag)
        return cache[key]

    def build(k: int, seen: set) -> Node:
        if k in seen:
            raise ValueError("tree document contains a cycle")
        seen.add(k)
        d = items[k]
        subset = IndexSet.from_runs(d["indexSet"], quotient.family_size)
        if len(subset) != d["indexCount"]:
            raise ValueError(f"node {k}: indexCount does not match indexSet")
        kids = tuple(build(int(c), seen) for c in d.get("children", []))
        if d["kind"] == INNER and len(kids) != 2:
            raise ValueError(f"inner node {k} must have two children")
        pol = policy(d["policy"], subset) if d["kind"] == POLICY else None
        if d["kind"] not in (INNER, POLICY, UNSAT, UNKNOWN):
            raise ValueError(f"node {k}: unknown kind {d['kind']!r}")
        return Node(subset, d["kind"], kids or None, pol, d.get("edge"))

    if 0 not in items:
        raise ValueError("tree document has no root node")
    return PolicyTree(build(0, set()), quotient, targets, float(data.get("threshold", 0.0)))


def iter_policy_leaves(tree: PolicyTree) -> Iterator[Node]:
    return (n for n in tree.leaves() if n.kind == POLICY)
