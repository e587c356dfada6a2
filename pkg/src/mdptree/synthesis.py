"""Divide-and-conquer construction of policy trees, plus the two baselines."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .abstraction import build_game, chosen_classes, quotient_chosen_classes
from .checks import policy_fragment, policy_min_value, test_policy_robust, test_unsat
from .indexset import IndexSet
from .kernels import OP_MAX, OP_MEAN
from .model.quotient import QuotientMdp, Restriction, restrict
from .policytree import INNER, POLICY, UNKNOWN, UNSAT, LeafPolicy, Node, PolicyTree, postprocess
from .solver import SolveResult, meets, mdp_opt_reach, solve

METHODS = ("game", "random")
SPLITS = ("optimistic-unreachable", "optimistic-reachable", "pessimistic")
SPLIT_RULES = ("hole", "class")


@dataclass
class SynthesisConfig:
    threshold: float
    method: str = "game"
    split: Optional[str] = None
    postprocess: bool = True
    split_rule: str = "hole"
    time_limit: Optional[float] = None
    max_iterations: Optional[int] = None
    jobs: int = 1
    seed: int = 0
    check_invariants: bool = False

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold {self.threshold} outside [0, 1]")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.split is None:
            self.split = "pessimistic" if self.method == "random" else "optimistic-unreachable"
        if self.split not in SPLITS:
            raise ValueError(f"unknown split strategy {self.split!r}")
        if self.method == "random" and self.split != "pessimistic":
            raise ValueError("the randomized abstraction yields no game policy; use pessimistic splitting")
        if self.split_rule not in SPLIT_RULES:
            raise ValueError(f"unknown split rule {self.split_rule!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")


@dataclass
class SynthesisStats:
    iterations: int = 0
    game_calls: int = 0
    mdp_calls: int = 0
    nodes: int = 0
    leaves: int = 0
    policy_leaves: int = 0
    unsat_leaves: int = 0
    unknown_leaves: int = 0
    policies: int = 0
    splits: int = 0
    capped: bool = False
    wall_time: float = 0.0
    phases: dict = field(default_factory=dict)
    postprocess: Optional[dict] = None

    def add_phase(self, name: str, seconds: float) -> None:
        self.phases[name] = self.phases.get(name, 0.0) + seconds

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Outcome:
    kind: str
    value: Optional[float] = None
    actions: Optional[np.ndarray] = None
    fragment: Optional[np.ndarray] = None
    parts: Optional[tuple] = None  # ((subset, edge), (subset, edge))
    game_calls: int = 0
    mdp_calls: int = 0
    phases: dict = field(default_factory=dict)


# ---------------------------------------------------------------- oracles on one subfamily


def find_robust_game(view: Restriction, targets, threshold: float) -> tuple[bool, SolveResult]:
    """Solve the game abstraction; sat iff its value meets the threshold."""
    res = build_game(view.quotient, view).solve(targets)
    return meets(res.value, threshold), res


def find_robust_random(view: Restriction, targets, threshold: float) -> tuple[bool, np.ndarray, SolveResult]:
    """Maximise against uniformly mixed classes, then check the policy robustly."""
    st = view.quotient.structure
    res = solve(st, view.quotient.initial, targets, True, np.full(st.n_groups, OP_MEAN, dtype=np.int8), choice_mask=view.choice_mask)
    actions = res.state_group
    return test_policy_robust(view, actions, targets, threshold), actions, res


# ---------------------------------------------------------------- splitting


def family_holes(quotient: QuotientMdp) -> list[tuple[str, tuple]]:
    program = getattr(quotient, "program", None)
    if program is None:
        return [("id", tuple(range(quotient.family_size)))]
    return [(h.name, tuple(h.domain)) for h in program.holes] or [("id", (0,))]


def hole_values(quotient: QuotientMdp, members: np.ndarray) -> list[np.ndarray]:
    """Per hole, the value each member assigns to it."""
    holes = family_holes(quotient)
    shape = tuple(len(d) for _, d in holes)
    coords = np.unravel_index(members, shape)
    return [np.asarray(d)[k] for (_, d), k in zip(holes, coords)]


def _threshold_split(quotient, subset: IndexSet, hole: int, t: int) -> tuple[IndexSet, str, str]:
    members = np.fromiter(subset, dtype=np.int64, count=len(subset))
    vals = hole_values(quotient, members)[hole]
    name = family_holes(quotient)[hole][0]
    sub = IndexSet.from_indices(members[vals <= t].tolist(), subset.universe)
    return sub, f"{name}<={t}", f"{name}>{t}"


def describe_split(quotient, subset: IndexSet, sub: IndexSet) -> tuple[Optional[str], Optional[str]]:
    """Hole predicates for a split, when it is rectangular in one hole."""
    members = np.fromiter(subset, dtype=np.int64, count=len(subset))
    inside = np.array([m in sub for m in members.tolist()])
    for (name, _), vals in zip(family_holes(quotient), hole_values(quotient, members)):
        a, b = set(vals[inside].tolist()), set(vals[~inside].tolist())
        if a & b:
            continue
        if max(a) < min(b):
            return f"{name}<={max(a)}", f"{name}>{max(a)}"
        if min(a) > max(b):
            return f"{name}>={min(a)}", f"{name}<{min(a)}"
        fmt = lambda s: "{" + ",".join(str(x) for x in sorted(s)) + "}"
        return f"{name} in {fmt(a)}", f"{name} in {fmt(b)}"
    return None, None


def _median_split(quotient, subset: IndexSet):
    members = np.fromiter(subset, dtype=np.int64, count=len(subset))
    best = None
    for k, vals in enumerate(hole_values(quotient, members)):
        present = np.unique(vals)
        if present.size >= 2 and (best is None or present.size > best[1].size):
            best = (k, present)
    k, present = best
    return _threshold_split(quotient, subset, k, int(present[(present.size - 1) // 2]))


def _separating_split(quotient, subset: IndexSet, i: int, j: int):
    members = np.fromiter(subset, dtype=np.int64, count=len(subset))
    vals = hole_values(quotient, members)
    pair = hole_values(quotient, np.array([i, j]))
    best = None
    for k, v in enumerate(vals):
        if pair[k][0] == pair[k][1]:
            continue
        present = np.unique(v)
        if best is None or present.size > best[1].size:
            best = (k, present)
    k, present = best
    lo, hi = sorted((int(pair[k][0]), int(pair[k][1])))
    t = int(present[(present.size - 1) // 2])
    below_hi = present[present < hi]
    t = min(max(t, lo), int(below_hi.max()))
    return _threshold_split(quotient, subset, k, t)


def create_split(quotient: QuotientMdp, subset: IndexSet, chosen: list[tuple[int, IndexSet]], rule: str = "hole"):
    """Split ``subset`` using the classes a policy picked in the Player-2 states in scope.

    Returns ``(sub, edge_in, edge_out)`` where ``sub`` is a nonempty proper
    subset. The consistent members are split off when they form a proper
    subset; otherwise two picked classes that disagree are separated.
    """
    if len(subset) < 2:
        raise ValueError("a singleton cannot be split")
    common = subset
    for _, color in chosen:
        common = common & color
    if common and common != subset:
        return (common,) + describe_split(quotient, subset, common)
    # distinct colors in order of first appearance; counts keep the pairwise weighting
    mult: dict[IndexSet, int] = {}
    for _, color in chosen:
        mult[color] = mult.get(color, 0) + 1
    colors = list(mult)
    partners = [[b for b in colors if not (a <= b or b <= a)] for a in colors]
    score = [sum(mult[b] for b in ps) for ps in partners]
    if colors and max(score) > 0:
        p = score.index(max(score))
        k_p = colors[p]
        k_q = partners[p][0]
        if rule == "class":
            return (k_p,) + describe_split(quotient, subset, k_p)
        return _separating_split(quotient, subset, (k_p - k_q).min(), (k_q - k_p).min())
    return _median_split(quotient, subset)


# ---------------------------------------------------------------- tree construction


class Synthesizer:
    def __init__(self, quotient: QuotientMdp, targets, cfg: SynthesisConfig):
        self.quotient = quotient
        self.targets = np.asarray(targets, dtype=bool)
        self.cfg = cfg

    def resolve(self, subset: IndexSet) -> _Outcome:
        """One step of the recursion: robust policy, UNSAT, or a split."""
        cfg, targets = self.cfg, self.targets
        out = _Outcome("split")
        view = restrict(self.quotient, subset)
        t0 = time.perf_counter()
        if cfg.method == "game":
            sat, res = find_robust_game(view, targets, cfg.threshold)
            out.game_calls += 1
            actions = res.state_group
        else:
            sat, actions, res = find_robust_random(view, targets, cfg.threshold)
            out.mdp_calls += 2
        t1 = time.perf_counter()
        out.phases["find_robust"] = t1 - t0
        if sat:
            out.kind = POLICY
            out.actions = actions.copy()
            out.value = res.value if cfg.method == "game" else policy_min_value(view, actions, targets).value
            out.fragment = policy_fragment(view, out.actions, targets)
            return out
        unsat, qres = test_unsat(view, targets, cfg.threshold)
        out.mdp_calls += 1
        t2 = time.perf_counter()
        out.phases["test_unsat"] = t2 - t1
        if unsat:
            out.kind, out.value = UNSAT, qres.value
            return out
        if len(subset) == 1:  # pragma: no cover - the two tests above are complementary on members
            raise RuntimeError("singleton subfamily is neither robust nor unsatisfiable")
        if cfg.split == "pessimistic":
            chosen = quotient_chosen_classes(view, qres.choices, targets)
        else:
            scope = "all" if cfg.split == "optimistic-unreachable" else "reachable"
            chosen = chosen_classes(build_game(self.quotient, view), res.state_group, res.group_choice, targets, scope)
        sub, edge_in, edge_out = create_split(self.quotient, subset, chosen, cfg.split_rule)
        if cfg.check_invariants:
            self._check_split(subset, sub, view, qres)
        out.parts = ((sub, edge_in), (subset - sub, edge_out))
        out.phases["split"] = time.perf_counter() - t2
        return out

    def _check_split(self, subset, sub, view, qres):
        if not sub or sub == subset or not sub <= subset:
            raise AssertionError("split is not a nonempty proper subset")
        if self.cfg.split == "pessimistic":
            common = subset
            for _, color in quotient_chosen_classes(view, qres.choices, self.targets):
                common = common & color
            if common and meets(qres.value, self.cfg.threshold):
                base = self.quotient.structure.choice_group[qres.choices]
                for i in common:
                    member = restrict(self.quotient, IndexSet.from_indices([i], subset.universe))
                    if not test_policy_robust(member, base, self.targets, self.cfg.threshold):
                        raise AssertionError(f"quotient policy does not win for consistent member {i}")

    def build_tree(self, subset: Optional[IndexSet] = None, stats: Optional[SynthesisStats] = None) -> PolicyTree:
        """Recursive construction, left child first; no post-processing."""
        cfg = self.cfg
        stats = stats if stats is not None else SynthesisStats()
        subset = self.quotient.full if subset is None else subset
        if not subset:
            raise ValueError("cannot build a tree for an empty family")
        start = time.perf_counter()
        root = Node(subset, UNKNOWN)
        pending = [root]
        pool = ThreadPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None
        try:
            while pending:
                capped = (cfg.time_limit is not None and time.perf_counter() - start > cfg.time_limit) or (
                    cfg.max_iterations is not None and stats.iterations >= cfg.max_iterations
                )
                if capped:
                    stats.capped = True
                    break
                if pool is None:
                    batch = [pending.pop()]
                    outcomes = [self.resolve(batch[0].index_set)]
                else:
                    batch, pending = pending, []
                    outcomes = list(pool.map(lambda n: self.resolve(n.index_set), batch))
                new = []
                for node, oc in zip(batch, outcomes):
                    stats.game_calls += oc.game_calls
                    stats.mdp_calls += oc.mdp_calls
                    stats.iterations += oc.game_calls + oc.mdp_calls
                    for k, v in oc.phases.items():
                        stats.add_phase(k, v)
                    node.value = oc.value
                    if oc.kind == POLICY:
                        node.kind, node.policy = POLICY, LeafPolicy(oc.actions, oc.fragment)
                    elif oc.kind == UNSAT:
                        node.kind = UNSAT
                    else:
                        node.kind = INNER
                        stats.splits += 1
                        node.children = tuple(Node(s, UNKNOWN, edge=e) for s, e in oc.parts)
                        new.extend(node.children)
                # depth-first, left child first
                pending.extend(reversed(new))
        finally:
            if pool is not None:
                pool.shutdown()
        tree = PolicyTree(root, self.quotient, self.targets, cfg.threshold)
        stats.wall_time += time.perf_counter() - start
        _fill_counts(stats, tree)
        return tree

    def run(self) -> tuple[PolicyTree, SynthesisStats]:
        stats = SynthesisStats()
        t0 = time.perf_counter()
        tree = self.build_tree(stats=stats)
        if self.cfg.postprocess and not stats.capped:
            t1 = time.perf_counter()
            tree, pstats = postprocess(tree)
            stats.add_phase("postprocess", time.perf_counter() - t1)
            stats.postprocess = asdict(pstats)
        _fill_counts(stats, tree)
        stats.wall_time = time.perf_counter() - t0
        return tree, stats


def _fill_counts(stats: SynthesisStats, tree: PolicyTree) -> None:
    leaves = tree.leaves()
    stats.nodes = tree.n_nodes
    stats.leaves = len(leaves)
    stats.policy_leaves = sum(1 for n in leaves if n.kind == POLICY)
    stats.unsat_leaves = sum(1 for n in leaves if n.kind == UNSAT)
    stats.unknown_leaves = sum(1 for n in leaves if n.kind == UNKNOWN)
    stats.policies = tree.n_policies


def synthesize(quotient: QuotientMdp, targets, cfg: SynthesisConfig) -> tuple[PolicyTree, SynthesisStats]:
    return Synthesizer(quotient, targets, cfg).run()


def build_tree(quotient: QuotientMdp, targets, cfg: SynthesisConfig, subset: Optional[IndexSet] = None) -> PolicyTree:
    return Synthesizer(quotient, targets, cfg).build_tree(subset)


# ---------------------------------------------------------------- baselines


@dataclass
class MemberResult:
    index: int
    value: float
    sat: bool
    policy: Optional[np.ndarray]  # group per quotient state, or per member state for explicit solving


@dataclass
class BaselineResult:
    members: list[MemberResult]
    iterations: int
    wall_time: float
    states: int = 0

    def classification(self) -> dict[int, bool]:
        return {m.index: m.sat for m in self.members}


def baseline_one_by_one(quotient: QuotientMdp, targets, threshold: float, explicit_program=None, target_expr=None) -> BaselineResult:
    """Solve every member separately.

    By default members are read off the quotient by restricting it to one
    identifier. With ``explicit_program`` each member is instead instantiated
    from the sketch and explored on its own.
    """
    t0 = time.perf_counter()
    out = []
    for i in range(quotient.family_size):
        if explicit_program is not None:
            from .sketch.explore import instantiate

            mdp = instantiate(explicit_program, i, target=target_expr)
            res = mdp_opt_reach(mdp, mdp.targets, "max")
        else:
            view = restrict(quotient, IndexSet.from_indices([i], quotient.family_size))
            res = mdp_opt_reach(view, targets, "max")
            res.state_group = res.state_group.copy()
        sat = meets(res.value, threshold)
        out.append(MemberResult(i, res.value, sat, res.state_group if sat else None))
    return BaselineResult(out, quotient.family_size, time.perf_counter() - t0)


class StateCapError(RuntimeError):
    pass


def baseline_all_in_one(quotient: QuotientMdp, targets, threshold: float, state_cap: Optional[int] = None) -> BaselineResult:
    """One max-reach solve on the disjoint union of all members.

    A fresh initial state has one action per member leading to that
    member's copy of the initial state.
    """
    t0 = time.perf_counter()
    st = quotient.structure
    n = quotient.family_size
    total = 1 + n * st.n_states
    if state_cap is not None and total > state_cap:
        raise StateCapError(f"union of {n} members needs {total} states, cap is {state_cap}")
    masks = [quotient.member_choices(i) for i in range(n)]
    # member copy k occupies states 1 + k*S .. 1 + (k+1)*S - 1
    state_ptr, group_ptr, choice_ptr = [0, n], list(range(n + 1)), list(range(n + 1))
    succ = [1 + k * st.n_states + quotient.initial for k in range(n)]
    prob = [1.0] * n
    g_total, c_total, t_total = n, n, n
    for k in range(n):
        offset = 1 + k * st.n_states
        keep = masks[k]
        for s in range(st.n_states):
            for g in st.groups(s):
                c = next(c for c in st.choices(g) if keep[c])
                lo, hi = st.choice_ptr[c], st.choice_ptr[c + 1]
                succ.extend((st.succ[lo:hi] + offset).tolist())
                prob.extend(st.prob[lo:hi].tolist())
                t_total += hi - lo
                c_total += 1
                choice_ptr.append(t_total)
                g_total += 1
                group_ptr.append(c_total)
            state_ptr.append(g_total)
    from .model.structure import TransitionStructure

    union = TransitionStructure(np.array(state_ptr), np.array(group_ptr), np.array(choice_ptr), np.array(succ), np.array(prob))
    union_targets = np.concatenate([[False], np.tile(np.asarray(targets, dtype=bool), n)])
    res = solve(union, 0, union_targets, True, OP_MAX)
    out = []
    for k in range(n):
        offset = 1 + k * st.n_states
        value = float(res.values[offset + quotient.initial])
        sat = meets(value, threshold)
        policy = None
        if sat:
            # the m-th action of a copied state is the m-th action of the quotient state
            local = res.state_group[offset : offset + st.n_states] - union.state_ptr[offset : offset + st.n_states]
            policy = st.state_ptr[:-1] + local
        out.append(MemberResult(k, value, sat, policy))
    return BaselineResult(out, 1, time.perf_counter() - t0, states=total)
