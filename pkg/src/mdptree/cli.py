"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 resource cap, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .model.quotient import FamilyError, QuotientMdp, build_quotient
from .policytree import export_dot, export_json, load_json, verify_tree
from .sketch import SketchError, StateCapExceeded, assignment_values, parse_property, parse_sketch
from .synthesis import (
    METHODS,
    SPLIT_RULES,
    SPLITS,
    BaselineResult,
    StateCapError,
    SynthesisConfig,
    baseline_all_in_one,
    baseline_one_by_one,
    synthesize,
)

EXIT_OK, EXIT_INPUT, EXIT_CAP, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("mdptree")


class InputError(Exception):
    pass


@dataclass
class RunReport:
    states: int
    actions: int
    family: int
    stats: dict
    sat_members: Optional[int] = None
    oracle_time: Optional[float] = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def sat_percent(self) -> Optional[float]:
        return None if self.sat_members is None else 100.0 * self.sat_members / self.family

    @property
    def leaves_percent(self) -> float:
        return 100.0 * self.stats["leaves"] / self.family

    @property
    def policies_per_sat(self) -> Optional[float]:
        if self.sat_members is None:
            return None
        return 100.0 * self.stats["policies"] / self.sat_members if self.sat_members else 0.0

    @property
    def iterations_percent(self) -> float:
        return 100.0 * self.stats["iterations"] / self.family

    def to_dict(self) -> dict:
        return {
            "model": {"states": self.states, "actions": self.actions, "family": self.family},
            "satPercent": self.sat_percent,
            "leavesPerFamilyPercent": self.leaves_percent,
            "policiesPerSatPercent": self.policies_per_sat,
            "iterationsPerFamilyPercent": self.iterations_percent,
            "wallTime": self.stats["wall_time"],
            "oracleTime": self.oracle_time,
            "seed": self.seed,
            "synthesis": self.stats,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        def pct(v):
            return "-" if v is None else f"{v:.3g}"

        head = ["|S_F|", "SumAct", "|F|", "SAT%", "L/F%", "P/SAT%", "I/F%", "time[s]"]
        row = [
            str(self.states),
            str(self.actions),
            str(self.family),
            pct(self.sat_percent),
            pct(self.leaves_percent),
            pct(self.policies_per_sat),
            pct(self.iterations_percent),
            f"{self.stats['wall_time']:.2f}",
        ]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        lines = ["  ".join(x.rjust(w) for x, w in zip(r, widths)) for r in (head, row)]
        s = self.stats
        lines.append(
            f"nodes={s['nodes']} leaves={s['leaves']} policies={s['policies']} "
            f"unsat_leaves={s['unsat_leaves']} iterations={s['iterations']}" + (" (capped)" if s["capped"] else "")
        )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- shared loading


def _load(args) -> tuple:
    path = Path(args.sketch)
    try:
        text = path.read_text()
    except OSError as e:
        raise InputError(f"cannot read sketch {path}: {e.strerror or e}") from e
    program = parse_sketch(text)
    spec = parse_property(args.spec, program)
    quotient = build_quotient(program, spec.target, state_cap=getattr(args, "state_cap", None))
    log.info("quotient: %d states, %d actions, %d members", quotient.n_states, quotient.structure.n_choices, quotient.family_size)
    return program, spec, quotient


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        return
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------- commands


def cmd_synthesize(args) -> int:
    program, spec, q = _load(args)
    cfg = SynthesisConfig(
        spec.threshold,
        method=args.method,
        split=args.split,
        postprocess=not args.no_postprocess,
        split_rule=args.split_rule,
        time_limit=args.time_limit,
        max_iterations=args.max_iterations,
        jobs=args.jobs,
        seed=args.seed,
    )
    tree, stats = synthesize(q, q.targets, cfg)
    report = RunReport(q.n_states, q.structure.n_choices, q.family_size, stats.to_dict(), seed=args.seed)
    if args.oracle:
        base = baseline_one_by_one(q, q.targets, spec.threshold)
        report.sat_members = sum(m.sat for m in base.members)
        report.oracle_time = base.wall_time
        cls = tree.classification()
        report.extra["oracleAgrees"] = all(cls[m.index] in (None, m.sat) for m in base.members)
    _write(args.export_json, export_json(tree))
    _write(args.export_dot, export_dot(tree))
    _write(args.report, report.to_json())
    sys.stdout.write(report.table())
    if stats.capped:
        print("synthesis stopped at a resource cap; the tree has undecided leaves", file=sys.stderr)
        return EXIT_CAP
    if args.oracle and not report.extra["oracleAgrees"]:
        print("tree classification disagrees with one-by-one enumeration", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def baseline_csv(program, result: BaselineResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([h.name for h in program.holes] + ["value", "sat"])
    for m in result.members:
        w.writerow([*assignment_values(program, m.index), f"{m.value:.10g}", int(m.sat)])
    return buf.getvalue()


def cmd_baseline(args) -> int:
    program, spec, q = _load(args)
    if args.kind == "one-by-one":
        if args.explicit:
            result = baseline_one_by_one(q, q.targets, spec.threshold, explicit_program=program, target_expr=spec.target)
        else:
            result = baseline_one_by_one(q, q.targets, spec.threshold)
    else:
        result = baseline_all_in_one(q, q.targets, spec.threshold, state_cap=args.state_cap)
    text = baseline_csv(program, result)
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        sys.stdout.write(text)
    sat = sum(m.sat for m in result.members)
    print(f"{args.kind}: {sat}/{len(result.members)} satisfiable, {result.iterations} solver calls, {result.wall_time:.2f}s", file=sys.stderr)
    if args.check_against:
        tree = _read_tree(args.check_against, q)
        cls = tree.classification()
        bad = [m.index for m in result.members if cls[m.index] != m.sat]
        if bad:
            print(f"classification differs on {len(bad)} members, first {bad[:10]}", file=sys.stderr)
            return EXIT_VERIFY
    return EXIT_OK


def _read_tree(path: str, q: QuotientMdp):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read tree {path}: {e.strerror or e}") from e
    try:
        return load_json(text, q, q.targets)
    except (ValueError, KeyError, TypeError) as e:
        raise InputError(f"malformed tree document: {e}") from e


def cmd_verify(args) -> int:
    program, spec, q = _load(args)
    tree = _read_tree(args.tree, q)
    report = verify_tree(tree, threshold=spec.threshold)
    if report.ok:
        print(f"ok: {len(report.leaves)} leaves verified")
        return EXIT_OK
    for line in report.failures():
        print(line, file=sys.stderr)
    return EXIT_VERIFY


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdptree", description="Policy trees for families of MDPs.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--sketch", required=True, help="guarded-command sketch file")
        sp.add_argument("--spec", required=True, help='reachability property, e.g. P>=0.9 [ F "goal" ]')
        sp.add_argument("--state-cap", type=int, default=None, help="abort when the model exceeds this many states")

    s = sub.add_parser("synthesize", help="build a policy tree")
    common(s)
    s.add_argument("--method", choices=METHODS, default="game")
    s.add_argument("--split", choices=SPLITS, default=None)
    s.add_argument("--split-rule", choices=SPLIT_RULES, default="hole")
    s.add_argument("--no-postprocess", action="store_true")
    s.add_argument("--export-dot", metavar="PATH")
    s.add_argument("--export-json", metavar="PATH")
    s.add_argument("--report", metavar="PATH", help="RunReport JSON")
    s.add_argument("--seed", type=int, default=0, help="recorded in the report; the methods are deterministic")
    s.add_argument("--time-limit", type=float, default=None, metavar="S")
    s.add_argument("--max-iterations", type=int, default=None)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--oracle", action="store_true", help="also enumerate members to fill SAT%% and cross-check")
    s.set_defaults(func=cmd_synthesize)

    b = sub.add_parser("baseline", help="solve members by enumeration")
    b.add_argument("kind", choices=("one-by-one", "all-in-one"))
    common(b)
    b.add_argument("--csv", metavar="PATH", help="per-member CSV (default: stdout)")
    b.add_argument("--explicit", action="store_true", help="instantiate every member from the sketch")
    b.add_argument("--check-against", metavar="TREE", help="tree JSON whose classification must match")
    b.set_defaults(func=cmd_baseline)

    v = sub.add_parser("verify", help="re-check every leaf of a tree")
    common(v)
    v.add_argument("--tree", required=True, metavar="PATH")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s", stream=sys.stderr)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (StateCapExceeded, StateCapError) as e:
        print(f"resource cap: {e}", file=sys.stderr)
        return EXIT_CAP
    except (InputError, SketchError, FamilyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    log.info("done in %.2fs", time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
