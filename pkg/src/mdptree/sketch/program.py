"""Executable view of a parsed sketch: action table, state encoding, properties."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .compile import ExpressionCompiler
from .syntax import SketchError, SketchProgram, _Parser, holes_in

DEFAULT_FAMILY_CAP = 2**32
SELF_LOOP = "_selfloop"


@dataclass
class CompiledCommand:
    module: str
    label: Optional[str]
    guard: Callable
    guard_holes: frozenset
    updates: list  # [(prob_fn | None, [(var_index, value_fn), ...]), ...]
    line: int


@dataclass
class ActionSpec:
    """One base action of the composed system.

    ``participants`` holds, for every module that synchronises on the action,
    the module's commands carrying it. Unlabelled commands become actions with
    a single participant and a single command.
    """

    name: str
    participants: list[list[CompiledCommand]]


class CompiledSketch:
    def __init__(self, program: SketchProgram):
        self.program = program
        self.compiler = ExpressionCompiler(program)
        variables = program.variables
        self.variable_names = [v.name for v in variables]
        self.lo = np.array([v.lo for v in variables], dtype=np.int64)
        self.hi = np.array([v.hi for v in variables], dtype=np.int64)
        self.is_bool = [v.is_bool for v in variables]
        radix = [1] * len(variables)
        for k in range(len(variables) - 2, -1, -1):
            radix[k] = radix[k + 1] * int(self.hi[k + 1] - self.lo[k + 1] + 1)
        self.radix = np.array(radix, dtype=np.int64)
        self.initial = tuple(v.init for v in variables)
        self.holes = list(program.holes)
        self.actions = self._build_actions()

    def _compile_command(self, cmd) -> CompiledCommand:
        c = self.compiler
        updates = []
        for upd in cmd.updates:
            prob = c.compile(upd.prob) if upd.prob is not None else None
            assigns = [(self.variable_names.index(var), c.compile(expr)) for var, expr in upd.assignments]
            updates.append((prob, assigns))
        return CompiledCommand(
            cmd.module, cmd.label, c.compile(cmd.guard), frozenset(holes_in(cmd.guard, self.program)), updates, cmd.line
        )

    def _build_actions(self) -> list[ActionSpec]:
        alphabet = {m.name: {c.label for c in m.commands if c.label} for m in self.program.modules}
        actions: list[ActionSpec] = []
        seen: set[str] = set()
        for mod in self.program.modules:
            for k, cmd in enumerate(mod.commands):
                if cmd.label is None:
                    actions.append(ActionSpec(f"{mod.name}.{k}", [[self._compile_command(cmd)]]))
                elif cmd.label not in seen:
                    seen.add(cmd.label)
                    participants = []
                    for other in self.program.modules:
                        if cmd.label in alphabet[other.name]:
                            participants.append(
                                [self._compile_command(c) for c in other.commands if c.label == cmd.label]
                            )
                    actions.append(ActionSpec(cmd.label, participants))
        return actions

    @property
    def action_names(self) -> list[str]:
        return [a.name for a in self.actions] + [SELF_LOOP]

    # state encoding
    def encode(self, valuation) -> int:
        return int(np.dot(np.asarray(valuation, dtype=np.int64) - self.lo, self.radix))

    def decode(self, code: int) -> tuple:
        out = []
        for k in range(len(self.radix)):
            q, code = divmod(code, int(self.radix[k]))
            out.append(int(q + self.lo[k]))
        return tuple(out)

    # properties
    def predicate(self, expr) -> Callable:
        if holes_in(expr, self.program):
            raise SketchError("target predicates must not depend on holes")
        return self.compiler.compile(expr)

    def hole_values(self, index: int) -> tuple:
        return assignment_values(self.program, index)

    # scalar semantics (one family member)
    def distribution(self, action: ActionSpec, v: tuple, h: tuple) -> Optional[dict]:
        """Successor distribution of ``action`` in valuation ``v`` for holes ``h``.

        Returns None if the action is disabled.
        """
        enabled_lists = [[c for c in commands if c.guard(v, h)] for commands in action.participants]
        if not all(enabled_lists):
            return None
        branch_lists = []
        for enabled in enabled_lists:
            if len(enabled) > 1:
                lines = ", ".join(str(c.line) for c in enabled)
                raise SketchError(
                    f"commands on lines {lines} with action {action.name!r} are enabled together in module "
                    f"{enabled[0].module!r} at {self.describe(v)}"
                )
            branch_lists.append(self._branches(enabled[0], v, h))
        dist: dict[tuple, Fraction] = {}
        for combo in itertools.product(*branch_lists):
            p = Fraction(1)
            new = list(v)
            for q, assigns in combo:
                p *= q
                for k, value in assigns:
                    new[k] = value
            if p == 0:
                continue
            key = tuple(new)
            dist[key] = dist.get(key, Fraction(0)) + p
        return dist

    def _branches(self, cmd: CompiledCommand, v: tuple, h: tuple) -> list:
        out = []
        total = Fraction(0)
        for prob_fn, assigns in cmd.updates:
            p = Fraction(1) if prob_fn is None else prob_fn(v, h)
            if isinstance(p, bool) or not isinstance(p, (int, Fraction)):
                raise SketchError(f"probability on line {cmd.line} is not a number", cmd.line)
            p = Fraction(p)
            if p < 0 or p > 1:
                raise SketchError(f"probability {p} on line {cmd.line} outside [0, 1]", cmd.line)
            total += p
            values = []
            for k, fn in assigns:
                val = fn(v, h)
                val = int(bool(val)) if self.is_bool[k] else val
                if isinstance(val, Fraction):
                    if val.denominator != 1:
                        raise SketchError(f"non-integer value assigned to {self.variable_names[k]!r}", cmd.line)
                    val = int(val)
                val = int(val)
                if not self.lo[k] <= val <= self.hi[k]:
                    raise SketchError(
                        f"update on line {cmd.line} sets {self.variable_names[k]}={val}, outside "
                        f"[{self.lo[k]}..{self.hi[k]}] at {self.describe(v)}",
                        cmd.line,
                    )
                values.append((k, val))
            out.append((p, values))
        if total != 1:
            raise SketchError(f"probabilities of the command on line {cmd.line} sum to {total}, not 1", cmd.line)
        return out

    def describe(self, v: tuple) -> str:
        return "(" + ",".join(f"{n}={x}" for n, x in zip(self.variable_names, v)) + ")"


# ---------------------------------------------------------------- assignments


def enumerate_assignments(program: SketchProgram, cap: int = DEFAULT_FAMILY_CAP) -> list[dict[str, int]]:
    """All hole assignments in lexicographic order (first hole varies slowest)."""
    size = program.family_size
    if size > cap:
        raise SketchError(f"family of {size} members exceeds the cap of {cap}")
    names = [h.name for h in program.holes]
    return [dict(zip(names, values)) for values in itertools.product(*(h.domain for h in program.holes))]


def assignment_values(program: SketchProgram, index: int) -> tuple:
    if not 0 <= index < program.family_size:
        raise IndexError(index)
    out = []
    for h in reversed(program.holes):
        index, r = divmod(index, len(h.domain))
        out.append(h.domain[r])
    return tuple(reversed(out))


def assignment_index(program: SketchProgram, assignment: dict[str, int]) -> int:
    index = 0
    for h in program.holes:
        if h.name not in assignment:
            raise KeyError(f"hole {h.name!r} not assigned")
        index = index * len(h.domain) + h.domain.index(assignment[h.name])
    return index


def format_assignment(program: SketchProgram, index: int) -> str:
    return ",".join(f"{h.name}={v}" for h, v in zip(program.holes, assignment_values(program, index)))


def hole_grid(program: SketchProgram) -> tuple:
    """Per-hole value arrays shaped to broadcast over the family grid."""
    k = len(program.holes)
    out = []
    for j, h in enumerate(program.holes):
        shape = [1] * k
        shape[j] = len(h.domain)
        out.append(np.array(h.domain, dtype=np.int64).reshape(shape))
    return tuple(out)


# ---------------------------------------------------------------- properties


@dataclass
class ReachSpec:
    """A reachability specification ``P>=lambda [ F target ]``."""

    threshold: float
    target: object  # expression AST
    text: str

    @property
    def threshold_exact(self) -> Fraction:
        return Fraction(self.text_threshold)

    text_threshold: str = ""


_SPEC_RE = re.compile(r"^\s*P\s*>=\s*([0-9]*\.?[0-9]+)\s*\[\s*F\s+(.*?)\s*\]\s*$", re.S)


def parse_property(text: str, program: SketchProgram) -> ReachSpec:
    m = _SPEC_RE.match(text)
    if m is None:
        raise SketchError(f"cannot parse specification {text!r}; expected 'P>=LAMBDA [ F \"label\" ]'")
    lam = Fraction(m.group(1))
    if not 0 <= lam <= 1:
        raise SketchError(f"threshold {m.group(1)} outside [0, 1]")
    target_text = m.group(2)
    label = re.fullmatch(r'"([^"]*)"', target_text)
    if label:
        name = label.group(1)
        if name in program.labels:
            expr = program.labels[name]
        elif name in program.formulas:
            expr = program.formulas[name]
        else:
            raise SketchError(f"unknown label {name!r}")
    else:
        parser = _Parser(target_text)
        expr = parser.expr()
        if parser.tok.kind != "eof":
            raise SketchError(f"trailing input in target expression {target_text!r}")
        from .syntax import free_names

        known = set(program.constants) | set(program.formulas) | {v.name for v in program.variables}
        bad = free_names(expr) - known
        if bad:
            raise SketchError(f"undeclared identifier {sorted(bad)[0]!r} in target")
    return ReachSpec(float(lam), expr, text.strip(), m.group(1))
