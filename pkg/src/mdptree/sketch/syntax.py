"""Lexer, AST and recursive-descent parser for MDP sketches with holes."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Union


class SketchError(Exception):
    """Syntax or semantic error in a sketch, with an optional source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}, column {col}: " if col is not None else f"line {line}: "
        super().__init__(where + message)


# ---------------------------------------------------------------- tokens

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<dec>\d+\.\d+)
  | (?P<int>\d+)
  | (?P<string>"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=>|=>|->|\.\.|<=|>=|!=|[-+*/<>=!&|?:;,()\[\]{}'])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "mdp", "dtmc", "ctmc", "pta", "smg", "hole", "int", "bool", "double", "in",
    "formula", "label", "const", "module", "endmodule", "init", "true",
    "false", "min", "max", "global", "rewards", "endrewards",
}


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "dec", "string", "name", "kw", "op", "eof"
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SketchError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("ws", "comment"):
            if kind == "name" and chunk in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------- AST


@dataclass(frozen=True)
class Lit:
    value: Union[int, bool, Fraction]


@dataclass(frozen=True)
class Name:
    name: str
    line: int = 0
    col: int = 0


@dataclass(frozen=True)
class Unary:
    op: str  # "!" or "-"
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Ite:
    cond: "Expr"
    then: "Expr"
    other: "Expr"


@dataclass(frozen=True)
class Call:
    func: str  # "min" or "max"
    args: tuple


Expr = Union[Lit, Name, Unary, Binary, Ite, Call]


@dataclass(frozen=True)
class Hole:
    name: str
    domain: tuple[int, ...]


@dataclass
class Variable:
    name: str
    lo: int
    hi: int
    init: int
    is_bool: bool
    module: str


@dataclass
class Update:
    prob: Optional[Expr]  # None means probability 1
    assignments: list[tuple[str, Expr]]


@dataclass
class Command:
    module: str
    label: Optional[str]
    guard: Expr
    updates: list[Update]
    line: int


@dataclass
class Module:
    name: str
    variables: list[Variable] = field(default_factory=list)
    commands: list[Command] = field(default_factory=list)


@dataclass
class SketchProgram:
    """Parsed sketch. Names are checked; expressions are still syntax trees."""

    model_type: str
    holes: list[Hole]
    constants: dict[str, Union[int, bool, Fraction]]
    formulas: dict[str, Expr]
    labels: dict[str, Expr]
    modules: list[Module]

    @property
    def variables(self) -> list[Variable]:
        return [v for m in self.modules for v in m.variables]

    def hole(self, name: str) -> Hole:
        for h in self.holes:
            if h.name == name:
                return h
        raise KeyError(name)

    @property
    def family_size(self) -> int:
        n = 1
        for h in self.holes:
            n *= len(h.domain)
        return n


# ---------------------------------------------------------------- parser

_BINARY_LEVELS = [
    ("<=>",),
    ("=>",),
    ("|",),
    ("&",),
    None,  # unary "!"
    ("=", "!=", "<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/"),
]


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> SketchError:
        tok = tok or self.tok
        return SketchError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def expect_name(self) -> Token:
        if self.tok.kind != "name":
            found = self.tok.text or "end of input"
            raise self.error(f"expected identifier, found {found!r}")
        tok = self.tok
        self.i += 1
        return tok

    def expect_int(self) -> int:
        neg = self.accept("-")
        if self.tok.kind != "int":
            raise self.error("expected integer literal")
        value = int(self.tok.text)
        self.i += 1
        return -value if neg else value

    # expressions
    def expr(self) -> Expr:
        cond = self.binary(0)
        if self.accept("?"):
            then = self.expr()
            self.expect(":")
            other = self.expr()
            return Ite(cond, then, other)
        return cond

    def binary(self, level: int) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        ops = _BINARY_LEVELS[level]
        if ops is None:
            if self.accept("!"):
                return Unary("!", self.binary(level))
            return self.binary(level + 1)
        left = self.binary(level + 1)
        while self.tok.kind == "op" and self.tok.text in ops:
            op = self.tok.text
            self.i += 1
            right = self.binary(level + 1)
            left = Binary(op, left, right)
        return left

    def unary(self) -> Expr:
        if self.accept("-"):
            return Unary("-", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "int":
            self.i += 1
            return Lit(int(tok.text))
        if tok.kind == "dec":
            self.i += 1
            return Lit(Fraction(tok.text))
        if tok.kind == "kw" and tok.text in ("true", "false"):
            self.i += 1
            return Lit(tok.text == "true")
        if tok.kind == "kw" and tok.text in ("min", "max"):
            self.i += 1
            self.expect("(")
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            return Call(tok.text, tuple(args))
        if tok.kind == "name":
            self.i += 1
            return Name(tok.text, tok.line, tok.col)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        found = tok.text or "end of input"
        raise self.error(f"expected expression, found {found!r}")

    # declarations
    def program(self) -> SketchProgram:
        if self.tok.kind == "eof":
            raise self.error("expected model type")
        if self.tok.kind != "kw" or self.tok.text not in ("mdp", "dtmc", "ctmc", "pta", "smg"):
            raise self.error("expected model type")
        if self.tok.text != "mdp":
            raise self.error(f"unsupported model type {self.tok.text!r}; only 'mdp' sketches are supported")
        self.i += 1

        holes: list[Hole] = []
        consts: dict[str, tuple[Token, Optional[Expr]]] = {}
        formulas: dict[str, Expr] = {}
        labels: dict[str, Expr] = {}
        modules: list[Module] = []
        seen: dict[str, str] = {}

        def declare(tok: Token, kind: str) -> None:
            if tok.text in seen:
                if kind == "hole" and seen[tok.text] == "hole":
                    raise self.error(f"hole {tok.text!r} declared twice", tok)
                raise self.error(f"{tok.text!r} already declared as {seen[tok.text]}", tok)
            seen[tok.text] = kind

        while self.tok.kind != "eof":
            if self.accept("hole"):
                self.expect("int")
                name = self.expect_name()
                declare(name, "hole")
                self.expect("in")
                holes.append(Hole(name.text, self.hole_domain(name)))
                self.expect(";")
            elif self.accept("const"):
                if self.tok.text in ("int", "bool", "double"):
                    self.i += 1
                name = self.expect_name()
                declare(name, "constant")
                value = None
                if self.accept("="):
                    value = self.expr()
                consts[name.text] = (name, value)
                self.expect(";")
            elif self.accept("formula"):
                name = self.expect_name()
                declare(name, "formula")
                self.expect("=")
                formulas[name.text] = self.expr()
                self.expect(";")
            elif self.accept("label"):
                tok = self.tok
                if tok.kind != "string":
                    raise self.error("expected quoted label name")
                self.i += 1
                lname = tok.text[1:-1]
                if lname in labels:
                    raise self.error(f"label {lname!r} declared twice", tok)
                self.expect("=")
                labels[lname] = self.expr()
                self.expect(";")
            elif self.accept("module"):
                modules.append(self.module(declare))
            elif self.at("global"):
                raise self.error("global variables are not supported")
            elif self.at("rewards"):
                raise self.error("reward structures are not supported")
            else:
                raise self.error(f"unexpected {self.tok.text!r} at top level")

        const_values = _evaluate_constants(consts)
        return SketchProgram("mdp", holes, const_values, formulas, labels, modules)

    def hole_domain(self, name: Token) -> tuple[int, ...]:
        self.expect("{")
        first = self.expect_int()
        if self.accept(".."):
            last = self.expect_int()
            if last < first:
                raise self.error(f"empty domain for hole {name.text!r}", name)
            values = tuple(range(first, last + 1))
        else:
            values = [first]
            while self.accept(","):
                values.append(self.expect_int())
            if len(set(values)) != len(values):
                raise self.error(f"duplicate values in domain of hole {name.text!r}", name)
            values = tuple(values)
        self.expect("}")
        return values

    def module(self, declare) -> Module:
        name = self.expect_name()
        declare(name, "module")
        mod = Module(name.text)
        # variable declarations come first: NAME ':' ...
        while self.tok.kind == "name" and self.peek().text == ":":
            vtok = self.expect_name()
            declare(vtok, "variable")
            self.expect(":")
            if self.accept("bool"):
                lo, hi, is_bool = Lit(0), Lit(1), True
            else:
                self.expect("[")
                lo = self.expr()
                self.expect("..")
                hi = self.expr()
                self.expect("]")
                is_bool = False
            init = None
            if self.accept("init"):
                init = self.expr()
            self.expect(";")
            # bounds and init are resolved after constants are known
            mod.variables.append(_PendingVariable(vtok, lo, hi, init, is_bool, mod.name))
        while self.at("["):
            mod.commands.append(self.command(mod.name))
        self.expect("endmodule")
        return mod

    def command(self, module: str) -> Command:
        start = self.expect("[")
        label = None
        if self.tok.kind == "name":
            label = self.expect_name().text
        self.expect("]")
        guard = self.expr()
        self.expect("->")
        updates = [self.update()]
        while self.accept("+"):
            updates.append(self.update())
        self.expect(";")
        return Command(module, label, guard, updates, start.line)

    def update(self) -> Update:
        prob = None
        if not self._at_assignment() and not self.at("true"):
            prob = self.expr()
            self.expect(":")
        if self.accept("true"):
            return Update(prob, [])
        assignments = [self.assignment()]
        while self.accept("&"):
            assignments.append(self.assignment())
        return Update(prob, assignments)

    def _at_assignment(self) -> bool:
        return self.at("(") and self.peek().kind == "name" and self.peek(2).text == "'"

    def assignment(self) -> tuple[str, Expr]:
        self.expect("(")
        name = self.expect_name()
        self.expect("'")
        self.expect("=")
        value = self.expr()
        self.expect(")")
        return (name.text, value)


@dataclass
class _PendingVariable:
    tok: Token
    lo: Expr
    hi: Expr
    init: Optional[Expr]
    is_bool: bool
    module: str


def _evaluate_constants(consts: dict[str, tuple[Token, Optional[Expr]]]) -> dict:
    values: dict = {}
    pending = dict(consts)
    while pending:
        progress = False
        for name, (tok, expr) in list(pending.items()):
            if expr is None:
                raise SketchError(f"constant {name!r} has no value (use a hole for open parameters)", tok.line, tok.col)
            if free_names(expr) <= set(values):
                values[name] = eval_closed(expr, values)
                del pending[name]
                progress = True
        if not progress:
            name, (tok, _) = next(iter(pending.items()))
            raise SketchError(f"constant {name!r} depends on an undefined or cyclic name", tok.line, tok.col)
    return values


def free_names(expr: Expr) -> set[str]:
    if isinstance(expr, Name):
        return {expr.name}
    if isinstance(expr, Lit):
        return set()
    if isinstance(expr, Unary):
        return free_names(expr.arg)
    if isinstance(expr, Binary):
        return free_names(expr.left) | free_names(expr.right)
    if isinstance(expr, Ite):
        return free_names(expr.cond) | free_names(expr.then) | free_names(expr.other)
    if isinstance(expr, Call):
        out: set[str] = set()
        for a in expr.args:
            out |= free_names(a)
        return out
    raise TypeError(expr)


def eval_closed(expr: Expr, env: dict):
    """Evaluate an expression over a plain name -> value environment."""
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Name):
        if expr.name not in env:
            raise SketchError(f"undeclared identifier {expr.name!r}", expr.line or None, expr.col or None)
        return env[expr.name]
    if isinstance(expr, Unary):
        v = eval_closed(expr.arg, env)
        return (not v) if expr.op == "!" else -v
    if isinstance(expr, Binary):
        a = eval_closed(expr.left, env)
        b = eval_closed(expr.right, env)
        return _SCALAR_BINOPS[expr.op](a, b)
    if isinstance(expr, Ite):
        return eval_closed(expr.then if eval_closed(expr.cond, env) else expr.other, env)
    if isinstance(expr, Call):
        args = [eval_closed(a, env) for a in expr.args]
        return min(args) if expr.func == "min" else max(args)
    raise TypeError(expr)


def _div(a, b):
    if b == 0:
        raise SketchError("division by zero")
    return Fraction(a) / Fraction(b)


_SCALAR_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "&": lambda a, b: bool(a) and bool(b),
    "|": lambda a, b: bool(a) or bool(b),
    "=>": lambda a, b: (not a) or bool(b),
    "<=>": lambda a, b: bool(a) == bool(b),
}


def parse_sketch(text: str) -> SketchProgram:
    """Parse sketch source text and check that every identifier resolves."""
    program = _Parser(text).program()
    _resolve(program)
    return program


def _resolve(program: SketchProgram) -> None:
    consts = program.constants
    hole_names = {h.name for h in program.holes}
    # variables: evaluate bounds and initial values
    for mod in program.modules:
        resolved = []
        for pv in mod.variables:
            lo = eval_closed(pv.lo, consts)
            hi = eval_closed(pv.hi, consts)
            if isinstance(lo, bool) or isinstance(hi, bool) or int(lo) != lo or int(hi) != hi:
                raise SketchError(f"bounds of {pv.tok.text!r} must be integers", pv.tok.line, pv.tok.col)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise SketchError(f"empty range for variable {pv.tok.text!r}", pv.tok.line, pv.tok.col)
            if pv.init is None:
                init = lo
            else:
                init = eval_closed(pv.init, consts)
                if pv.is_bool:
                    init = int(bool(init))
            if not lo <= init <= hi:
                raise SketchError(f"initial value of {pv.tok.text!r} out of bounds", pv.tok.line, pv.tok.col)
            resolved.append(Variable(pv.tok.text, lo, hi, int(init), pv.is_bool, mod.name))
        mod.variables = resolved

    var_owner = {v.name: v.module for v in program.variables}
    known = set(consts) | hole_names | set(var_owner) | set(program.formulas)

    def check(expr: Expr, where: str, line: int | None = None) -> None:
        for name in sorted(free_names(expr)):
            if name not in known:
                raise SketchError(f"undeclared identifier {name!r} in {where}", line)

    # formulas may reference each other, but not cyclically
    visiting: set[str] = set()
    done: set[str] = set()

    def visit(name: str) -> None:
        if name in done:
            return
        if name in visiting:
            raise SketchError(f"cyclic formula definition involving {name!r}")
        visiting.add(name)
        expr = program.formulas[name]
        check(expr, f"formula {name!r}")
        for dep in free_names(expr):
            if dep in program.formulas:
                visit(dep)
        visiting.discard(name)
        done.add(name)

    for name in program.formulas:
        visit(name)
    for lname, expr in program.labels.items():
        check(expr, f'label "{lname}"')
    for mod in program.modules:
        for cmd in mod.commands:
            check(cmd.guard, "guard", cmd.line)
            for upd in cmd.updates:
                if upd.prob is not None:
                    check(upd.prob, "probability", cmd.line)
                    if holes_in(upd.prob, program):
                        raise SketchError("holes are not allowed in probability expressions", cmd.line)
                targets = set()
                for var, value in upd.assignments:
                    if var not in var_owner:
                        raise SketchError(f"assignment to undeclared variable {var!r}", cmd.line)
                    if var_owner[var] != mod.name:
                        raise SketchError(f"module {mod.name!r} assigns variable {var!r} of module {var_owner[var]!r}", cmd.line)
                    if var in targets:
                        raise SketchError(f"variable {var!r} assigned twice in one update", cmd.line)
                    targets.add(var)
                    check(value, "update", cmd.line)


def holes_in(expr: Expr, program: SketchProgram) -> set[str]:
    """Names of holes an expression depends on, looking through formulas."""
    hole_names = {h.name for h in program.holes}
    out: set[str] = set()
    stack = [expr]
    seen: set[str] = set()
    while stack:
        for name in free_names(stack.pop()):
            if name in hole_names:
                out.add(name)
            elif name in program.formulas and name not in seen:
                seen.add(name)
                stack.append(program.formulas[name])
    return out
