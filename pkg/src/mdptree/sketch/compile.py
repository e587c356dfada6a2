"""Compile sketch expressions into Python callables ``f(v, h)``.

``v`` is the tuple of variable values (plain ints, booleans stored as 0/1) and
``h`` the tuple of hole values. Hole values may be scalars (one family member)
or numpy arrays broadcastable against each other (a block of members); the
generated code is polymorphic over both.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np

from .syntax import Binary, Call, Expr, Ite, Lit, Name, SketchError, SketchProgram, Unary


def _is_arr(x) -> bool:
    return isinstance(x, np.ndarray)


def _and(a, b):
    if _is_arr(a) or _is_arr(b):
        return np.logical_and(a, b)
    return bool(a) and bool(b)


def _or(a, b):
    if _is_arr(a) or _is_arr(b):
        return np.logical_or(a, b)
    return bool(a) or bool(b)


def _not(a):
    if _is_arr(a):
        return np.logical_not(a)
    return not a


def _implies(a, b):
    return _or(_not(a), b)


def _iff(a, b):
    if _is_arr(a) or _is_arr(b):
        return np.equal(np.asarray(a, dtype=bool), np.asarray(b, dtype=bool))
    return bool(a) == bool(b)


def _ite(c, a, b):
    if _is_arr(c):
        return np.where(c, a, b)
    return a if c else b


def _min(*args):
    if any(_is_arr(a) for a in args):
        out = args[0]
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    return min(args)


def _max(*args):
    if any(_is_arr(a) for a in args):
        out = args[0]
        for a in args[1:]:
            out = np.maximum(out, a)
        return out
    return max(args)


def _div(a, b):
    if _is_arr(a) or _is_arr(b):
        raise SketchError("division is only supported on hole-free expressions")
    if b == 0:
        raise SketchError("division by zero")
    return Fraction(a) / Fraction(b)


_HELPERS = {
    "_and": _and,
    "_or": _or,
    "_not": _not,
    "_implies": _implies,
    "_iff": _iff,
    "_ite": _ite,
    "_min": _min,
    "_max": _max,
    "_div": _div,
}

_INFIX = {"+": "+", "-": "-", "*": "*", "=": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">", ">=": ">="}
_CALLS = {"&": "_and", "|": "_or", "=>": "_implies", "<=>": "_iff", "/": "_div"}


class ExpressionCompiler:
    """Turns expressions of one program into fast callables."""

    def __init__(self, program: SketchProgram):
        self.program = program
        self.var_index = {v.name: i for i, v in enumerate(program.variables)}
        self.hole_index = {h.name: i for i, h in enumerate(program.holes)}
        self._consts: list = []
        self._const_slot: dict = {}

    def _const(self, value) -> str:
        key = (type(value), value)
        if key not in self._const_slot:
            self._const_slot[key] = len(self._consts)
            self._consts.append(value)
        return f"_c[{self._const_slot[key]}]"

    def source(self, expr: Expr, _stack: tuple = ()) -> str:
        if isinstance(expr, Lit):
            if isinstance(expr.value, bool):
                return "True" if expr.value else "False"
            if isinstance(expr.value, int):
                return str(expr.value)
            return self._const(expr.value)
        if isinstance(expr, Name):
            name = expr.name
            if name in self.var_index:
                return f"v[{self.var_index[name]}]"
            if name in self.hole_index:
                return f"h[{self.hole_index[name]}]"
            if name in self.program.constants:
                value = self.program.constants[name]
                return self.source(Lit(value))
            if name in self.program.formulas:
                if name in _stack:
                    raise SketchError(f"cyclic formula {name!r}")
                return f"({self.source(self.program.formulas[name], _stack + (name,))})"
            raise SketchError(f"undeclared identifier {name!r}", expr.line or None, expr.col or None)
        if isinstance(expr, Unary):
            inner = self.source(expr.arg, _stack)
            return f"_not({inner})" if expr.op == "!" else f"(-({inner}))"
        if isinstance(expr, Binary):
            a = self.source(expr.left, _stack)
            b = self.source(expr.right, _stack)
            if expr.op in _INFIX:
                return f"(({a}) {_INFIX[expr.op]} ({b}))"
            return f"{_CALLS[expr.op]}({a}, {b})"
        if isinstance(expr, Ite):
            c = self.source(expr.cond, _stack)
            return f"_ite({c}, {self.source(expr.then, _stack)}, {self.source(expr.other, _stack)})"
        if isinstance(expr, Call):
            args = ", ".join(self.source(a, _stack) for a in expr.args)
            return f"_{expr.func}({args})"
        raise TypeError(expr)

    def compile(self, expr: Expr) -> Callable:
        body = self.source(expr)
        namespace = dict(_HELPERS)
        namespace["_c"] = self._consts
        code = f"def _f(v, h):\n    return {body}\n"
        exec(compile(code, "<sketch-expr>", "exec"), namespace)
        fn = namespace["_f"]
        fn.__doc__ = body
        return fn
