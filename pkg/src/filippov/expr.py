"""Scalar expressions in the plane variables x and y.

A small recursive-descent parser, exact symbolic differentiation and a code
generator that turns trees into fast python callables.  Every vector-field
component and every switching function in this package is one of these
expressions.  Trees are immutable; sharing them across threads is safe.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

__all__ = [
    "Expr", "Const", "Var", "Neg", "BinOp", "Call",
    "ExprError", "ParseError", "DomainError",
    "parse", "compiled", "substitute", "as_polynomial", "polynomially_equal",
]

VARIABLES = ("x", "y")
FUNCTIONS = ("sin", "cos", "tan", "exp", "ln", "sqrt", "abs", "sign")


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax or vocabulary error, reported with the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DomainError(ExprError):
    """Evaluation left the domain of a subexpression (1/0, ln of <=0, ...)."""

    def __init__(self, message: str, subexpr: "Expr"):
        super().__init__(f"{message} in '{subexpr}'")
        self.subexpr = subexpr


def _sign(v: float) -> float:
    return float((v > 0) - (v < 0))


class Expr:
    """Base node.  Subclasses implement eval, diff, _code and __str__."""

    def eval(self, x: float, y: float) -> float:
        raise NotImplementedError

    def diff(self, var: str) -> "Expr":
        raise NotImplementedError

    def _code(self) -> str:
        raise NotImplementedError

    def __call__(self, x: float, y: float) -> float:
        return self.eval(x, y)


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def eval(self, x, y):
        return self.value

    def diff(self, var):
        return Const(0.0)

    def _code(self):
        return repr(self.value)

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def eval(self, x, y):
        return x if self.name == "x" else y

    def diff(self, var):
        return Const(1.0 if var == self.name else 0.0)

    def _code(self):
        return self.name

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr

    def eval(self, x, y):
        return -self.arg.eval(x, y)

    def diff(self, var):
        return neg(self.arg.diff(var))

    def _code(self):
        return f"(-{self.arg._code()})"

    def __str__(self):
        return f"(-{self.arg})"


def _is_integral(v: float) -> bool:
    return math.isfinite(v) and v == int(v)


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # + - * / ^
    left: Expr
    right: Expr

    def eval(self, x, y):
        a = self.left.eval(x, y)
        b = self.right.eval(x, y)
        op = self.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0.0:
                raise DomainError("division by zero", self)
            return a / b
        # power; the exponent is a constant by construction
        if _is_integral(b):
            if a == 0.0 and b < 0:
                raise DomainError("zero to a negative power", self)
            return float(a) ** int(b)
        if a < 0.0:
            raise DomainError("negative base with fractional exponent", self)
        if a == 0.0 and b < 0:
            raise DomainError("zero to a negative power", self)
        return a ** b

    def diff(self, var):
        u, v = self.left, self.right
        du, dv = u.diff(var), v.diff(var)
        op = self.op
        if op == "+":
            return add(du, dv)
        if op == "-":
            return sub(du, dv)
        if op == "*":
            return add(mul(du, v), mul(u, dv))
        if op == "/":
            return div(sub(mul(du, v), mul(u, dv)), pow_(v, Const(2.0)))
        # d(u^c) = c*u^(c-1)*u'
        c = v.value  # type: ignore[attr-defined]
        return mul(mul(Const(c), pow_(u, Const(c - 1.0))), du)

    def _code(self):
        a, b = self.left._code(), self.right._code()
        if self.op == "^":
            e = self.right.value  # type: ignore[attr-defined]
            return f"({a})**({int(e)})" if _is_integral(e) else f"({a})**({e!r})"
        return f"({a} {self.op} {b})"

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def eval(self, x, y):
        v = self.arg.eval(x, y)
        f = self.func
        if f == "sin":
            return math.sin(v)
        if f == "cos":
            return math.cos(v)
        if f == "tan":
            return math.tan(v)
        if f == "exp":
            return math.exp(v)
        if f == "ln":
            if v <= 0.0:
                raise DomainError("ln of a non-positive value", self)
            return math.log(v)
        if f == "sqrt":
            if v < 0.0:
                raise DomainError("sqrt of a negative value", self)
            return math.sqrt(v)
        if f == "abs":
            return abs(v)
        return _sign(v)

    def diff(self, var):
        u = self.arg
        du = u.diff(var)
        f = self.func
        if f == "sin":
            return mul(Call("cos", u), du)
        if f == "cos":
            return neg(mul(Call("sin", u), du))
        if f == "tan":
            return div(du, pow_(Call("cos", u), Const(2.0)))
        if f == "exp":
            return mul(Call("exp", u), du)
        if f == "ln":
            return div(du, u)
        if f == "sqrt":
            return div(du, mul(Const(2.0), Call("sqrt", u)))
        if f == "abs":
            # convention: d|u|/du = sign(u) with sign(0) = 0
            return mul(Call("sign", u), du)
        return Const(0.0)  # sign' = 0 almost everywhere

    def _code(self):
        return f"_{self.func}({self.arg._code()})"

    def __str__(self):
        return f"{self.func}({self.arg})"


# ---------------------------------------------------------------------------
# smart constructors: fold constants, drop trivial identities

def _const(e: Expr) -> bool:
    return isinstance(e, Const)


def add(a: Expr, b: Expr) -> Expr:
    if _const(a) and _const(b):
        return Const(a.value + b.value)
    if _const(a) and a.value == 0.0:
        return b
    if _const(b) and b.value == 0.0:
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _const(a) and _const(b):
        return Const(a.value - b.value)
    if _const(b) and b.value == 0.0:
        return a
    if _const(a) and a.value == 0.0:
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _const(a) and _const(b):
        return Const(a.value * b.value)
    for u, v in ((a, b), (b, a)):
        if _const(u):
            if u.value == 0.0:
                return Const(0.0)
            if u.value == 1.0:
                return v
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _const(a) and _const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _const(b) and b.value == 1.0:
        return a
    if _const(a) and a.value == 0.0 and not (_const(b) and b.value == 0.0):
        return Const(0.0)
    return BinOp("/", a, b)


def pow_(a: Expr, b: Expr) -> Expr:
    if not _const(b):
        raise ValueError("exponent must be a constant")
    if b.value == 1.0:
        return a
    if b.value == 0.0:
        return Const(1.0)
    if _const(a):
        try:
            return Const(BinOp("^", a, b).eval(0.0, 0.0))
        except DomainError:
            pass
    return BinOp("^", a, b)


def neg(a: Expr) -> Expr:
    if _const(a):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos].isspace():
                pos += 1
                continue
            m = _TOKEN.match(text, pos)
            if m is None:
                raise ParseError(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup or "op"
            self.tokens.append((kind, m.group(), pos))
            pos = m.end()
        self.i = 0

    def peek(self):
        if self.i < len(self.tokens):
            return self.tokens[self.i]
        return ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, off = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected '{op}'", off)

    # expression := term (('+'|'-') term)*
    def expression(self) -> Expr:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                rhs = self.term()
                node = add(node, rhs) if val == "+" else sub(node, rhs)
            else:
                return node

    # term := unary (('*'|'/') unary)*
    def term(self) -> Expr:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.take()
                rhs = self.unary()
                node = mul(node, rhs) if val == "*" else div(node, rhs)
            else:
                return node

    # unary := '-' unary | power
    def unary(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return neg(self.unary())
        return self.power()

    # power := atom ('^' unary)?   (exponent must fold to a constant)
    def power(self) -> Expr:
        base = self.atom()
        kind, val, off = self.peek()
        if kind == "op" and val == "^":
            self.take()
            exponent = self.unary()
            if not isinstance(exponent, Const):
                raise ParseError("exponent must be a numeric constant", off)
            return pow_(base, exponent)
        return base

    def atom(self) -> Expr:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in VARIABLES:
                return Var(val)
            if val in FUNCTIONS:
                self.expect_op("(")
                arg = self.expression()
                self.expect_op(")")
                return Call(val, arg)
            raise ParseError(f"unknown identifier '{val}'", off)
        if kind == "op" and val == "(":
            inner = self.expression()
            self.expect_op(")")
            return inner
        if kind == "end":
            raise ParseError("unexpected end of input", off)
        raise ParseError(f"unexpected token '{val}'", off)


def parse(text: str) -> Expr:
    """Parse infix text into an expression tree.

    Precedence: ^  >  unary -  >  * /  >  + -.  Implicit multiplication is
    rejected.  Rational literals like 3/2 fold to constants.
    """
    if not text or not text.strip():
        raise ParseError("empty input", 0)
    p = _Parser(text)
    node = p.expression()
    kind, val, off = p.peek()
    if kind != "end":
        raise ParseError(f"unexpected token '{val}'", off)
    return node


# ---------------------------------------------------------------------------
# compiled evaluation

_MATH_NS = {
    "_sin": math.sin, "_cos": math.cos, "_tan": math.tan, "_exp": math.exp,
    "_ln": math.log, "_sqrt": math.sqrt, "_abs": abs, "_sign": _sign,
}


def _numpy_ns():
    import numpy as np

    return {
        "_sin": np.sin, "_cos": np.cos, "_tan": np.tan, "_exp": np.exp,
        "_ln": np.log, "_sqrt": np.sqrt, "_abs": np.abs,
        "_sign": lambda v: np.sign(v).astype(float),
    }


@lru_cache(maxsize=None)
def compiled(expr: Expr, vector: bool = False):
    """Fast callable (x, y) -> value.

    The scalar backend uses math.* and mirrors eval() minus the guarded
    domain errors; the vector backend broadcasts over numpy arrays.
    """
    ns = dict(_numpy_ns() if vector else _MATH_NS)
    src = f"def _compiled(x, y):\n    return {expr._code()}\n"
    exec(src, ns)
    return ns["_compiled"]


# ---------------------------------------------------------------------------
# structural helpers

def substitute(expr: Expr, var: str, value: float) -> Expr:
    """Replace a variable by a constant, folding what collapses."""
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Var):
        return Const(value) if expr.name == var else expr
    if isinstance(expr, Neg):
        return neg(substitute(expr.arg, var, value))
    if isinstance(expr, Call):
        inner = substitute(expr.arg, var, value)
        if isinstance(inner, Const):
            try:
                return Const(Call(expr.func, inner).eval(0.0, 0.0))
            except DomainError:
                pass
        return Call(expr.func, inner)
    assert isinstance(expr, BinOp)
    a = substitute(expr.left, var, value)
    b = substitute(expr.right, var, value)
    ctor = {"+": add, "-": sub, "*": mul, "/": div, "^": pow_}[expr.op]
    return ctor(a, b)


def as_polynomial(expr: Expr) -> dict[tuple[int, int], Fraction]:
    """Exact monomial form {(i, j): coefficient} of a polynomial tree.

    Coefficients are exact binary fractions of the float constants, so two
    trees built from the same literals normalize identically.  Raises
    ValueError on non-polynomial structure.
    """
    if isinstance(expr, Const):
        return {(0, 0): Fraction(expr.value)} if expr.value else {}
    if isinstance(expr, Var):
        key = (1, 0) if expr.name == "x" else (0, 1)
        return {key: Fraction(1)}
    if isinstance(expr, Neg):
        return {k: -v for k, v in as_polynomial(expr.arg).items()}
    if isinstance(expr, BinOp):
        if expr.op in "+-":
            out = dict(as_polynomial(expr.left))
            s = 1 if expr.op == "+" else -1
            for k, v in as_polynomial(expr.right).items():
                out[k] = out.get(k, Fraction(0)) + s * v
            return {k: v for k, v in out.items() if v}
        if expr.op == "*":
            a, b = as_polynomial(expr.left), as_polynomial(expr.right)
            out: dict[tuple[int, int], Fraction] = {}
            for (i, j), u in a.items():
                for (k, l), w in b.items():
                    key = (i + k, j + l)
                    out[key] = out.get(key, Fraction(0)) + u * w
            return {k: v for k, v in out.items() if v}
        if expr.op == "/":
            den = as_polynomial(expr.right)
            if set(den) - {(0, 0)}:
                raise ValueError("non-constant denominator")
            c = den.get((0, 0), Fraction(0))
            if c == 0:
                raise ValueError("zero denominator")
            return {k: v / c for k, v in as_polynomial(expr.left).items()}
        # power with integral non-negative exponent
        e = expr.right.value  # type: ignore[attr-defined]
        if not _is_integral(e) or e < 0:
            raise ValueError("non-polynomial exponent")
        out = {(0, 0): Fraction(1)}
        base = as_polynomial(expr.left)
        for _ in range(int(e)):
            nxt: dict[tuple[int, int], Fraction] = {}
            for (i, j), u in out.items():
                for (k, l), w in base.items():
                    key = (i + k, j + l)
                    nxt[key] = nxt.get(key, Fraction(0)) + u * w
            out = nxt
        return {k: v for k, v in out.items() if v}
    raise ValueError(f"not a polynomial: {expr}")


def polynomially_equal(a: Expr, b: Expr) -> bool:
    return as_polynomial(a) == as_polynomial(b)
