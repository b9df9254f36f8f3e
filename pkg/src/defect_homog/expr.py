"""A small expression language for the nonlinearities c(x, u) and d(x, u).

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := "-" unary | power
    power  := atom ("^" ["-"] INTEGER)?
    atom   := NUMBER | "x" | "u<i>" | "pi" | FUNC "(" expr ")" | "(" expr ")"

FUNC is one of sin, cos, exp, tanh, step. ``step`` may only depend on x.
Expressions evaluate on numpy arrays and differentiate symbolically in u.
"""

from dataclasses import dataclass
import math
import re

import numpy as np

from .errors import ParseError

FUNCTIONS = ("sin", "cos", "exp", "tanh", "step")
STEP_TOL = 1e-12


class Expr:
    __slots__ = ()

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class X(Expr):
    pass


@dataclass(frozen=True)
class U(Expr):
    index: int  # zero-based component


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    k: int


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


ZERO = Num(0.0)
ONE = Num(1.0)


# -- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    toks = []
    pos = 0
    raw = text.encode()
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if not m:
            off = len(text[:pos].encode())
            raise ParseError(f"unexpected character {text[pos]!r}", off,
                             {"number", "identifier", "operator"})
        kind = m.lastgroup
        start = m.start(kind)
        toks.append((kind, m.group(kind), len(text[:start].encode())))
        pos = m.end()
    toks.append(("eof", "", len(raw)))
    return toks


class _Parser:
    def __init__(self, text, n):
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, expected):
        kind, val, off = self.peek()
        what = "end of input" if kind == "eof" else f"token {val!r}"
        raise ParseError(f"unexpected {what}", off, expected)

    def expect(self, val):
        if self.peek()[1] != val or self.peek()[0] == "eof":
            self.fail({val})
        return self.take()

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "eof":
            self.fail({"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self):
        left = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            left = Bin(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            left = Bin(op, left, self.unary())
        return left

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            sign = 1
            if self.peek()[:2] == ("op", "-"):
                self.take()
                sign = -1
            kind, val, _ = self.peek()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                self.fail({"integer exponent"})
            self.take()
            return Pow(base, sign * int(val))
        return base

    _ATOM_START = {"number", "x", "u1..un", "pi", "(", "-"} | set(FUNCTIONS)

    def atom(self):
        kind, val, off = self.peek()
        if kind == "num":
            self.take()
            return Num(float(val))
        if kind == "id":
            self.take()
            if val == "x":
                return X()
            if val == "pi":
                return Num(math.pi)
            m = re.fullmatch(r"u([1-9]\d*)", val)
            if m:
                idx = int(m.group(1))
                if idx > self.n:
                    raise ParseError(f"variable {val} exceeds dimension {self.n}", off,
                                     {f"u1..u{self.n}"})
                return U(idx - 1)
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            raise ParseError(f"unknown identifier {val!r}", off, self._ATOM_START)
        if (kind, val) == ("op", "("):
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        self.fail(self._ATOM_START)


def parse_expression(text, n):
    """Parse ``text`` into an expression over x and u1..un.

    Raises
    ------
    ParseError
        With the byte offset of the first bad token and the expected tokens.
    """
    if not text or not text.strip():
        raise ParseError("empty expression", 0, {"expression"})
    return _Parser(text, n).parse()


# -- printing ----------------------------------------------------------------

def to_text(e):
    """Fully parenthesized text that re-parses to an equal-valued expression."""
    if isinstance(e, Num):
        s = repr(float(e.value))
        return f"({s})" if e.value < 0 or s.startswith("-") else s
    if isinstance(e, X):
        return "x"
    if isinstance(e, U):
        return f"u{e.index + 1}"
    if isinstance(e, Neg):
        return f"(-{to_text(e.arg)})"
    if isinstance(e, Bin):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        return f"({to_text(e.base)} ^ {e.k})"
    if isinstance(e, Call):
        return f"{e.fn}({to_text(e.arg)})"
    raise TypeError(e)


# -- analysis ----------------------------------------------------------------

def depends_on_u(e):
    if isinstance(e, U):
        return True
    if isinstance(e, (Num, X)):
        return False
    if isinstance(e, (Neg, Call)):
        return depends_on_u(e.arg)
    if isinstance(e, Pow):
        return depends_on_u(e.base)
    return depends_on_u(e.left) or depends_on_u(e.right)


def walk(e):
    yield e
    if isinstance(e, (Neg, Call)):
        yield from walk(e.arg)
    elif isinstance(e, Pow):
        yield from walk(e.base)
    elif isinstance(e, Bin):
        yield from walk(e.left)
        yield from walk(e.right)


# -- evaluation --------------------------------------------------------------

_UNARY = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh}


def evaluate(e, x, u, side=1):
    """Evaluate on arrays: ``x`` of shape (K,), ``u`` of shape (K, n).

    ``side`` selects the one-sided limit of ``step`` at its jump:
    +1 for the right limit, -1 for the left limit.
    """
    if isinstance(e, Num):
        return np.full(np.shape(x), e.value)
    if isinstance(e, X):
        return np.asarray(x, dtype=float)
    if isinstance(e, U):
        return u[..., e.index]
    if isinstance(e, Neg):
        return -evaluate(e.arg, x, u, side)
    if isinstance(e, Bin):
        a = evaluate(e.left, x, u, side)
        b = evaluate(e.right, x, u, side)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b
    if isinstance(e, Pow):
        base = evaluate(e.base, x, u, side)
        return base ** e.k if e.k >= 0 else 1.0 / base ** (-e.k)
    if isinstance(e, Call):
        a = evaluate(e.arg, x, u, side)
        if e.fn == "step":
            at_jump = np.abs(a) <= STEP_TOL
            return np.where(at_jump, 1.0 if side > 0 else 0.0, (a > 0).astype(float))
        return _UNARY[e.fn](a)
    raise TypeError(e)


# -- differentiation ---------------------------------------------------------

def _is(e, v):
    return isinstance(e, Num) and e.value == v


def add(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return Bin("+", a, b)


def sub(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return Bin("-", a, b)


def mul(a, b):
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return Bin("*", a, b)


def div(a, b):
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Bin("/", a, b)


def neg(a):
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, k):
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Num) and (k > 0 or a.value != 0.0):
        return Num(a.value ** k)
    return Pow(a, k)


def diff(e, j):
    """Symbolic derivative with respect to the component u_{j+1}."""
    if isinstance(e, (Num, X)):
        return ZERO
    if isinstance(e, U):
        return ONE if e.index == j else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, j))
    if isinstance(e, Bin):
        a, b = e.left, e.right
        da, db = diff(a, j), diff(b, j)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if isinstance(e, Pow):
        db = diff(e.base, j)
        if _is(db, 0.0):
            return ZERO
        return mul(mul(Num(float(e.k)), power(e.base, e.k - 1)), db)
    if isinstance(e, Call):
        if e.fn == "step":
            return ZERO
        da = diff(e.arg, j)
        if _is(da, 0.0):
            return ZERO
        a = e.arg
        outer = {
            "sin": lambda: Call("cos", a),
            "cos": lambda: neg(Call("sin", a)),
            "exp": lambda: Call("exp", a),
            "tanh": lambda: sub(ONE, power(Call("tanh", a), 2)),
        }[e.fn]()
        return mul(outer, da)
    raise TypeError(e)
