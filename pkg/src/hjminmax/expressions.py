"""Infix expressions over (t, x, p) with forward-mode first derivatives.

Parses a small smooth language for Hamiltonians H(t, x, p) and for the C^2
pieces of initial data:

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?          right-associative, integer exponent
    atom   := number | t | x | p | fn '(' expr ')' | '(' expr ')'

with fn in {sin, cos, exp, tanh}.  Exponents must fold to integers at parse
time and are evaluated by repeated multiplication, so every expression is
C-infinity in its arguments; kinks live only in piecewise initial data, never
inside an expression.

Evaluation is pure and vectorizes over ndarray inputs.  ``eval_plain``
computes values with plain numpy arithmetic (the fast path for grid sweeps);
``eval_with_grad`` carries the three first partials (d/dt, d/dx, d/dp)
through every operation as a dual number, exact up to rounding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ParseError",
    "Expression",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "Dual",
    "parse",
    "to_source",
    "variables",
    "eval_plain",
    "eval_with_grad",
]

_FUNCTIONS = ("sin", "cos", "exp", "tanh")
_VARIABLES = ("t", "x", "p")


class ParseError(ValueError):
    """Malformed expression source; carries the character position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


# ---------------------------------------------------------------------------
# AST


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str  # one of t, x, p


@dataclass(frozen=True)
class Unary(Node):
    op: str  # neg | sin | cos | exp | tanh
    arg: Node


@dataclass(frozen=True)
class Binary(Node):
    op: str  # add | sub | mul | div
    lhs: Node
    rhs: Node


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: int


@dataclass(frozen=True)
class Expression:
    """Immutable parsed expression; safe to share across threads."""

    ast: Node
    source: str


# ---------------------------------------------------------------------------
# Tokenizer / parser

_NUMBER_RE = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_OP_CHARS = "+-*/^()"


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        m = _NUMBER_RE.match(source, i)
        if m:
            tokens.append(("num", m.group(), i))
            i = m.end()
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            tokens.append(("ident", m.group(), i))
            i = m.end()
            continue
        if c in _OP_CHARS:
            tokens.append((c, c, i))
            i += 1
            continue
        raise ParseError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


def _fold_const(node: Node):
    """Value of a constant subtree, or None if it contains a variable."""
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Unary) and node.op == "neg":
        v = _fold_const(node.arg)
        return None if v is None else -v
    if isinstance(node, Binary):
        a, b = _fold_const(node.lhs), _fold_const(node.rhs)
        if a is None or b is None:
            return None
        if node.op == "add":
            return a + b
        if node.op == "sub":
            return a - b
        if node.op == "mul":
            return a * b
        return a / b
    if isinstance(node, Pow):
        v = _fold_const(node.base)
        return None if v is None else float(v) ** node.exponent
    return None


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.k = 0

    def peek(self):
        return self.tokens[self.k]

    def take(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {text!r}", pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            node = Binary("add" if op == "+" else "sub", node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            node = Binary("mul" if op == "*" else "div", node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek()[0] == "-":
            self.take()
            return Unary("neg", self.factor())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "^":
            _, _, pos = self.take()
            exp_node = self.factor()  # recursion makes ^ right-associative
            value = _fold_const(exp_node)
            if value is None:
                raise ParseError("exponent must be a constant", pos)
            if abs(value - round(value)) > 1e-12:
                raise ParseError(f"non-integer exponent {value}", pos)
            return Pow(base, int(round(value)))
        return base

    def atom(self) -> Node:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if text in _VARIABLES:
                return Var(text)
            if text in _FUNCTIONS:
                k2, _, p2 = self.take()
                if k2 != "(":
                    raise ParseError(f"expected '(' after {text}", p2)
                arg = self.expr()
                k3, _, p3 = self.take()
                if k3 != ")":
                    raise ParseError("expected ')'", p3)
                return Unary(text, arg)
            raise ParseError(f"unknown identifier {text!r}", pos)
        if kind == "(":
            node = self.expr()
            k2, _, p2 = self.take()
            if k2 != ")":
                raise ParseError("expected ')'", p2)
            return node
        if kind == "end":
            raise ParseError("unexpected end of input", pos)
        raise ParseError(f"unexpected {text!r}", pos)


def parse(source: str) -> Expression:
    """Parse infix source over {t, x, p} into an immutable Expression."""
    return Expression(_Parser(source).parse(), source)


def variables(expr) -> set:
    """Names of the variables that actually occur in the expression."""
    node = expr.ast if isinstance(expr, Expression) else expr
    out: set = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Unary):
            stack.append(n.arg)
        elif isinstance(n, Binary):
            stack.extend((n.lhs, n.rhs))
        elif isinstance(n, Pow):
            stack.append(n.base)
    return out


# ---------------------------------------------------------------------------
# Printing (round-trips through parse at value level)

# precedence levels: add/sub 1, mul/div 2, unary minus 3, pow 4, atoms 5
_BIN_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
_BIN_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}


def _render(node: Node) -> tuple[str, int]:
    if isinstance(node, Const):
        text = repr(float(node.value))
        return text, (3 if node.value < 0 else 5)
    if isinstance(node, Var):
        return node.name, 5
    if isinstance(node, Unary):
        arg_text, arg_prec = _render(node.arg)
        if node.op == "neg":
            if arg_prec < 3:
                arg_text = f"({arg_text})"
            return f"-{arg_text}", 3
        return f"{node.op}({arg_text})", 5
    if isinstance(node, Binary):
        prec = _BIN_PREC[node.op]
        lhs_text, lhs_prec = _render(node.lhs)
        rhs_text, rhs_prec = _render(node.rhs)
        if lhs_prec < prec:
            lhs_text = f"({lhs_text})"
        # parenthesize equal-precedence rhs: keeps the tree left-associated,
        # so round-tripped sources evaluate bit-identically
        if rhs_prec <= prec:
            rhs_text = f"({rhs_text})"
        return f"{lhs_text}{_BIN_SYM[node.op]}{rhs_text}", prec
    if isinstance(node, Pow):
        base_text, base_prec = _render(node.base)
        if base_prec < 5:
            base_text = f"({base_text})"
        exp_text = str(node.exponent) if node.exponent >= 0 else f"({node.exponent})"
        return f"{base_text}^{exp_text}", 4
    raise TypeError(f"not an AST node: {node!r}")


def to_source(expr) -> str:
    """Infix text that reparses to a value-identical expression."""
    node = expr.ast if isinstance(expr, Expression) else expr
    return _render(node)[0]


# ---------------------------------------------------------------------------
# Dual numbers and evaluation


class Dual:
    """Value plus exact first partials (d/dt, d/dx, d/dp).

    Components may be scalars or broadcast-compatible ndarrays; derivative
    slots that never pick up a dependence simply stay scalar 0.0.
    """

    __slots__ = ("val", "dt", "dx", "dp")

    def __init__(self, val, dt=0.0, dx=0.0, dp=0.0):
        self.val, self.dt, self.dx, self.dp = val, dt, dx, dp

    @staticmethod
    def _lift(other) -> "Dual":
        return other if isinstance(other, Dual) else Dual(other)

    def __add__(self, other):
        o = Dual._lift(other)
        return Dual(self.val + o.val, self.dt + o.dt, self.dx + o.dx, self.dp + o.dp)

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual._lift(other)
        return Dual(self.val - o.val, self.dt - o.dt, self.dx - o.dx, self.dp - o.dp)

    def __rsub__(self, other):
        return Dual._lift(other) - self

    def __mul__(self, other):
        o = Dual._lift(other)
        return Dual(
            self.val * o.val,
            self.val * o.dt + o.val * self.dt,
            self.val * o.dx + o.val * self.dx,
            self.val * o.dp + o.val * self.dp,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = Dual._lift(other)
        inv = 1.0 / o.val
        q = self.val * inv
        return Dual(
            q,
            (self.dt - q * o.dt) * inv,
            (self.dx - q * o.dx) * inv,
            (self.dp - q * o.dp) * inv,
        )

    def __rtruediv__(self, other):
        return Dual._lift(other) / self

    def __neg__(self):
        return Dual(-self.val, -self.dt, -self.dx, -self.dp)


def _chain(a: Dual, fval, fgrad) -> Dual:
    return Dual(fval, fgrad * a.dt, fgrad * a.dx, fgrad * a.dp)


def _dual_ipow(a: Dual, n: int) -> Dual:
    if n == 0:
        return Dual(np.ones_like(a.val) if isinstance(a.val, np.ndarray) else 1.0)
    if n < 0:
        return 1.0 / _dual_ipow(a, -n)
    out = a
    for _ in range(n - 1):
        out = out * a
    return out


def _ipow(base, n: int):
    if n == 0:
        return np.ones_like(base) if isinstance(base, np.ndarray) else 1.0
    if n < 0:
        return 1.0 / _ipow(base, -n)
    out = base
    for _ in range(n - 1):
        out = out * base
    return out


def _eval_plain(node: Node, t, x, p):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Var):
        return t if node.name == "t" else (x if node.name == "x" else p)
    if isinstance(node, Unary):
        a = _eval_plain(node.arg, t, x, p)
        if node.op == "neg":
            return -a
        if node.op == "sin":
            return np.sin(a)
        if node.op == "cos":
            return np.cos(a)
        if node.op == "exp":
            return np.exp(a)
        return np.tanh(a)
    if isinstance(node, Binary):
        a = _eval_plain(node.lhs, t, x, p)
        b = _eval_plain(node.rhs, t, x, p)
        if node.op == "add":
            return a + b
        if node.op == "sub":
            return a - b
        if node.op == "mul":
            return a * b
        return a / b
    if isinstance(node, Pow):
        return _ipow(_eval_plain(node.base, t, x, p), node.exponent)
    raise TypeError(f"not an AST node: {node!r}")


def _eval_dual(node: Node, dt_: Dual, dx_: Dual, dp_: Dual) -> Dual:
    if isinstance(node, Const):
        return Dual(node.value)
    if isinstance(node, Var):
        return dt_ if node.name == "t" else (dx_ if node.name == "x" else dp_)
    if isinstance(node, Unary):
        a = _eval_dual(node.arg, dt_, dx_, dp_)
        if node.op == "neg":
            return -a
        if node.op == "sin":
            return _chain(a, np.sin(a.val), np.cos(a.val))
        if node.op == "cos":
            return _chain(a, np.cos(a.val), -np.sin(a.val))
        if node.op == "exp":
            fv = np.exp(a.val)
            return _chain(a, fv, fv)
        fv = np.tanh(a.val)
        return _chain(a, fv, 1.0 - fv * fv)
    if isinstance(node, Binary):
        a = _eval_dual(node.lhs, dt_, dx_, dp_)
        b = _eval_dual(node.rhs, dt_, dx_, dp_)
        if node.op == "add":
            return a + b
        if node.op == "sub":
            return a - b
        if node.op == "mul":
            return a * b
        return a / b
    if isinstance(node, Pow):
        return _dual_ipow(_eval_dual(node.base, dt_, dx_, dp_), node.exponent)
    raise TypeError(f"not an AST node: {node!r}")


def eval_plain(expr, t, x, p):
    """Value of the expression; vectorizes over ndarray arguments."""
    node = expr.ast if isinstance(expr, Expression) else expr
    with np.errstate(divide="raise", invalid="raise", over="raise"):
        return _eval_plain(node, t, x, p)


def eval_with_grad(expr, t, x, p):
    """(value, d/dt, d/dx, d/dp) at (t, x, p), exact up to rounding.

    Derivative outputs may be scalar 0.0 when the expression has no
    dependence on the corresponding variable, even for array inputs.
    """
    node = expr.ast if isinstance(expr, Expression) else expr
    with np.errstate(divide="raise", invalid="raise", over="raise"):
        d = _eval_dual(
            node,
            Dual(t, 1.0, 0.0, 0.0),
            Dual(x, 0.0, 1.0, 0.0),
            Dual(p, 0.0, 0.0, 1.0),
        )
    return d.val, d.dt, d.dx, d.dp
