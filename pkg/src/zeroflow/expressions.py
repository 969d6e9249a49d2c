"""A small arithmetic expression grammar over {t, x, u}.

Configs specify forcing terms, reaction terms and potentials as text like
``"0.2*sin(2*pi*x)*cos(2*pi*t)"`` or ``"u - u^3"``. The grammar supports
+ - * / ^, parentheses, unary minus, float literals, the constant ``pi``
and the functions ``sin``, ``cos``, ``exp``. Spatial-derivative symbols are
deliberately absent. Parsing is total: it yields an evaluable expression or
raises ExpressionError with the offending offset, never a partial result.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ExpressionError

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTANTS = {"pi": np.pi}


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class _Num:
    value: float

    def eval(self, env):
        return self.value


@dataclass(frozen=True)
class _Var:
    name: str

    def eval(self, env):
        return env[self.name]


@dataclass(frozen=True)
class _Unary:
    child: object

    def eval(self, env):
        return -self.child.eval(env)


@dataclass(frozen=True)
class _Bin:
    op: str
    left: object
    right: object

    def eval(self, env):
        a = self.left.eval(env)
        b = self.right.eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return np.power(a, b)


@dataclass(frozen=True)
class _Call:
    fn: str
    arg: object

    def eval(self, env):
        return _FUNCTIONS[self.fn](self.arg.eval(env))


# --- tokenizer ---------------------------------------------------------------


def _tokenize(src: str):
    tokens = []
    i, n = 0, len(src)
    while i < n:
        c = src[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^()":
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (src[j].isdigit() or src[j] == "."):
                if src[j] == ".":
                    if seen_dot:
                        raise ExpressionError("malformed number", j)
                    seen_dot = True
                j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    while k < n and src[k].isdigit():
                        k += 1
                    j = k
            try:
                val = float(src[i:j])
            except ValueError:
                raise ExpressionError("malformed number", i)
            tokens.append(("num", val, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(("ident", src[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {c!r}", i)
    tokens.append(("end", None, n))
    return tokens


# --- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens, allowed_vars):
        self.tokens = tokens
        self.pos = 0
        self.allowed = set(allowed_vars)
        self.seen_vars: set[str] = set()

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind):
        tok = self.next()
        if tok[0] != kind:
            raise ExpressionError(f"expected {kind!r}", tok[2])
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError("unexpected trailing input", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.next()[0]
            node = _Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.next()[0]
            node = _Bin(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "-":
            self.next()
            return _Unary(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            self.next()
            return _Bin("^", base, self.unary())
        return base

    def atom(self):
        tok = self.next()
        kind, val, pos = tok
        if kind == "num":
            return _Num(val)
        if kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "ident":
            if val in _FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _Call(val, arg)
            if val in _CONSTANTS:
                return _Num(_CONSTANTS[val])
            if val in self.allowed:
                self.seen_vars.add(val)
                return _Var(val)
            raise ExpressionError(f"unknown identifier {val!r}", pos)
        if kind == "end":
            raise ExpressionError("unexpected end of input", pos)
        raise ExpressionError(f"unexpected token {val!r}", pos)


@dataclass(frozen=True)
class Expression:
    """A compiled expression; call with keyword arrays/scalars for t, x, u."""

    source: str
    variables: frozenset
    root: object

    def __call__(self, **env):
        missing = self.variables - env.keys()
        if missing:
            raise TypeError(f"expression {self.source!r} needs {sorted(missing)}")
        out = self.root.eval(env)
        return np.asarray(out, dtype=np.float64) if np.ndim(out) else float(out)


def parse_expression(src: str, allowed_vars: Iterable[str] = ("t", "x", "u")) -> Expression:
    """Parse source text into an evaluable Expression.

    Raises ExpressionError (with the source offset) on syntax errors and
    on identifiers outside ``allowed_vars`` + {pi, sin, cos, exp}.
    """
    parser = _Parser(_tokenize(src), allowed_vars)
    root = parser.parse()
    return Expression(source=src, variables=frozenset(parser.seen_vars), root=root)


# --- symbolic helpers used by the nonlinearity builders ----------------------


def differentiate(node, var: str):
    """Symbolic derivative of an AST with respect to ``var``."""
    if isinstance(node, _Num):
        return _Num(0.0)
    if isinstance(node, _Var):
        return _Num(1.0 if node.name == var else 0.0)
    if isinstance(node, _Unary):
        return _Unary(differentiate(node.child, var))
    if isinstance(node, _Call):
        inner = differentiate(node.arg, var)
        if node.fn == "sin":
            outer = _Call("cos", node.arg)
        elif node.fn == "cos":
            outer = _Unary(_Call("sin", node.arg))
        else:  # exp
            outer = _Call("exp", node.arg)
        return _Bin("*", outer, inner)
    if isinstance(node, _Bin):
        a, b = node.left, node.right
        da, db = differentiate(a, var), differentiate(b, var)
        if node.op in "+-":
            return _Bin(node.op, da, db)
        if node.op == "*":
            return _Bin("+", _Bin("*", da, b), _Bin("*", a, db))
        if node.op == "/":
            num = _Bin("-", _Bin("*", da, b), _Bin("*", a, db))
            return _Bin("/", num, _Bin("*", b, b))
        # a^c with constant exponent only
        if not isinstance(b, _Num):
            raise ExpressionError("cannot differentiate a non-constant exponent", 0)
        c = b.value
        return _Bin("*", _Bin("*", _Num(c), _Bin("^", a, _Num(c - 1.0))), da)
    raise TypeError(f"unknown node {node!r}")


def derivative_expression(expr: Expression, var: str) -> Expression:
    root = differentiate(expr.root, var)
    return Expression(source=f"d({expr.source})/d{var}", variables=expr.variables, root=root)


def polynomial_coefficients(node, var: str):
    """Coefficients {power: coeff} if the AST is a polynomial in ``var``.

    Returns None when the expression is not polynomial (it may still be a
    perfectly valid expression; callers then fall back to quadrature).
    """
    if isinstance(node, _Num):
        return {0: node.value}
    if isinstance(node, _Var):
        if node.name == var:
            return {1: 1.0}
        return None
    if isinstance(node, _Unary):
        inner = polynomial_coefficients(node.child, var)
        if inner is None:
            return None
        return {k: -v for k, v in inner.items()}
    if isinstance(node, _Call):
        return None
    if isinstance(node, _Bin):
        a = polynomial_coefficients(node.left, var)
        if node.op in "+-*":
            b = polynomial_coefficients(node.right, var)
            if a is None or b is None:
                return None
            if node.op == "*":
                out: dict[int, float] = {}
                for ka, va in a.items():
                    for kb, vb in b.items():
                        out[ka + kb] = out.get(ka + kb, 0.0) + va * vb
                return out
            sign = 1.0 if node.op == "+" else -1.0
            out = dict(a)
            for k, v in b.items():
                out[k] = out.get(k, 0.0) + sign * v
            return out
        if node.op == "/":
            if a is None or not isinstance(node.right, _Num) or node.right.value == 0:
                return None
            return {k: v / node.right.value for k, v in a.items()}
        if node.op == "^":
            if a is None or not isinstance(node.right, _Num):
                return None
            p = node.right.value
            if p != int(p) or p < 0:
                return None
            out = {0: 1.0}
            for _ in range(int(p)):
                nxt: dict[int, float] = {}
                for ka, va in out.items():
                    for kb, vb in a.items():
                        nxt[ka + kb] = nxt.get(ka + kb, 0.0) + va * vb
                out = nxt
            return out
    return None


def polynomial_antiderivative(expr: Expression, var: str = "u"):
    """Antiderivative (vanishing at 0) when the expression is polynomial in var.

    Returns a numpy-vectorized callable or None.
    """
    coeffs = polynomial_coefficients(expr.root, var)
    if coeffs is None:
        return None
    degree = max(coeffs) if coeffs else 0
    poly = np.zeros(degree + 2)
    for k, v in coeffs.items():
        poly[k + 1] = v / (k + 1)

    def antiderivative(u):
        u = np.asarray(u, dtype=np.float64)
        out = np.zeros_like(u)
        for k in range(degree + 1, 0, -1):
            if poly[k] != 0.0:
                out += poly[k] * u**k
        return out

    return antiderivative


def quadrature_antiderivative(h, order: int = 48):
    """Antiderivative H(u) = int_0^u h via Gauss-Legendre on [0, u].

    Exact for polynomials of degree < 2*order and accurate far beyond 1e-12
    for smooth h on the bounded ranges the solver visits.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    xi = 0.5 * (nodes + 1.0)
    wi = 0.5 * weights

    def H(u):
        u = np.asarray(u, dtype=np.float64)
        s = u[..., None] * xi
        return u * np.sum(wi * h(s), axis=-1)

    return H
