"""A small arithmetic expression language for coefficient functions.

Grammar (``^`` binds tighter than unary minus, and is right associative)::

    expr   := term (("+" | "-") term)*
    term   := unary (("*" | "/") unary)*
    unary  := ("+" | "-") unary | power
    power  := atom ("^" unary)?
    atom   := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"

Variables are ``x``, ``t``, ``y`` (and ``x2`` in two space dimensions); ``pi``
is a constant; functions are ``exp``, ``sin``, ``cos`` and ``abs``.  Parsed
expressions are turned into sympy trees so that derivatives in ``y`` are
exact.
"""

from __future__ import annotations

import re

import numpy as np
import sympy as sp

FUNCTIONS = {"exp": sp.exp, "sin": sp.sin, "cos": sp.cos, "abs": sp.Abs}
VARIABLES = ("x", "x2", "t", "y")
_SYMBOLS = {name: sp.Symbol(name, real=True) for name in VARIABLES}
_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


class ExpressionError(ValueError):
    """Parse or evaluation failure; ``position`` is a 0-based column in the source."""

    def __init__(self, message: str, source: str, position: int):
        caret = " " * position + "^"
        super().__init__(f"{message} at position {position}\n  {source}\n  {caret}")
        self.source = source
        self.position = position


def _tokenize(src: str):
    toks = []
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            break
        num, name, op = m.groups()
        start = m.end() - len(num or name or op or "")
        if num:
            toks.append(("num", num, start))
        elif name:
            toks.append(("name", name, start))
        elif op and not op.isspace():
            if op not in "+-*/^()":
                raise ExpressionError(f"unexpected character {op!r}", src, start)
            toks.append(("op", op, start))
        pos = m.end()
    toks.append(("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str, variables):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExpressionError(msg, self.src, tok[2])

    def expect(self, op):
        tok = self.take()
        if tok != ("op", op, tok[2]):
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            self.fail(f"expected {op!r}, found {what}", tok)

    def parse(self):
        if self.peek()[0] == "end":
            self.fail("empty expression")
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            rhs = self.term()
            node = node + rhs if op == "+" else node - rhs
        return node

    def term(self):
        node = self.unary()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            rhs = self.unary()
            node = node * rhs if op == "*" else node / rhs
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return -self.unary()
        if self.peek()[:2] == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return base ** self.unary()
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return sp.Float(text) if any(c in text for c in ".eE") else sp.Integer(text)
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return FUNCTIONS[text](arg)
            if text == "pi":
                return sp.pi
            if text in self.variables:
                return _SYMBOLS[text]
            self.fail(f"unknown name {text!r}", tok)
        if tok[:2] == ("op", "("):
            node = self.expr()
            self.expect(")")
            return node
        what = "end of input" if kind == "end" else repr(text)
        self.fail(f"unexpected {what}", tok)


class Expression:
    """A parsed coefficient ``e(x, t, y)``, callable on broadcastable arrays.

    In 2D ``x`` is passed as the pair ``(x1, x2)``; ``x`` in the source refers
    to the first coordinate and ``x2`` to the second.
    """

    def __init__(self, source: str, dim: int = 1, sym=None):
        self.source = str(source)
        self.dim = dim
        allowed = ("x", "t", "y") if dim == 1 else VARIABLES
        self.sym = sym if sym is not None else _Parser(self.source, allowed).parse()
        if self.sym.has(sp.zoo, sp.oo, -sp.oo, sp.nan):
            raise ExpressionError("expression simplifies to a non-finite value", self.source, 0)
        args = [_SYMBOLS[n] for n in VARIABLES]
        self._fn = sp.lambdify(args, self.sym, modules="numpy")

    def __repr__(self):
        return f"Expression({self.source!r})"

    @property
    def free(self) -> set[str]:
        return {s.name for s in self.sym.free_symbols}

    def diff(self, var: str = "y") -> "Expression":
        return Expression(self.source, self.dim, sp.diff(self.sym, _SYMBOLS[var]))

    def __call__(self, x, t, y=0.0):
        if self.dim == 1:
            x1, x2 = x, 0.0
        else:
            x1, x2 = x
        with np.errstate(all="ignore"):
            out = self._fn(x1, x2, t, y)
        shape = np.broadcast_shapes(np.shape(x1), np.shape(x2), np.shape(t), np.shape(y))
        return np.broadcast_to(np.asarray(out, dtype=float), shape)

    def check(self, rng, n_points: int = 10, length: float = 1.0, horizon: float = 1.0,
              y_range=(-2.0, 2.0)):
        """Evaluate at random points and raise :class:`ExpressionError` on a non-finite value."""
        x = rng.uniform(0.0, length, n_points)
        x = x if self.dim == 1 else (x, rng.uniform(0.0, length, n_points))
        t = rng.uniform(0.0, horizon, n_points)
        y = rng.uniform(*y_range, n_points)
        vals = self(x, t, y)
        if not np.all(np.isfinite(vals)):
            raise ExpressionError("expression is not finite at sampled points", self.source, 0)


def parse(source, dim: int = 1) -> Expression:
    if isinstance(source, (int, float)):
        source = repr(float(source))
    if not isinstance(source, str):
        raise ExpressionError(f"expected an expression string, got {type(source).__name__}", str(source), 0)
    return Expression(source, dim)
