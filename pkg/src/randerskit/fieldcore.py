"""Chart-based calculus on symbolic scalar expressions.

Expressions are small immutable trees over the chart coordinates ``x1..xn``.
They differentiate symbolically and compile (with common-subexpression
elimination) to numpy functions that accept real or complex coordinate
arrays of shape ``(n, ...)``.  Complex input is what the variational
equations rely on, so every primitive here must stay holomorphic: no
``abs``, no comparisons, no branch on values.

The grammar is documented in ``docs/grammar.md``::

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = ("+" | "-") unary | power ;
    power   = primary [ ("^" | "**") unary ] ;
    primary = number | "pi" | symbol | func "(" expr ")" | "(" expr ")" ;
    symbol  = "x" digit { digit } ;
    func    = "exp" | "log" | "sqrt" | "sin" | "cos" | "tanh" ;
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    ExpressionSyntaxError,
    NotPositiveDefinite,
    SingularityError,
    UnknownSymbolError,
)

FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "tanh")

# precedence levels used by the printer
_P_ADD, _P_MUL, _P_NEG, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


# ---------------------------------------------------------------------------
# expression tree
# ---------------------------------------------------------------------------

class FieldExpr:
    """Immutable expression node.  Structural equality, cached hash."""

    __slots__ = ("_key", "_hash")

    def _init(self, key):
        object.__setattr__(self, "_key", key)
        object.__setattr__(self, "_hash", hash(key))

    def __setattr__(self, name, value):
        raise AttributeError("FieldExpr is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, FieldExpr) or self._hash != other._hash:
            return False
        return self._key == other._key

    def __reduce__(self):
        return (_rebuild, (self._key,))

    # arithmetic sugar used when assembling composite fields
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return _format(self)[0]

    def __repr__(self):
        return f"FieldExpr({str(self)!r})"

    # convenience
    def diff(self, i: int) -> "FieldExpr":
        """Symbolic partial derivative with respect to the 0-based coordinate ``i``."""
        return diff(self, i)

    def symbols(self) -> frozenset:
        return _symbols(self)

    def __call__(self, x):
        return evaluate(self, x)


class Const(FieldExpr):
    __slots__ = ()

    def __init__(self, value):
        # +0.0 normalises -0.0, which would otherwise print as "0" but format as negative
        self._init(("c", float(value) + 0.0))

    @property
    def value(self):
        return self._key[1]


class Var(FieldExpr):
    __slots__ = ()

    def __init__(self, index: int):
        self._init(("v", int(index)))

    @property
    def index(self):
        return self._key[1]


class _Binary(FieldExpr):
    __slots__ = ()
    tag = ""

    def __init__(self, a, b):
        self._init((self.tag, a, b))

    @property
    def a(self):
        return self._key[1]

    @property
    def b(self):
        return self._key[2]


class Add(_Binary):
    __slots__ = ()
    tag = "+"


class Sub(_Binary):
    __slots__ = ()
    tag = "-"


class Mul(_Binary):
    __slots__ = ()
    tag = "*"


class Div(_Binary):
    __slots__ = ()
    tag = "/"


class Pow(_Binary):
    __slots__ = ()
    tag = "^"


class Neg(FieldExpr):
    __slots__ = ()

    def __init__(self, a):
        self._init(("neg", a))

    @property
    def a(self):
        return self._key[1]


class Func(FieldExpr):
    __slots__ = ()

    def __init__(self, name: str, a):
        if name not in FUNCTIONS:
            raise ValueError(f"unknown function {name!r}")
        self._init(("f", name, a))

    @property
    def name(self):
        return self._key[1]

    @property
    def a(self):
        return self._key[2]


_BINARY = {cls.tag: cls for cls in (Add, Sub, Mul, Div, Pow)}


def _rebuild(key):
    tag = key[0]
    if tag == "c":
        return Const(key[1])
    if tag == "v":
        return Var(key[1])
    if tag == "neg":
        return Neg(key[1])
    if tag == "f":
        return Func(key[1], key[2])
    return _BINARY[tag](key[1], key[2])


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> FieldExpr:
    if isinstance(value, FieldExpr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    if isinstance(value, str):
        return parse_expression(value)
    raise TypeError(f"cannot convert {type(value).__name__} to FieldExpr")


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


def _fold(op, *values):
    try:
        out = op(*values)
    except (ArithmeticError, ValueError):
        return None
    if isinstance(out, complex) or not math.isfinite(out):
        return None
    return Const(out)


# smart constructors: light simplification, never changes values

def add(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        return _fold(lambda u, v: u + v, a.value, b.value) or Add(a, b)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        return _fold(lambda u, v: u - v, a.value, b.value) or Sub(a, b)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if a == b:
        return ZERO
    return Sub(a, b)


def mul(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        return _fold(lambda u, v: u * v, a.value, b.value) or Mul(a, b)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return Mul(a, b)


def div(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        return _fold(lambda u, v: u / v, a.value, b.value) or Div(a, b)
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def power(a, b):
    a, b = as_expr(a), as_expr(b)
    if _is_const(a) and _is_const(b):
        return _fold(lambda u, v: u ** v, a.value, b.value) or Pow(a, b)
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return ONE
    return Pow(a, b)


def neg(a):
    a = as_expr(a)
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def func(name, a):
    if isinstance(a, Const):
        fn = getattr(math, name)
        folded = _fold(fn, a.value)
        if folded is not None:
            return folded
    return Func(name, a)


def var(i: int) -> FieldExpr:
    return Var(i)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _symbols(e):
    if isinstance(e, Var):
        return frozenset((e.index,))
    if isinstance(e, Const):
        return frozenset()
    out = frozenset()
    for child in e._key[1:]:
        if isinstance(child, FieldExpr):
            out |= _symbols(child)
    return out


@lru_cache(maxsize=None)
def diff(e: FieldExpr, i: int) -> FieldExpr:
    if i not in _symbols(e):
        return ZERO
    if isinstance(e, Var):
        return ONE
    if isinstance(e, Add):
        return add(diff(e.a, i), diff(e.b, i))
    if isinstance(e, Sub):
        return sub(diff(e.a, i), diff(e.b, i))
    if isinstance(e, Neg):
        return neg(diff(e.a, i))
    if isinstance(e, Mul):
        return add(mul(diff(e.a, i), e.b), mul(e.a, diff(e.b, i)))
    if isinstance(e, Div):
        da, db = diff(e.a, i), diff(e.b, i)
        # (a/b)' = a'/b - a b'/b^2
        return sub(div(da, e.b), div(mul(e.a, db), power(e.b, Const(2.0))))
    if isinstance(e, Pow):
        base, ex = e.a, e.b
        dbase = diff(base, i)
        if i not in _symbols(ex):
            return mul(mul(ex, power(base, sub(ex, ONE))), dbase)
        dex = diff(ex, i)
        return mul(e, add(mul(dex, func("log", base)), div(mul(ex, dbase), base)))
    if isinstance(e, Func):
        u, du = e.a, diff(e.a, i)
        name = e.name
        if name == "exp":
            outer = e
        elif name == "log":
            return div(du, u)
        elif name == "sqrt":
            return div(du, mul(Const(2.0), e))
        elif name == "sin":
            outer = func("cos", u)
        elif name == "cos":
            outer = neg(func("sin", u))
        elif name == "tanh":
            outer = sub(ONE, power(e, Const(2.0)))
        else:  # pragma: no cover - guarded by Func.__init__
            raise ValueError(name)
        return mul(outer, du)
    raise TypeError(type(e))  # pragma: no cover


def gradient(e: FieldExpr, dim: int) -> list:
    return [diff(e, i) for i in range(dim)]


def hessian(e: FieldExpr, dim: int) -> list:
    g = gradient(e, dim)
    return [[diff(g[i], j) if j >= i else None for j in range(dim)] for i in range(dim)]


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

def _format(e):
    """Return (text, precedence)."""
    if isinstance(e, Const):
        v = e.value
        if v == math.pi:
            return "pi", _P_ATOM
        text = str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
        if v < 0:
            return text, _P_NEG
        return text, _P_ATOM
    if isinstance(e, Var):
        return f"x{e.index + 1}", _P_ATOM
    if isinstance(e, Func):
        return f"{e.name}({_format(e.a)[0]})", _P_ATOM
    if isinstance(e, Neg):
        text, p = _format(e.a)
        if p < _P_POW:
            text = f"({text})"
        return f"-{text}", _P_NEG
    if isinstance(e, Pow):
        lt, lp = _format(e.a)
        rt, rp = _format(e.b)
        if lp <= _P_POW:
            lt = f"({lt})"
        if rp < _P_NEG:
            rt = f"({rt})"
        return f"{lt}^{rt}", _P_POW
    level = _P_ADD if isinstance(e, (Add, Sub)) else _P_MUL
    lt, lp = _format(e.a)
    rt, rp = _format(e.b)
    if lp < level:
        lt = f"({lt})"
    if rp <= level:
        rt = f"({rt})"
    return f"{lt} {e.tag} {rt}", level


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text):
    pos = 0
    tokens = []
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        value = m.group(kind)
        if value == "**":
            value = "^"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, v, pos = self.take()
        if v != value or kind == "end":
            found = "end of input" if kind == "end" else repr(v)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", self.text, pos)

    def parse(self):
        e = self.expr()
        kind, v, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {v!r}", self.text, pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self):
        kind, v, _ = self.peek()
        if kind == "op" and v in ("+", "-"):
            self.take()
            inner = self.unary()
            return inner if v == "+" else neg(inner)
        return self.power()

    def power(self):
        base = self.primary()
        kind, v, _ = self.peek()
        if kind == "op" and v == "^":
            self.take()
            return power(base, self.unary())
        return base

    def primary(self):
        kind, v, pos = self.take()
        if kind == "num":
            return Const(float(v))
        if kind == "name":
            if v in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(v, arg)
            if v == "pi":
                return Const(math.pi)
            m = re.fullmatch(r"x([1-9]\d*)", v)
            if m:
                idx = int(m.group(1))
                if self.dim is not None and idx > self.dim:
                    raise UnknownSymbolError(
                        f"symbol {v!r} exceeds chart dimension {self.dim}", self.text, pos)
                return Var(idx - 1)
            raise UnknownSymbolError(f"unknown symbol {v!r}", self.text, pos)
        if kind == "op" and v == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(v)
        raise ExpressionSyntaxError(f"unexpected {found}", self.text, pos)


def parse_expression(text: str, dim: int | None = None) -> FieldExpr:
    if not isinstance(text, str):
        return as_expr(text)
    return _Parser(text, dim).parse()


def parse_field(text: str, chart: "Chart") -> FieldExpr:
    """Parse ``text`` into an expression over the coordinates of ``chart``."""
    return parse_expression(text, chart.dim)


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------

_NP_FUNC = {name: f"np.{name}" for name in FUNCTIONS}


def _emit(exprs):
    lines = ["def _bundle(x):", "    _z = x[0] * 0.0"]
    names = {}
    counter = [0]

    def code(e):
        if isinstance(e, Const):
            return repr(e.value)
        if isinstance(e, Var):
            return f"x[{e.index}]"
        if e in names:
            return names[e]
        # iterative post-order to keep deep trees off the Python stack
        stack = [(e, False)]
        while stack:
            node, ready = stack.pop()
            if isinstance(node, (Const, Var)) or node in names:
                continue
            children = [c for c in node._key[1:] if isinstance(c, FieldExpr)]
            if not ready:
                stack.append((node, True))
                stack.extend((c, False) for c in reversed(children))
                continue
            args = [code(c) for c in children]
            if isinstance(node, Func):
                rhs = f"{_NP_FUNC[node.name]}({args[0]})"
            elif isinstance(node, Neg):
                rhs = f"-{args[0]}"
            elif isinstance(node, Pow):
                rhs = f"{args[0]} ** {args[1]}"
            else:
                rhs = f"{args[0]} {node.tag} {args[1]}"
            name = f"t{counter[0]}"
            counter[0] += 1
            lines.append(f"    {name} = {rhs}")
            names[node] = name
        return names[e]

    outs = [f"(_z + {code(e)})" if isinstance(e, (Const, Var)) else code(e) for e in exprs]
    lines.append(f"    return np.stack(({', '.join(outs)},))")
    return "\n".join(lines)


class Bundle:
    """Compiled evaluator for a flat list of expressions.

    ``bundle(x)`` with ``x`` of shape ``(n, *batch)`` returns an array of shape
    ``(len(exprs), *batch)``; dtype follows ``x`` (complex input supported).
    """

    def __init__(self, exprs: Sequence[FieldExpr]):
        self.exprs = tuple(exprs)
        if not self.exprs:
            raise ValueError("empty bundle")
        self.source = _emit(self.exprs)
        namespace = {"np": np}
        exec(compile(self.source, "<randerskit-bundle>", "exec"), namespace)
        self._fn = namespace["_bundle"]

    def __len__(self):
        return len(self.exprs)

    def raw(self, x):
        with np.errstate(all="ignore"):
            return self._fn(x)

    def __call__(self, x):
        out = self.raw(x)
        if not np.all(np.isfinite(out)):
            raise SingularityError("non-finite value while evaluating field")
        return out

    def __reduce__(self):
        return (Bundle, (self.exprs,))


def evaluate(e: FieldExpr, x):
    """Evaluate one expression at a point or a batch ``(n, ...)``."""
    b = _single_bundle(e)
    x = np.asarray(x, dtype=float) if not np.iscomplexobj(x) else np.asarray(x)
    if x.ndim == 0:
        x = x[None]
    out = b.raw(x)[0]
    if not np.all(np.isfinite(out)):
        raise SingularityError(f"{e} is singular at x={x.tolist()}")
    return out[()] if out.ndim == 0 else out


@lru_cache(maxsize=4096)
def _single_bundle(e):
    return Bundle([e])


# ---------------------------------------------------------------------------
# chart
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Chart:
    """One coordinate box, optionally periodic per axis.

    Periodic axes are integrated unwrapped (universal cover); ``lower`` on such
    an axis is the origin of the fundamental domain and ``upper`` is ignored.
    """

    dim: int
    lower: tuple = None
    upper: tuple = None
    periodic: tuple = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("chart dimension must be >= 1")
        n = self.dim
        lower = tuple(float(v) for v in (self.lower if self.lower is not None else [-math.inf] * n))
        upper = tuple(float(v) for v in (self.upper if self.upper is not None else [math.inf] * n))
        periodic = tuple(None if p is None else float(p)
                         for p in (self.periodic if self.periodic is not None else [None] * n))
        if not (len(lower) == len(upper) == len(periodic) == n):
            raise DimensionMismatch("chart bounds do not match dimension")
        for k in range(n):
            if periodic[k] is not None:
                if not periodic[k] > 0:
                    raise ValueError(f"period on axis {k + 1} must be positive")
                if not math.isfinite(lower[k]):
                    lower = lower[:k] + (0.0,) + lower[k + 1:]
            elif not lower[k] < upper[k]:
                raise ValueError(f"chart axis {k + 1}: lower must be < upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "periodic", periodic)

    @property
    def is_periodic(self):
        return any(p is not None for p in self.periodic)

    def contains(self, x) -> np.ndarray:
        """Strict interior test on non-periodic axes; works on ``(n, ...)`` batches."""
        x = np.real(np.asarray(x))
        ok = np.ones(x.shape[1:], dtype=bool)
        for k in range(self.dim):
            if self.periodic[k] is None:
                ok &= (x[k] > self.lower[k]) & (x[k] < self.upper[k])
        return ok

    def wrap(self, x):
        """Map periodic coordinates into their fundamental domain."""
        x = np.array(x, dtype=float)
        for k, period in enumerate(self.periodic):
            if period is not None:
                x[k] = self.lower[k] + np.mod(x[k] - self.lower[k], period)
        return x

    def wrap_delta(self, d):
        """Map a coordinate difference to its representative nearest zero."""
        d = np.array(d, dtype=float)
        for k, period in enumerate(self.periodic):
            if period is not None:
                d[k] = d[k] - period * np.round(d[k] / period)
        return d

    def to_dict(self):
        def enc(v):
            return None if v is None or not math.isfinite(v) else v
        return {
            "dim": self.dim,
            "lower": [enc(v) for v in self.lower],
            "upper": [enc(v) for v in self.upper],
            "periodic": list(self.periodic),
        }


def _as_point(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise DimensionMismatch(f"expected a point of dimension {dim}, got shape {x.shape}")
    return x


def _exprs(items, chart):
    return tuple(parse_field(t, chart) if isinstance(t, str) else as_expr(t) for t in items)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarField:
    chart: Chart
    expr: FieldExpr

    @classmethod
    def parse(cls, text, chart):
        return cls(chart, _exprs([text], chart)[0])

    @property
    def grad_exprs(self):
        return gradient(self.expr, self.chart.dim)

    def __call__(self, x):
        return evaluate(self.expr, _as_point(x, self.chart.dim))

    def derivatives(self, x):
        """Value, gradient and coordinate Hessian at ``x`` (batch ``(n, m)`` allowed)."""
        n = self.chart.dim
        b = _scalar_bundle(self.expr, n)
        out = b(np.asarray(x, dtype=float))
        value = out[0]
        grad = out[1:1 + n]
        hess = np.empty((n, n) + out.shape[1:])
        k = 1 + n
        for i in range(n):
            for j in range(i, n):
                hess[i, j] = hess[j, i] = out[k]
                k += 1
        return value, grad, hess

    def __str__(self):
        return str(self.expr)


@lru_cache(maxsize=256)
def _scalar_bundle(expr, n):
    g = gradient(expr, n)
    exprs = [expr] + g + [diff(g[i], j) for i in range(n) for j in range(i, n)]
    return Bundle(exprs)


@dataclass(frozen=True)
class VectorField:
    """Contravariant components ``B^i``."""

    chart: Chart
    components: tuple

    def __post_init__(self):
        if len(self.components) != self.chart.dim:
            raise DimensionMismatch(
                f"{type(self).__name__} needs {self.chart.dim} components, got {len(self.components)}")

    @classmethod
    def parse(cls, items, chart):
        return cls(chart, _exprs(items, chart))

    def __call__(self, x):
        return _vector_bundle(self.components)(_as_point(x, self.chart.dim))

    def jacobian(self, x):
        """``J[i, k] = d(component i)/dx^k``."""
        n = self.chart.dim
        exprs = tuple(diff(c, k) for c in self.components for k in range(n))
        return _vector_bundle(exprs)(_as_point(x, n)).reshape(n, n)

    def __str__(self):
        return "(" + ", ".join(map(str, self.components)) + ")"


class OneFormField(VectorField):
    """Covariant components ``omega_i``."""


@lru_cache(maxsize=1024)
def _vector_bundle(exprs):
    return Bundle(exprs)


@dataclass(frozen=True)
class MetricField:
    """Symmetric matrix of expressions; symmetry is enforced at construction."""

    chart: Chart
    components: tuple  # n x n tuple of tuples

    def __post_init__(self):
        n = self.chart.dim
        rows = self.components
        if len(rows) != n or any(len(r) != n for r in rows):
            raise DimensionMismatch(f"metric must be {n}x{n}")
        for i in range(n):
            for j in range(i + 1, n):
                if rows[i][j] != rows[j][i]:
                    raise ValueError(
                        f"metric is not symmetric: g[{i + 1}][{j + 1}]={rows[i][j]} "
                        f"but g[{j + 1}][{i + 1}]={rows[j][i]}")

    @classmethod
    def parse(cls, rows, chart):
        n = chart.dim
        if len(rows) != n:
            raise DimensionMismatch(f"metric must have {n} rows")
        parsed = [list(_exprs(r, chart)) for r in rows]
        return cls(chart, tuple(tuple(r) for r in parsed))

    @classmethod
    def euclidean(cls, chart):
        n = chart.dim
        return cls(chart, tuple(tuple(ONE if i == j else ZERO for j in range(n)) for i in range(n)))

    @classmethod
    def conformal(cls, chart, factor):
        n = chart.dim
        eta = as_expr(factor) if not isinstance(factor, str) else parse_field(factor, chart)
        return cls(chart, tuple(tuple(eta if i == j else ZERO for j in range(n)) for i in range(n)))

    def upper(self):
        n = self.chart.dim
        return [self.components[i][j] for i in range(n) for j in range(i, n)]

    def __call__(self, x):
        x = _as_point(x, self.chart.dim)
        g = _matrix_from_upper(_vector_bundle(tuple(self.upper()))(x), self.chart.dim)
        check_positive_definite(g, x)
        return g

    def scaled(self, factor: FieldExpr) -> "MetricField":
        """Pointwise product with a scalar expression."""
        return MetricField(self.chart, tuple(tuple(mul(factor, c) for c in row) for row in self.components))

    def __str__(self):
        return "[" + "; ".join(", ".join(map(str, r)) for r in self.components) + "]"


def _matrix_from_upper(flat, n):
    g = np.empty((n, n) + flat.shape[1:], dtype=flat.dtype)
    k = 0
    for i in range(n):
        for j in range(i, n):
            g[i, j] = g[j, i] = flat[k]
            k += 1
    return g


def check_positive_definite(g, x):
    """Leading principal minors test at a single point."""
    n = g.shape[0]
    for k in range(1, n + 1):
        if not np.linalg.det(g[:k, :k]) > 0:
            raise NotPositiveDefinite(x, f"(leading minor {k} <= 0)")


# ---------------------------------------------------------------------------
# Riemannian quantities at single points
# ---------------------------------------------------------------------------

def _metric_and_derivs(h: MetricField, x):
    n = h.chart.dim
    x = _as_point(x, n)
    up = h.upper()
    exprs = tuple(up) + tuple(diff(c, k) for k in range(n) for c in up)
    flat = _vector_bundle(exprs)(x)
    m = len(up)
    g = _matrix_from_upper(flat[:m], n)
    check_positive_definite(g, x)
    dg = np.stack([_matrix_from_upper(flat[m * (k + 1):m * (k + 2)], n) for k in range(n)])
    return g, dg  # dg[k, i, j] = d_k h_ij


def christoffel(h: MetricField, x) -> np.ndarray:
    """Levi-Civita symbols ``G[k, i, j]`` of ``h`` at ``x``."""
    g, dg = _metric_and_derivs(h, x)
    # first kind: G_lij = (d_i h_lj + d_j h_li - d_l h_ij) / 2
    first = 0.5 * (np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg)
    return np.linalg.solve(g, first.reshape(g.shape[0], -1)).reshape(first.shape)


def riemannian_grad_hess(f: ScalarField, h: MetricField, x):
    """Gradient ``h^{-1} df`` and covariant Hessian ``d^2 f - Gamma . df``."""
    x = _as_point(x, h.chart.dim)
    g, _ = _metric_and_derivs(h, x)
    gamma = christoffel(h, x)
    _, df, ddf = f.derivatives(x)
    hess = ddf - np.einsum("kij,k->ij", gamma, df)
    return np.linalg.solve(g, df), 0.5 * (hess + hess.T)


def lower_index(h: MetricField, B: VectorField) -> OneFormField:
    """Symbolic one-form ``omega_j = h_jk B^k``."""
    n = h.chart.dim
    comps = []
    for j in range(n):
        acc = ZERO
        for k in range(n):
            acc = add(acc, mul(h.components[j][k], B.components[k]))
        comps.append(acc)
    return OneFormField(h.chart, tuple(comps))


def curl_operator(B: VectorField, h: MetricField, x) -> np.ndarray:
    """Matrix ``C`` with ``CurlB(v) = C @ v``.

    ``h(CurlB(v), w) = h(nabla_w B, v) - h(nabla_v B, w)``; with
    ``omega = h(B, .)`` this is ``h^{-1} (d_l omega_j - d_j omega_l)``.
    """
    x = _as_point(x, h.chart.dim)
    g, _ = _metric_and_derivs(h, x)
    omega = lower_index(h, B)
    d_omega = omega.jacobian(x)  # [j, l] = d_l omega_j
    m = d_omega.T - d_omega       # [l, j] = d_l omega_j - d_j omega_l
    return np.linalg.solve(g, m)
