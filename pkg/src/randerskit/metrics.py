"""Randers structures from generic, Zermelo or Fermat data.

A structure always carries the Riemannian part ``h`` and the one-form
``omega`` symbolically, so ``F(x, y) = sqrt(h(y, y)) + omega(y)``.  The
vector field ``B`` with ``omega = h(B, .)`` is solved pointwise.

Batched evaluation works on component-first arrays: points ``(n, m)``,
matrices ``(n, n, m)``.  Kernels accept complex input (used for
complex-step linearisation) and never branch on values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from .errors import (
    DimensionMismatch,
    NonpositiveBeta,
    NormViolation,
    PositivityFailure,
    ProvenanceMismatch,
    WindTooStrong,
    ZeroVectorAtDerivative,
)
from .fieldcore import (
    ONE,
    ZERO,
    Bundle,
    Chart,
    MetricField,
    OneFormField,
    ScalarField,
    Var,
    VectorField,
    _as_point,
    _matrix_from_upper,
    add,
    check_positive_definite,
    diff,
    div,
    func,
    mul,
    neg,
    sub,
)
from .sampling import sobol_box, sphere_directions


# ---------------------------------------------------------------------------
# provenance records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Generic:
    kind = "generic"

    def to_dict(self):
        return {"kind": "generic"}


@dataclass(frozen=True)
class Zermelo:
    g: MetricField
    W: VectorField
    kind = "zermelo"

    def to_dict(self):
        return {"kind": "zermelo", "g": [[str(c) for c in r] for r in self.g.components],
                "W": [str(c) for c in self.W.components]}


@dataclass(frozen=True)
class Fermat:
    g0: MetricField
    delta: VectorField
    beta: ScalarField
    kind = "fermat"

    def to_dict(self):
        return {"kind": "fermat", "g0": [[str(c) for c in r] for r in self.g0.components],
                "delta": [str(c) for c in self.delta.components], "beta": str(self.beta.expr)}


# ---------------------------------------------------------------------------
# small batched linear algebra (elementwise over the trailing batch axis)
# ---------------------------------------------------------------------------

def solve_spd(A, rhs):
    """Solve ``A X = rhs`` for ``A`` of shape ``(n, n, m)`` and ``rhs`` ``(n, r, m)``.

    Gaussian elimination without pivoting (``A`` symmetric positive definite).
    Returns ``(X, pivots)``; pivots are the ratios of consecutive leading
    principal minors, so ``min(real(pivots)) > 0`` certifies definiteness.
    """
    n = A.shape[0]
    a = [[A[i, j] for j in range(n)] for i in range(n)]
    b = [rhs[i] for i in range(n)]
    pivots = []
    for k in range(n):
        piv = a[k][k]
        pivots.append(piv)
        inv = 1.0 / piv
        for i in range(k + 1, n):
            f = a[i][k] * inv
            for j in range(k + 1, n):
                a[i][j] = a[i][j] - f * a[k][j]
            b[i] = b[i] - f * b[k]
    x = [None] * n
    for i in range(n - 1, -1, -1):
        acc = b[i]
        for j in range(i + 1, n):
            acc = acc - a[i][j] * x[j]
        x[i] = acc / a[i][i]
    return np.stack(x), np.stack(pivots)


def quad(A, u, v):
    """``u^T A v`` batched."""
    return np.einsum("ijm,im,jm->m", A, u, v)


# ---------------------------------------------------------------------------
# the structure
# ---------------------------------------------------------------------------

class RandersStructure:
    """Riemannian metric ``h`` plus one-form ``omega`` with ``|omega|_h < 1``."""

    def __init__(self, h: MetricField, omega: OneFormField, provenance=None):
        if h.chart.dim != omega.chart.dim:
            raise DimensionMismatch("h and omega live on charts of different dimension")
        self.chart = h.chart
        self.h = h
        self.omega = omega
        self.provenance = provenance if provenance is not None else Generic()
        self._cache = {}

    @property
    def dim(self):
        return self.chart.dim

    def __getstate__(self):
        return {"h": self.h, "omega": self.omega, "provenance": self.provenance}

    def __setstate__(self, state):
        self.__init__(state["h"], state["omega"], state["provenance"])

    def __repr__(self):
        return f"RandersStructure(dim={self.dim}, provenance={self.provenance.kind})"

    def to_dict(self):
        return {
            "chart": self.chart.to_dict(),
            "h": [[str(c) for c in r] for r in self.h.components],
            "omega": [str(c) for c in self.omega.components],
            "provenance": self.provenance.to_dict(),
        }

    # -- compiled evaluators ------------------------------------------------

    def _bundle(self, name):
        b = self._cache.get(name)
        if b is None:
            b = self._cache[name] = getattr(self, "_build_" + name)()
        return b

    def _build_geometry(self):
        n = self.dim
        up = self.h.upper()
        om = list(self.omega.components)
        exprs = list(up)
        exprs += [diff(c, k) for k in range(n) for c in up]
        exprs += om
        exprs += [diff(c, k) for k in range(n) for c in om]
        return Bundle(exprs)

    def _build_fermat(self):
        g0, delta, beta = self.fermat_data()
        n = self.dim
        p = g0.scaled(div(ONE, beta.expr))
        up = p.upper()
        d = list(delta.components)
        exprs = list(up) + [diff(c, k) for k in range(n) for c in up] + d
        exprs += [diff(c, k) for c in d for k in range(n)]
        return Bundle(exprs)

    def geometry(self, X):
        """Metric data at a batch of points ``X`` of shape ``(n, m)``.

        Returns a namespace with ``h (n,n,m)``, ``dh (n,n,n,m)`` where
        ``dh[k, i, j] = d_k h_ij``, ``omega (n,m)`` and ``domega (n,n,m)``
        with ``domega[k, i] = d_k omega_i``.
        """
        n = self.dim
        flat = self._bundle("geometry").raw(X)
        u = n * (n + 1) // 2
        h = _matrix_from_upper(flat[:u], n)
        dh = np.stack([_matrix_from_upper(flat[u * (k + 1):u * (k + 2)], n) for k in range(n)])
        o = u * (n + 1)
        omega = flat[o:o + n]
        domega = flat[o + n:o + n + n * n].reshape((n, n) + flat.shape[1:])
        return SimpleNamespace(h=h, dh=dh, omega=omega, domega=domega)

    def fermat_geometry(self, X):
        """``p = g0/beta`` data plus ``delta`` and its partials (see :meth:`geometry`)."""
        n = self.dim
        flat = self._bundle("fermat").raw(X)
        u = n * (n + 1) // 2
        p = _matrix_from_upper(flat[:u], n)
        dp = np.stack([_matrix_from_upper(flat[u * (k + 1):u * (k + 2)], n) for k in range(n)])
        o = u * (n + 1)
        delta = flat[o:o + n]
        ddelta = flat[o + n:o + n + n * n].reshape((n, n) + flat.shape[1:])  # [i, k] = d_k delta^i
        return SimpleNamespace(p=p, dp=dp, delta=delta, ddelta=ddelta)

    def fermat_data(self):
        """``(g0, delta, beta)`` for Fermat or Zermelo provenance."""
        prov = self.provenance
        if isinstance(prov, Fermat):
            return prov.g0, prov.delta, prov.beta
        if isinstance(prov, Zermelo):
            return zermelo_as_fermat(prov.g, prov.W)
        raise ProvenanceMismatch("structure has no stationary-spacetime (g0, delta, beta) data")

    # -- pointwise evaluation -----------------------------------------------

    def B(self, x):
        """Vector field with ``omega = h(B, .)``, solved at ``x``."""
        x = _as_point(x, self.dim)
        geo = self.geometry(x[:, None])
        sol, piv = solve_spd(geo.h, geo.omega[:, None, :])
        if not np.all(piv.real > 0):
            check_positive_definite(geo.h[..., 0], x)
        return sol[:, 0, 0]

    def omega_norm(self, x):
        """``|omega|_x = |B|_h``."""
        x = _as_point(x, self.dim)
        geo = self.geometry(x[:, None])
        check_positive_definite(geo.h[..., 0], x)
        sol, _ = solve_spd(geo.h, geo.omega[:, None, :])
        return float(np.sqrt(np.sum(geo.omega[:, 0] * sol[:, 0, 0])))

    def validate(self, points, error=NormViolation):
        for x in np.atleast_2d(np.asarray(points, dtype=float)):
            value = self.omega_norm(x)
            if not value < 1.0:
                raise error(x, value)


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def _validation_points(chart: Chart, points, count=256, seed=0):
    if points is not None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0:
            return pts.reshape(0, chart.dim)
        if pts.shape[1] != chart.dim:
            raise DimensionMismatch("validation points have the wrong dimension")
        return pts
    lo = np.array(chart.lower)
    hi = np.array(chart.upper)
    for k, period in enumerate(chart.periodic):
        if period is not None:
            hi[k] = lo[k] + period
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        return np.empty((0, chart.dim))
    span = hi - lo
    return sobol_box(lo + 1e-6 * span, hi - 1e-6 * span, count, seed)


def randers_from_generic(h: MetricField, omega: OneFormField, validation_points=None) -> RandersStructure:
    """Randers structure ``sqrt(h(y,y)) + omega(y)``; checks ``|omega| < 1`` on the given points."""
    if isinstance(omega, VectorField) and not isinstance(omega, OneFormField):
        omega = OneFormField(omega.chart, omega.components)
    R = RandersStructure(h, omega, Generic())
    R.validate(_validation_points(h.chart, validation_points))
    return R


def _fermat_h_omega(g0: MetricField, delta: VectorField, beta: ScalarField):
    n = g0.chart.dim
    inv_beta = div(ONE, beta.expr)
    p = [[mul(c, inv_beta) for c in row] for row in g0.components]
    pdelta = []
    for i in range(n):
        acc = ZERO
        for j in range(n):
            acc = add(acc, mul(p[i][j], delta.components[j]))
        pdelta.append(acc)
    h = tuple(tuple(add(p[i][j], mul(pdelta[i], pdelta[j])) for j in range(n)) for i in range(n))
    # rebuild the symmetric copy from the upper triangle so h[i][j] is h[j][i]
    h = tuple(tuple(h[min(i, j)][max(i, j)] for j in range(n)) for i in range(n))
    return MetricField(g0.chart, h), OneFormField(g0.chart, tuple(pdelta))


def zermelo_as_fermat(g: MetricField, W: VectorField):
    """Fermat data of a Zermelo problem: ``beta = 1 - |W|^2`` and ``delta = -W``."""
    n = g.chart.dim
    w2 = ZERO
    for i in range(n):
        for j in range(n):
            w2 = add(w2, mul(g.components[i][j], mul(W.components[i], W.components[j])))
    beta = ScalarField(g.chart, sub(ONE, w2))
    delta = VectorField(g.chart, tuple(neg(c) for c in W.components))
    return g, delta, beta


def wind_norm(g: MetricField, W: VectorField, x) -> float:
    gx = g(x)
    w = W(x)
    return float(np.sqrt(w @ gx @ w))


def randers_from_zermelo(g: MetricField, W: VectorField, validation_points=None) -> RandersStructure:
    """Travel-time metric of unit-speed navigation in the wind ``W`` (``|W|_g < 1``)."""
    pts = _validation_points(g.chart, validation_points)
    for x in pts:
        value = wind_norm(g, W, x)
        if not value < 1.0:
            raise WindTooStrong(x, value)
    g0, delta, beta = zermelo_as_fermat(g, W)
    h, omega = _fermat_h_omega(g0, delta, beta)
    R = RandersStructure(h, omega, Zermelo(g, W))
    R.validate(pts, error=WindTooStrong)
    return R


def randers_from_fermat(g0: MetricField, delta: VectorField, beta: ScalarField,
                        validation_points=None) -> RandersStructure:
    """Fermat metric of the stationary spacetime ``g0 + 2 g0(delta, .) dt - beta dt^2``."""
    pts = _validation_points(g0.chart, validation_points)
    for x in pts:
        b = float(beta(x))
        if not b > 0:
            raise NonpositiveBeta(x, b)
    h, omega = _fermat_h_omega(g0, delta, beta)
    R = RandersStructure(h, omega, Fermat(g0, delta, beta))
    # |omega|_h^2 = a / (1 + a) with a = |delta|_p^2, so this only trips on bad numerics
    R.validate(pts)
    return R


# ---------------------------------------------------------------------------
# F and friends
# ---------------------------------------------------------------------------

def eval_F(R: RandersStructure, x, y) -> float:
    """``F(x, y)``; zero at ``y = 0`` by continuity."""
    x = _as_point(x, R.dim)
    y = _as_point(y, R.dim)
    geo = R.geometry(x[:, None])
    h = geo.h[..., 0]
    check_positive_definite(h, x)
    if not np.any(y):
        return 0.0
    return float(np.sqrt(y @ h @ y) + geo.omega[:, 0] @ y)


def eval_F_batch(R: RandersStructure, X, Y):
    geo = R.geometry(X)
    return np.sqrt(quad(geo.h, Y, Y)) + np.sum(geo.omega * Y, axis=0)


def _tangent_F_squared(R: RandersStructure):
    """Symbolic ``F^2/2`` over the doubled chart ``(x1..xn, y1..yn)``."""
    n = R.dim
    ys = [Var(n + i) for i in range(n)]
    hyy = ZERO
    for i in range(n):
        for j in range(n):
            hyy = add(hyy, mul(R.h.components[i][j], mul(ys[i], ys[j])))
    wy = ZERO
    for i in range(n):
        wy = add(wy, mul(R.omega.components[i], ys[i]))
    F = add(func("sqrt", hyy), wy)
    return mul(0.5, mul(F, F)), ys


def fundamental_tensor(R: RandersStructure, x, y) -> np.ndarray:
    """``g_ij = (1/2) d^2 F^2 / dy^i dy^j`` by symbolic differentiation in ``y``."""
    x = _as_point(x, R.dim)
    y = _as_point(y, R.dim)
    if not np.any(y):
        raise ZeroVectorAtDerivative("the fundamental tensor is undefined at y = 0")
    b = R._cache.get("fundamental")
    n = R.dim
    if b is None:
        half_f2, _ = _tangent_F_squared(R)
        exprs = [diff(diff(half_f2, n + i), n + j) for i in range(n) for j in range(i, n)]
        b = R._cache["fundamental"] = Bundle(exprs)
    R.geometry(x[:, None])  # metric positivity is checked through eval below
    g = _matrix_from_upper(b(np.concatenate([x, y])), n)
    try:
        check_positive_definite(g, x)
    except Exception:
        raise PositivityFailure(x.tolist(), y.tolist()) from None
    return g


@dataclass(frozen=True)
class IndicatrixSample:
    x: np.ndarray
    vectors: np.ndarray  # (count, n), each with F(x, v) = 1


def indicatrix(R: RandersStructure, x, count: int = 64, seed: int = 0) -> IndicatrixSample:
    """Unit-``F`` vectors ``u / F(x, u)`` for quasi-uniform Euclidean directions ``u``."""
    if count < 2 * R.dim:
        raise ValueError(f"indicatrix needs at least {2 * R.dim} samples")
    x = _as_point(x, R.dim)
    U = sphere_directions(R.dim, count, seed)
    X = np.repeat(x[:, None], count, axis=1)
    F = eval_F_batch(R, X, U.T)
    if not np.all(F > 0):
        raise NormViolation(x, R.omega_norm(x))
    return IndicatrixSample(x, U / F[:, None])


def randers_length(R: RandersStructure, curve, nodes: int = 8) -> float:
    """Integral of ``F`` along a trajectory (Gauss-Legendre on each stored step)."""
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    s = curve.s
    for a, b in zip(s[:-1], s[1:]):
        if b == a:
            continue
        ts = 0.5 * (b - a) * gx + 0.5 * (a + b)
        X, Y = curve.evaluate(ts)
        total += 0.5 * (b - a) * float(np.sum(gw * eval_F_batch(R, X.T, Y.T)))
    return total


def is_finite_box(lower, upper):
    return all(math.isfinite(v) for v in lower) and all(math.isfinite(v) for v in upper)
