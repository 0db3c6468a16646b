"""Finslerian Hessians and sample-based strict-convexity certificates.

Along a constant-``F`` geodesic ``gamma`` the second derivative of
``f o gamma`` is

    H_f(y, y) = H^h_f(y, y) + |y|_h df(Curl y)
                - df(y) / F(x, y) * (nabla omega(y, y) + |y|_h omega(Curl y)),

with ``H^h_f`` the Riemannian Hessian of ``f`` for ``h``.  The three terms
are reported separately.

Certificates evaluate sufficient pointwise inequalities on a deterministic
Sobol sample of a coordinate box; they are evidence, not proofs, and say so
in their output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateAt,
    DomainExit,
    NonpositiveBeta,
    NormDataUnavailable,
    NotCritical,
    StepSizeUnderflow,
    WindTooStrong,
    ZeroVectorAtDerivative,
)
from .fieldcore import MetricField, ScalarField, VectorField, _as_point, _matrix_from_upper, _vector_bundle, diff
from .geodesic import GeodesicState, integrate, randers_terms
from .metrics import RandersStructure, eval_F, eval_F_batch, indicatrix, zermelo_as_fermat
from .sampling import sobol_box, sphere_directions

DEFAULT_SAMPLES = 4096


# ---------------------------------------------------------------------------
# batched Riemannian helpers
# ---------------------------------------------------------------------------

def metric_batch(metric: MetricField, X):
    """``g (n, n, m)`` and ``dg[k, i, j] = d_k g_ij`` at points ``X (n, m)``."""
    n = metric.chart.dim
    up = tuple(metric.upper())
    exprs = up + tuple(diff(c, k) for k in range(n) for c in up)
    flat = _vector_bundle(exprs)(X)
    u = len(up)
    g = _matrix_from_upper(flat[:u], n)
    dg = np.stack([_matrix_from_upper(flat[u * (k + 1):u * (k + 2)], n) for k in range(n)])
    return g, dg


def vector_batch(field: VectorField, X):
    """Components ``(n, m)`` and Jacobian ``J[i, k] = d_k v^i`` ``(n, n, m)``."""
    n = field.chart.dim
    exprs = tuple(field.components) + tuple(diff(c, k) for c in field.components for k in range(n))
    flat = _vector_bundle(exprs)(X)
    return flat[:n], flat[n:].reshape((n, n) + flat.shape[1:])


def christoffel_batch(g, dg):
    """``Gamma[k, i, j]`` from batched metric data; trailing batch axis."""
    first = 0.5 * (np.einsum("ilj...->lij...", dg) + np.einsum("jli...->lij...", dg) - dg)
    gm = np.moveaxis(g, -1, 0)
    fm = np.moveaxis(first, -1, 0)
    n = g.shape[0]
    sol = np.linalg.solve(gm, fm.reshape(fm.shape[0], n, n * n))
    return np.moveaxis(sol.reshape(fm.shape), 0, -1)


def _chol(g):
    return np.linalg.cholesky(np.moveaxis(g, -1, 0))


def min_generalized_eig(H, g):
    """Smallest ``lambda`` with ``H v = lambda g v`` per batch member."""
    L = _chol(g)
    Hm = np.moveaxis(H, -1, 0)
    Hm = 0.5 * (Hm + np.swapaxes(Hm, 1, 2))
    X = np.linalg.solve(L, Hm)
    S = np.linalg.solve(L, np.swapaxes(X, 1, 2))
    return np.linalg.eigvalsh(S)[:, 0]


def operator_norm(A, g):
    """Operator norm of the ``(1,1)``-tensor ``A[k, i]`` (``v -> A v``) for the metric ``g``."""
    L = _chol(g)
    Am = np.moveaxis(A, -1, 0)
    # Lt A L^{-T}
    M = np.swapaxes(L, 1, 2) @ Am
    M = np.swapaxes(np.linalg.solve(L, np.swapaxes(M, 1, 2)), 1, 2)
    return np.linalg.svd(M, compute_uv=False)[:, 0]


def covector_norm(df, g):
    gm = np.moveaxis(g, -1, 0)
    sol = np.linalg.solve(gm, np.moveaxis(df, -1, 0)[..., None])[..., 0]
    return np.sqrt(np.sum(np.moveaxis(df, -1, 0) * sol, axis=1))


def vector_norm(v, g):
    return np.sqrt(np.einsum("i...,ij...,j...->...", v, g, v))


def riemannian_hessian_batch(f: ScalarField, g, dg, X):
    """Value, differential and covariant Hessian matrix of ``f`` at ``X``."""
    value, df, ddf = f.derivatives(X)
    gamma = christoffel_batch(g, dg)
    return value, df, ddf - np.einsum("kij...,k...->ij...", gamma, df), gamma


# ---------------------------------------------------------------------------
# Finsler Hessian
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HessianSample:
    x: np.ndarray
    y: np.ndarray
    value: float
    riemannian_term: float
    curl_term: float
    reference_term: float

    def to_dict(self):
        return {"x": self.x.tolist(), "y": self.y.tolist(), "value": self.value,
                "riemannian_term": self.riemannian_term, "curl_term": self.curl_term,
                "reference_term": self.reference_term}


def finsler_hessian_terms(R: RandersStructure, f: ScalarField, X, Y):
    """Batched ``(riemannian, curl, reference)`` terms of ``H_f(y, y)``."""
    geo = R.geometry(X)
    _, df, ddf = f.derivatives(X)
    gyy, curl, hnorm, F, nab, wc, ok = randers_terms(R, X, Y)
    t1 = np.einsum("i...,ij...,j...->...", Y, ddf, Y) - np.sum(df * gyy, axis=0)
    t2 = hnorm * np.sum(df * curl, axis=0)
    t3 = -(np.sum(df * Y, axis=0) / F) * (nab + hnorm * wc)
    del geo
    return t1, t2, t3, F, ok


def finsler_hessian(R: RandersStructure, f: ScalarField, x, y) -> HessianSample:
    """``H_f(y, y)`` at ``x`` with its three-term decomposition."""
    x = _as_point(x, R.dim)
    y = _as_point(y, R.dim)
    if not np.any(y):
        raise ZeroVectorAtDerivative("the Finsler Hessian needs y != 0")
    t1, t2, t3, _, ok = finsler_hessian_terms(R, f, x[:, None], y[:, None])
    if not ok[0]:
        R.validate([x])
    a, b, c = float(t1[0]), float(t2[0]), float(t3[0])
    return HessianSample(x, y, a + b + c, a, b, c)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

@dataclass
class Certificate:
    kind: str
    region: tuple            # (lower, upper)
    samples: int
    seed: int
    margin: float
    passed: bool
    witness: list | None
    reason: str = ""
    details: dict = field(default_factory=dict)
    level: float | None = None  # samples restricted to {f <= level} inside the box

    @property
    def pass_(self):
        return self.passed

    def to_dict(self):
        return {
            "kind": self.kind,
            "region": {"lower": list(self.region[0]), "upper": list(self.region[1]), "sublevel": self.level},
            "samples": self.samples,
            "seed": self.seed,
            "margin": self.margin,
            "pass": self.passed,
            "witness": self.witness,
            "reason": self.reason,
            "details": self.details,
            "basis": "sampled",
        }


def region_samples(region, count=DEFAULT_SAMPLES, seed=0, f: ScalarField | None = None, level=None):
    """``count`` Sobol points of the box ``region``, optionally only those with ``f <= level``."""
    lower, upper = (np.asarray(region[0], dtype=float), np.asarray(region[1], dtype=float))
    if lower.shape != upper.shape or not np.all(lower < upper):
        raise ValueError("region must be a box with lower < upper")
    if level is None:
        return sobol_box(lower, upper, count, seed).T
    draw = count
    while True:
        X = sobol_box(lower, upper, draw, seed).T
        vals, _, _ = f.derivatives(X)
        X = X[:, vals <= level]
        if X.shape[1] >= count:
            return X[:, :count]
        if draw >= 64 * count:
            if X.shape[1] == 0:
                raise ValueError(f"no sample of the box lies in the sublevel f <= {level:.6g}")
            return X
        draw *= 2


def _region_tuple(region):
    return (tuple(float(v) for v in region[0]), tuple(float(v) for v in region[1]))


def _finish(kind, region, count, seed, X, margins, reason_fail=None, details=None, level=None):
    k = int(np.argmin(margins))
    margin = float(margins[k])
    witness = X[:, k].tolist()
    count = int(X.shape[1])
    if reason_fail:
        return Certificate(kind, _region_tuple(region), count, seed, margin, False, witness, reason_fail,
                           details or {}, level)
    passed = margin > 0
    reason = "inequality holds on all samples" if passed else "inequality violated at witness"
    return Certificate(kind, _region_tuple(region), count, seed, margin, passed, witness, reason,
                       details or {}, level)


def _lambda_or_precondition(lam, user_lambda, X):
    """Lower convexity modulus per sample plus a precondition message (or None)."""
    if user_lambda is not None:
        lam_user = np.asarray([float(user_lambda(X[:, k])) for k in range(X.shape[1])]) \
            if isinstance(user_lambda, ScalarField) else np.full(X.shape[1], float(user_lambda))
        if np.any(lam_user > lam + 1e-12 * np.maximum(1.0, np.abs(lam))):
            return lam_user, "supplied lambda exceeds the Hessian's Rayleigh quotient on some sample"
        lam = lam_user
    if not np.all(lam > 0):
        return lam, "precondition failed: Riemannian Hessian of f is not positive definite on the region"
    return lam, None


def certificate_randers(R: RandersStructure, f: ScalarField, region, *, lam=None,
                        samples: int = DEFAULT_SAMPLES, seed: int = 0, level=None) -> Certificate:
    """Check ``3 |df| |nabla B| / (1 - |B|) < lambda(x)`` on a Sobol sample of ``region``."""
    X = region_samples(region, samples, seed, f, level)
    geo = R.geometry(X)
    h = geo.h
    _, df, Hf, gamma = riemannian_hessian_batch(f, h, geo.dh, X)
    lam_x = min_generalized_eig(Hf, h)
    lam_x, pre = _lambda_or_precondition(lam_x, lam, X)
    B = np.moveaxis(np.linalg.solve(np.moveaxis(h, -1, 0), np.moveaxis(geo.omega, -1, 0)[..., None])[..., 0], 0, -1)
    Bnorm = np.sqrt(np.sum(B * geo.omega, axis=0))
    if not np.all(Bnorm < 1):
        k = int(np.argmax(Bnorm))
        raise NormDataUnavailable(f"|B|_h = {Bnorm[k]:.6g} >= 1 at x={X[:, k].tolist()}")
    # nabla omega_ij = d_i omega_j - Gamma^k_ij omega_k ; (nabla B)^k_i = h^{kj} nabla omega_ij
    nab_om = geo.domega - np.einsum("kij...,k...->ij...", gamma, geo.omega)
    A = np.moveaxis(np.linalg.solve(np.moveaxis(h, -1, 0), np.moveaxis(np.swapaxes(nab_om, 0, 1), -1, 0)), 0, -1)
    nB = operator_norm(A, h)
    ndf = covector_norm(df, h)
    bound = 3.0 * ndf * nB / (1.0 - Bnorm)
    margins = lam_x - bound
    k = int(np.argmin(margins))
    details = {"lambda_at_witness": float(lam_x[k]), "bound_at_witness": float(bound[k]),
               "max_B_norm": float(np.max(Bnorm)), "max_nabla_B": float(np.max(nB)), "factor": 3}
    return _finish("randers", region, samples, seed, X, margins, pre, details, level)


def fermat_H(r):
    """``H(r) = (2 (1 + 2r)(sqrt(1 + r^2) + r) + 1) / sqrt(1 + r^2)``; ``H(0) = 3``."""
    r = np.asarray(r, dtype=float)
    s = np.sqrt(1.0 + r * r)
    out = (2.0 * (1.0 + 2.0 * r) * (s + r) + 1.0) / s
    return float(out) if out.ndim == 0 else out


def _fermat_pieces(g0, delta, beta, f, X):
    g, dg = metric_batch(g0, X)
    _, df, Hf, gamma = riemannian_hessian_batch(f, g, dg, X)
    lam0 = min_generalized_eig(Hf, g)
    bval, bgrad, _ = beta.derivatives(X)
    return g, dg, gamma, df, lam0, bval, bgrad


def _fermat_bound(g, gamma, df, bval, grad_beta_over_beta, d, J):
    # (nabla delta)^k_i = d_i delta^k + Gamma^k_ij delta^j
    A = J + np.einsum("kij...,j...->ki...", gamma, d)
    nd = operator_norm(A, g)
    r = vector_norm(d, g) / np.sqrt(bval)
    H = fermat_H(r)
    bracket = (nd / np.sqrt(bval) + 1.5 * r * grad_beta_over_beta) * H + 1.5 * grad_beta_over_beta
    return covector_norm(df, g) * bracket, r, nd


def certificate_fermat(g0: MetricField, delta: VectorField, beta: ScalarField, f: ScalarField, region, *,
                       lam=None, samples: int = DEFAULT_SAMPLES, seed: int = 0, level=None) -> Certificate:
    """Strict Fermat-convexity inequality of a stationary spacetime, checked on samples.

    ``|df|_0 [(|nabla delta|_0/sqrt(beta) + 3/2 r |nabla beta|_0/beta) H(r) + 3/2 |nabla beta|_0/beta]
    < lambda_0(x)`` with ``r = |delta|_0/sqrt(beta)``.
    """
    X = region_samples(region, samples, seed, f, level)
    g, dg, gamma, df, lam0, bval, bgrad = _fermat_pieces(g0, delta, beta, f, X)
    if not np.all(bval > 0):
        k = int(np.argmin(bval))
        raise NonpositiveBeta(X[:, k], float(bval[k]))
    lam0, pre = _lambda_or_precondition(lam0, lam, X)
    d, J = vector_batch(delta, X)
    gb = covector_norm(bgrad, g) / bval
    bound, r, nd = _fermat_bound(g, gamma, df, bval, gb, d, J)
    margins = lam0 - bound
    k = int(np.argmin(margins))
    details = {"lambda_at_witness": float(lam0[k]), "bound_at_witness": float(bound[k]),
               "sup_r": float(np.max(r)), "max_nabla_delta": float(np.max(nd)),
               "max_grad_beta_over_beta": float(np.max(gb))}
    return _finish("fermat", region, samples, seed, X, margins, pre, details, level)


def certificate_zermelo(g: MetricField, W: VectorField, f: ScalarField, region, *, lam=None,
                        samples: int = DEFAULT_SAMPLES, seed: int = 0, mode: str = "proof_bound",
                        level=None) -> Certificate:
    """Fermat certificate for ``beta = 1 - |W|^2``, ``delta = -W``.

    ``mode="proof_bound"`` replaces ``|nabla beta|/beta`` by the cruder
    ``2 |nabla W| / (1 - mu^2)`` (``mu = max |W|``), so a pass here implies a
    pass of the exact Fermat inequality.  ``mode="exact"`` evaluates the
    Fermat inequality itself.
    """
    if mode not in ("proof_bound", "exact"):
        raise ValueError("mode must be 'proof_bound' or 'exact'")
    X = region_samples(region, samples, seed, f, level)
    gm, dg = metric_batch(g, X)
    w, Jw = vector_batch(W, X)
    wn = vector_norm(w, gm)
    mu = float(np.max(wn))
    if not mu < 1:
        k = int(np.argmax(wn))
        raise WindTooStrong(X[:, k], float(wn[k]))
    g0, delta, beta = zermelo_as_fermat(g, W)
    if mode == "exact":
        cert = certificate_fermat(g0, delta, beta, f, region, lam=lam, samples=samples, seed=seed, level=level)
        cert.kind = "zermelo"
        cert.details["mode"] = "exact"
        cert.details["mu"] = mu
        return cert
    _, _, gamma, df, lam0, bval, _ = _fermat_pieces(g0, delta, beta, f, X)
    lam0, pre = _lambda_or_precondition(lam0, lam, X)
    nW = operator_norm(Jw + np.einsum("kij...,j...->ki...", gamma, w), gm)
    gb = 2.0 * nW / (1.0 - mu * mu)
    bound, r, nd = _fermat_bound(gm, gamma, df, bval, gb, -w, -Jw)
    margins = lam0 - bound
    k = int(np.argmin(margins))
    details = {"lambda_at_witness": float(lam0[k]), "bound_at_witness": float(bound[k]), "mu": mu,
               "mode": "proof_bound", "max_nabla_W": float(np.max(nW))}
    return _finish("zermelo", region, samples, seed, X, margins, pre, details, level)


def certificate_for(R: RandersStructure, f: ScalarField, region, **kw) -> Certificate:
    """Certificate matching the structure's provenance."""
    prov = R.provenance
    if prov.kind == "zermelo":
        return certificate_zermelo(prov.g, prov.W, f, region, **kw)
    if prov.kind == "fermat":
        return certificate_fermat(prov.g0, prov.delta, prov.beta, f, region, **kw)
    return certificate_randers(R, f, region, **kw)


def sampled_hessian_min(R: RandersStructure, f: ScalarField, region, samples: int = 10000, seed: int = 1,
                        directions: int = 16):
    """Brute-force ``min H_f(y, y)`` over region samples and indicatrix directions."""
    pts = max(1, samples // directions)
    X = region_samples(region, pts, seed)
    U = sphere_directions(R.dim, directions)
    Xs = np.repeat(X, directions, axis=1)
    Ys = np.tile(U.T, (1, pts))
    Ys = Ys / eval_F_batch(R, Xs, Ys)
    t1, t2, t3, _, _ = finsler_hessian_terms(R, f, Xs, Ys)
    return float(np.min(t1 + t2 + t3))


# ---------------------------------------------------------------------------
# properness
# ---------------------------------------------------------------------------

@dataclass
class PropernessReport:
    p0: list
    f_p0: float
    rays: int
    monotone: bool
    min_exit_gap: float
    shell_ok: bool
    passed: bool
    failures: list = field(default_factory=list)

    def to_dict(self):
        return dict(self.__dict__)


def properness_check(R: RandersStructure, f: ScalarField, p0, *, rays: int = 32, gap: float = 1e-6,
                     ray_length: float = 50.0, tol: float = 1e-9, grad_tol: float = 1e-8) -> PropernessReport:
    """Evidence for a unique non-degenerate minimum at ``p0`` and properness of ``f``.

    Geodesic rays leave ``p0`` in indicatrix directions until they exit the
    chart box or reach ``ray_length``; ``f`` must increase strictly along
    each of them and end above ``f(p0) + gap``.
    """
    p0 = _as_point(p0, R.dim)
    value, df, _ = f.derivatives(p0[:, None])
    h = R.geometry(p0[:, None]).h[..., 0]
    gnorm = float(np.sqrt(df[:, 0] @ np.linalg.solve(h, df[:, 0])))
    if gnorm > grad_tol:
        raise NotCritical(p0, gnorm)
    ind = indicatrix(R, p0, rays)
    hvals = np.array([finsler_hessian(R, f, p0, y).value for y in ind.vectors])
    # relative test: a direction where H_f is at roundoff level of its largest value is degenerate
    k = int(np.argmin(hvals))
    if not hvals[k] > 1e-10 * np.max(np.abs(hvals)):
        raise DegenerateAt(p0, ind.vectors[k])
    f0 = float(value[0])
    failures = []
    monotone = True
    gaps = []
    for y in ind.vectors:
        try:
            traj = integrate(R, GeodesicState(p0, y), ray_length, tol)
        except DomainExit as exc:
            traj = exc.partial
        except StepSizeUnderflow:
            failures.append({"direction": y.tolist(), "reason": "step underflow"})
            monotone = False
            continue
        t = np.linspace(traj.s[0], traj.s[-1], 400)[1:]
        xs, ys = traj.evaluate(t)
        vals, grads, _ = f.derivatives(xs.T)
        slope = np.sum(grads * ys.T, axis=0)
        if not np.all(slope > 0):
            monotone = False
            failures.append({"direction": y.tolist(), "reason": "f decreases along ray",
                             "s": float(t[int(np.argmin(slope))])})
        gaps.append(float(vals[-1] - f0))
    min_gap = min(gaps) if gaps else -math.inf
    # global-minimum evidence on a small shell around p0
    shell = p0[:, None] + 1e-3 * sphere_directions(R.dim, rays).T
    inside = R.chart.contains(shell)
    shell_vals = np.array([float(f(shell[:, k])) for k in range(shell.shape[1]) if inside[k]])
    shell_ok = bool(np.all(shell_vals > f0))
    passed = monotone and min_gap > gap and shell_ok
    return PropernessReport(p0.tolist(), f0, rays, monotone, min_gap, shell_ok, passed, failures)


def is_finite_number(v):
    return math.isfinite(v)


__all__ = [
    "Certificate", "HessianSample", "PropernessReport", "certificate_fermat", "certificate_for",
    "certificate_randers", "certificate_zermelo", "fermat_H", "finsler_hessian", "finsler_hessian_terms",
    "properness_check", "sampled_hessian_min", "eval_F",
]
