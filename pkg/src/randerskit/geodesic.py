"""Randers geodesic equations in Levi-Civita form and their integration.

Three accelerations are provided, all acting on batches ``X, Y`` of shape
``(n, m)`` (real or complex):

* ``riemannian``: constant ``sqrt(h(y, y))``;
  ``a = -Gamma(y, y) + |y|_h Curl(y)``.
* ``randers``: constant ``F(x, y)``;
  ``a = -Gamma(y, y) + |y| Curl(y) - (nabla omega(y, y) + |y| omega(Curl y)) / F * y``.
* ``fermat``: constant ``F`` written with the stationary-spacetime data
  ``p = g0/beta`` and ``delta`` (needs Fermat or Zermelo provenance).

``Curl(v) = h^{-1} M v`` with ``M_lj = d_l omega_j - d_j omega_l``, so no
covariant derivative of ``B`` is ever formed.  Everything is computed with
holomorphic operations so the same code yields the linearised flow by
complex-step differentiation.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainExit,
    NormViolation,
    ProvenanceMismatch,
    StepSizeUnderflow,
    ZeroVectorAtDerivative,
)
from .metrics import Fermat, RandersStructure, Zermelo, eval_F, quad, solve_spd

CONVENTIONS = ("randers", "riemannian", "fermat")
_ALIASES = {"randers-speed": "randers", "riemannian-speed": "riemannian",
            "randers_speed": "randers", "riemannian_speed": "riemannian"}

OK, DOMAIN_EXIT, UNDERFLOW, SINGULAR = 0, 1, 2, 3
STATUS_NAMES = {OK: "ok", DOMAIN_EXIT: "domain_exit", UNDERFLOW: "step_underflow", SINGULAR: "singular"}

_CS_EPS = 1e-30  # complex-step increment


def normalize_convention(convention: str) -> str:
    c = _ALIASES.get(convention, convention)
    if c not in CONVENTIONS:
        raise ValueError(f"unknown speed convention {convention!r}; use one of {CONVENTIONS}")
    return c


# ---------------------------------------------------------------------------
# batched accelerations
# ---------------------------------------------------------------------------

def _first_kind_yy(dh, Y):
    """``c_l = Gamma_{l ij} y^i y^j`` from ``dh[k, i, j] = d_k h_ij``."""
    dhy = np.einsum("klj...,j...->kl...", dh, Y)  # [k, l] = d_k h_lj y^j
    return np.einsum("i...,il...->l...", Y, dhy) - 0.5 * np.einsum("i...,li...->l...", Y, dhy)


def randers_terms(R: RandersStructure, X, Y):
    """Shared pieces of the Randers accelerations.

    Returns ``(gyy, curl, hnorm, F, nabla_omega_yy, omega_curl, ok)`` where
    ``gyy = Gamma(y, y)``, ``curl = Curl(y)`` and ``ok`` flags members whose
    metric is positive definite with ``|omega| < 1``.
    """
    geo = R.geometry(X)
    M = geo.domega - np.swapaxes(geo.domega, 0, 1)  # [l, j] = d_l omega_j - d_j omega_l
    c = _first_kind_yy(geo.dh, Y)
    My = np.einsum("lj...,j...->l...", M, Y)
    rhs = np.stack([c, My, geo.omega], axis=1)       # (n, 3, m)
    sol, piv = solve_spd(geo.h, rhs)
    gyy, curl, B = sol[:, 0], sol[:, 1], sol[:, 2]
    hyy = quad(geo.h, Y, Y)
    hnorm = np.sqrt(hyy)
    wy = np.sum(geo.omega * Y, axis=0)
    F = hnorm + wy
    yy_domega = np.einsum("i...,ij...,j...->...", Y, geo.domega, Y)
    nabla_omega = yy_domega - np.sum(B * c, axis=0)
    omega_curl = np.sum(B * My, axis=0)
    b2 = np.sum(geo.omega * B, axis=0)
    ok = np.all(piv.real > 0, axis=0) & (b2.real < 1.0) & np.all(np.isfinite(sol), axis=(0, 1))
    ok &= (hyy.real > 0) & np.isfinite(F)
    return gyy, curl, hnorm, F, nabla_omega, omega_curl, ok


def accel_riemannian(R, X, Y):
    gyy, curl, hnorm, F, _, _, ok = randers_terms(R, X, Y)
    return -gyy + hnorm * curl, F, ok


def accel_randers(R, X, Y):
    gyy, curl, hnorm, F, nab, wc, ok = randers_terms(R, X, Y)
    return -gyy + hnorm * curl - ((nab + hnorm * wc) / F) * Y, F, ok


def accel_fermat(R, X, Y):
    if not isinstance(R.provenance, (Fermat, Zermelo)):
        raise ProvenanceMismatch("the Fermat right-hand side needs (g0, delta, beta) data")
    n = R.dim
    fg = R.fermat_geometry(X)
    p, dp, delta = fg.p, fg.dp, fg.delta
    first = 0.5 * (np.einsum("ilj...->lij...", dp) + np.einsum("jli...->lij...", dp) - dp)
    m_shape = X.shape[1:]
    sol, piv = solve_spd(p, first.reshape((n, n * n) + m_shape))
    gamma = sol.reshape((n, n, n) + m_shape)  # [k, i, j]
    # A^k_i = d_i delta^k + Gamma^k_ij delta^j
    A = fg.ddelta + np.einsum("kij...,j...->ki...", gamma, delta)
    gyy = np.einsum("kij...,i...,j...->k...", gamma, Y, Y)
    Ay = np.einsum("ki...,i...->k...", A, Y)
    py = np.einsum("ij...,j...->i...", p, Y)
    # A* y = p^{-1} A^T p y
    Aty = np.einsum("ki...,k...->i...", A, py)
    sol2, _ = solve_spd(p, Aty[:, None])
    omega_y = sol2[:, 0] - Ay
    pdelta = np.einsum("ij...,j...->i...", p, delta)
    delta2 = np.sum(pdelta * delta, axis=0)
    pdy = np.sum(pdelta * Y, axis=0)
    pyy = np.sum(py * Y, axis=0)
    hnorm = np.sqrt(pdy * pdy + pyy)
    F = hnorm + pdy
    coef = (F * np.sum(pdelta * omega_y, axis=0) + np.sum(py * Ay, axis=0)) / (F * (1.0 + delta2))
    a = -gyy + F * omega_y - coef * (Y + F * delta)
    ok = np.all(piv.real > 0, axis=0) & (pyy.real > 0) & np.isfinite(F) & (F.real > 0)
    return a, F, ok


_ACCEL = {"riemannian": accel_riemannian, "randers": accel_randers, "fermat": accel_fermat}


def _single(R, convention, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (R.dim,) or y.shape != (R.dim,):
        raise DimensionMismatch(f"state must have dimension {R.dim}")
    if not np.any(y):
        raise ZeroVectorAtDerivative("geodesic acceleration needs y != 0")
    a, _, ok = _ACCEL[convention](R, x[:, None], y[:, None])
    if not ok[0]:
        raise NormViolation(x, R.omega_norm(x))
    return a[:, 0]


def rhs_riemannian_speed(R, state):
    """Coordinate acceleration for constant ``sqrt(h(y, y))``."""
    return _single(R, "riemannian", state.x, state.y)


def rhs_randers_speed(R, state):
    """Coordinate acceleration for constant ``F(x, y)``."""
    return _single(R, "randers", state.x, state.y)


def rhs_fermat(R, state):
    """Constant-``F`` acceleration in stationary-spacetime form."""
    return _single(R, "fermat", state.x, state.y)


# ---------------------------------------------------------------------------
# state / trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeodesicState:
    x: np.ndarray
    y: np.ndarray
    convention: str = "randers"

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "convention", normalize_convention(self.convention))
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise DimensionMismatch("x and y must be vectors of equal length")


def _hermite(s0, s1, z0, z1, d0, d1, t):
    h = s1 - s0
    u = (t - s0) / h
    u2 = u * u
    u3 = u2 * u
    h00 = 2 * u3 - 3 * u2 + 1
    h10 = u3 - 2 * u2 + u
    h01 = -2 * u3 + 3 * u2
    h11 = u3 - u2
    return h00 * z0 + h10 * h * d0 + h01 * z1 + h11 * h * d1


def _hermite_derivative(s0, s1, z0, z1, d0, d1, t):
    h = s1 - s0
    u = (t - s0) / h
    u2 = u * u
    return ((6 * u2 - 6 * u) * z0 / h + (3 * u2 - 4 * u + 1) * d0
            + (-6 * u2 + 6 * u) * z1 / h + (3 * u2 - 2 * u) * d1)


@dataclass
class Trajectory:
    """Dense geodesic: stored steps plus cubic Hermite interpolation.

    ``states`` rows hold ``(x, y, length[, jacobi frames])``; ``derivs`` their
    parameter derivatives.  ``s`` is monotone in the integration direction.
    """

    dim: int
    convention: str
    s: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    periodic: tuple = field(default=())
    status: str = "ok"

    @property
    def S(self) -> float:
        return float(self.s[-1] - self.s[0])

    @property
    def x(self):
        return self.states[:, :self.dim]

    @property
    def y(self):
        return self.states[:, self.dim:2 * self.dim]

    @property
    def randers_length(self) -> float:
        return float(self.states[-1, 2 * self.dim] - self.states[0, 2 * self.dim])

    @property
    def has_jacobi(self) -> bool:
        return self.states.shape[1] > 2 * self.dim + 1

    @property
    def endpoint(self):
        return self.states[-1, :self.dim].copy()

    @property
    def end_velocity(self):
        return self.states[-1, self.dim:2 * self.dim].copy()

    def state_at(self, t):
        """Interpolated full state rows at parameters ``t`` (scalar or array)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        s = self.s
        if s[-1] >= s[0]:
            idx = np.clip(np.searchsorted(s, t, side="right") - 1, 0, len(s) - 2)
        else:
            idx = np.clip(len(s) - 1 - np.searchsorted(s[::-1], t, side="left"), 0, len(s) - 2)
        s0, s1 = s[idx][:, None], s[idx + 1][:, None]
        tt = t[:, None]
        return _hermite(s0, s1, self.states[idx], self.states[idx + 1],
                        self.derivs[idx], self.derivs[idx + 1], tt)

    def evaluate(self, t):
        """``(x(t), y(t))`` rows."""
        z = self.state_at(t)
        return z[:, :self.dim], z[:, self.dim:2 * self.dim]

    def jacobi_at(self, t):
        """Frames ``J(t) = dx/dv`` and ``J'(t)``, shapes ``(k, n, n)``."""
        if not self.has_jacobi:
            raise ValueError("trajectory was integrated without Jacobi frames")
        n = self.dim
        z = self.state_at(t)[:, 2 * n + 1:].reshape(-1, 2 * n, n)
        return z[:, :n], z[:, n:]

    def sample(self, count: int):
        t = np.linspace(self.s[0], self.s[-1], count)
        x, y = self.evaluate(t)
        return t, x, y

    def to_rows(self, R=None):
        n = self.dim
        rows = []
        for k in range(len(self.s)):
            x = self.states[k, :n]
            y = self.states[k, n:2 * n]
            row = {"s": float(self.s[k]), "length": float(self.states[k, 2 * n] - self.states[0, 2 * n])}
            for i in range(n):
                row[f"x{i + 1}"] = float(x[i])
            for i in range(n):
                row[f"y{i + 1}"] = float(y[i])
            if R is not None:
                row["F"] = eval_F(R, x, y)
            rows.append(row)
        return rows

    def columns(self, with_F=False):
        n = self.dim
        cols = ["s"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)] + ["length"]
        return cols + (["F"] if with_F else [])

    def to_csv(self, R=None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns(R is not None), lineterminator="\n")
        writer.writeheader()
        for row in self.to_rows(R):
            writer.writerow({k: repr(v) for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self, R=None):
        return {
            "convention": self.convention,
            "S": self.S,
            "randers_length": self.randers_length,
            "status": self.status,
            "endpoint": self.endpoint.tolist(),
            "samples": self.to_rows(R),
        }

    def to_json(self, R=None) -> str:
        return json.dumps(self.to_dict(R), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# batched Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass
class BatchResult:
    Z: np.ndarray            # final states (N, m)
    s: np.ndarray            # reached parameter per member
    status: np.ndarray       # per-member status code
    records: list | None     # per member: (s list, Z list, dZ list)
    steps: int


def dopri_batch(fun, Z0, S, tol, *, inside=None, y_slice=None, max_step=np.inf,
                record=False, max_steps=200000):
    """Integrate ``Z' = fun(Z)`` for every column of ``Z0`` over ``[0, S_j]``.

    ``fun`` maps ``(N, k)`` to ``(dZ, ok)``.  Step sizes adapt per member.
    ``S`` may be negative (backward integration).  ``inside`` maps states
    to a boolean mask of chart membership; ``y_slice`` selects the velocity
    rows used for the vanishing-velocity test.
    """
    Z = np.array(Z0, dtype=float)
    N, m = Z.shape
    S = np.broadcast_to(np.asarray(S, dtype=float), (m,)).copy()
    direction = np.where(S >= 0, 1.0, -1.0)
    s = np.zeros(m)
    status = np.full(m, -1)
    status[S == 0] = OK
    K1, ok0 = fun(Z)
    status[(~ok0) & (status < 0)] = SINGULAR
    y0norm = np.linalg.norm(Z[y_slice], axis=0) if y_slice is not None else None
    scale0 = np.maximum(np.linalg.norm(K1, axis=0) / np.maximum(np.linalg.norm(Z, axis=0), 1e-300), 1e-300)
    H = direction * np.minimum.reduce([np.abs(S), np.full(m, max_step), 0.1 / scale0 + 0 * S])
    H = np.where(H == 0, direction * np.minimum(np.abs(S), 1e-3), H)
    records = None
    if record:
        records = [([0.0], [Z[:, j].copy()], [K1[:, j].copy()]) for j in range(m)]
    steps = 0
    while True:
        act = np.nonzero(status < 0)[0]
        if act.size == 0 or steps >= max_steps:
            break
        steps += 1
        z = Z[:, act]
        k1 = K1[:, act]
        rem = S[act] - s[act]
        h = direction[act] * np.minimum(np.abs(H[act]), np.abs(rem))
        h = np.where(np.abs(rem - h) <= 1e-14 * np.maximum(1.0, np.abs(S[act])), rem, h)
        ks = [k1]
        good = np.ones(act.size, dtype=bool)
        for i in range(1, 6):
            zi = z + h * sum(a * k for a, k in zip(_A[i], ks))
            ki, oki = fun(zi)
            good &= oki
            ks.append(ki)
        znew = z + h * sum(b * k for b, k in zip(_B, ks) if b != 0.0)
        k7, ok7 = fun(znew)
        good &= ok7 & np.all(np.isfinite(znew), axis=0)
        ks.append(k7)
        errv = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        sc = tol + tol * np.maximum(np.abs(z), np.abs(znew))
        err = np.sqrt(np.mean((errv / sc) ** 2, axis=0))
        err = np.where(good & np.isfinite(err), err, np.inf)
        accept = err <= 1.0
        factor = np.where(err == 0, 5.0, 0.9 * np.power(np.maximum(err, 1e-300), -0.2))
        factor = np.clip(factor, 0.2, 5.0)
        factor = np.where(accept, factor, np.minimum(factor, 0.5))
        factor = np.where(good, factor, 0.25)
        Hnew = h * factor
        if np.isfinite(max_step):
            Hnew = np.sign(Hnew) * np.minimum(np.abs(Hnew), max_step)
        H[act] = Hnew

        # accepted members
        acc = act[accept]
        if acc.size:
            Z[:, acc] = znew[:, accept]
            K1[:, acc] = k7[:, accept]
            s[acc] = s[acc] + h[accept]
            if record:
                for jj, j in enumerate(acc):
                    records[j][0].append(float(s[j]))
                    records[j][1].append(Z[:, j].copy())
                    records[j][2].append(K1[:, j].copy())
            if inside is not None:
                out = ~inside(Z[:, acc])
                if np.any(out):
                    for j in acc[out]:
                        status[j] = DOMAIN_EXIT
                        if record:
                            _trim_at_exit(records[j], inside)
                            s[j] = records[j][0][-1]
            if y_slice is not None:
                small = np.linalg.norm(Z[y_slice][:, acc], axis=0) < 1e-12 * y0norm[acc]
                status[acc[small & (status[acc] < 0)]] = UNDERFLOW
            done = np.abs(S[acc] - s[acc]) <= 1e-14 * np.maximum(1.0, np.abs(S[acc]))
            fin = acc[done & (status[acc] < 0)]
            s[fin] = S[fin]
            status[fin] = OK
        # rejected members whose step collapsed
        tiny = np.abs(Hnew) < 1e-13 * np.maximum(1.0, np.abs(s[act]))
        bad = act[tiny & ~accept]
        if bad.size:
            status[bad] = np.where(good[tiny & ~accept], UNDERFLOW, SINGULAR)
    status[status < 0] = UNDERFLOW
    return BatchResult(Z, s, status, records, steps)


def _trim_at_exit(rec, inside):
    """Replace the last (outside) node by the boundary crossing found by bisection."""
    ss, zs, ds = rec
    s0, s1 = ss[-2], ss[-1]
    z0, z1, d0, d1 = zs[-2], zs[-1], ds[-2], ds[-1]
    lo, hi = s0, s1
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        zm = _hermite(s0, s1, z0, z1, d0, d1, mid)
        if inside(zm[:, None])[0]:
            lo = mid
        else:
            hi = mid
    zl = _hermite(s0, s1, z0, z1, d0, d1, lo)
    dl = _hermite_derivative(s0, s1, z0, z1, d0, d1, lo)
    if lo == s0:
        ss.pop(); zs.pop(); ds.pop()
        return
    ss[-1], zs[-1], ds[-1] = lo, zl, dl


# ---------------------------------------------------------------------------
# geodesic flow (optionally with the linearised flow)
# ---------------------------------------------------------------------------

def geodesic_system(R: RandersStructure, convention: str, jacobi: bool = False):
    """``fun(Z)`` for ``Z = (x, y, length[, T])`` with ``T`` the ``2n x n`` tangent frame."""
    n = R.dim
    accel = _ACCEL[normalize_convention(convention)]

    def fun(Z):
        m = Z.shape[1]
        X = Z[:n]
        Y = Z[n:2 * n]
        if not jacobi:
            a, F, ok = accel(R, X, Y)
            return np.concatenate([Y, a, F[None]]), ok & np.isfinite(a).all(axis=0)
        T = Z[2 * n + 1:].reshape(2 * n, n, m)
        base = Z[:2 * n, None, :]
        zc = (base + 1j * _CS_EPS * T).reshape(2 * n, n * m)
        a, F, ok = accel(R, zc[:n], zc[n:])
        a = a.reshape(n, n, m)
        ok = ok.reshape(n, m).all(axis=0) & np.isfinite(a).all(axis=(0, 1))
        dT = np.concatenate([T[n:], a.imag / _CS_EPS]).reshape(2 * n * n, m)
        return np.concatenate([Y, a[:, 0].real, F.reshape(n, m)[0].real[None], dT]), ok

    return fun


def initial_states(R: RandersStructure, X0, Y0, jacobi=False):
    n = R.dim
    X0 = np.asarray(X0, dtype=float)
    Y0 = np.asarray(Y0, dtype=float)
    m = X0.shape[1]
    parts = [X0, Y0, np.zeros((1, m))]
    if jacobi:
        T = np.zeros((2 * n, n, m))
        T[n:] = np.eye(n)[:, :, None]
        parts.append(T.reshape(2 * n * n, m))
    return np.concatenate(parts)


def integrate_batch(R, X0, Y0, S, *, convention="randers", tol=1e-9, jacobi=False,
                    record=False, max_step=np.inf):
    """Batch flow of ``(X0, Y0)`` (shape ``(n, m)``) over signed parameter ``S``."""
    n = R.dim
    fun = geodesic_system(R, convention, jacobi)
    chart = R.chart

    def inside(Z):
        return chart.contains(Z[:n])

    return dopri_batch(fun, initial_states(R, X0, Y0, jacobi), S, tol, inside=inside,
                       y_slice=slice(n, 2 * n), max_step=max_step, record=record)


def _trajectory_from_record(R, convention, rec, status):
    ss, zs, ds = rec
    return Trajectory(R.dim, convention, np.array(ss), np.array(zs), np.array(ds),
                      R.chart.periodic, STATUS_NAMES[status])


def integrate(R: RandersStructure, initial: GeodesicState, S: float, tol: float = 1e-9,
              *, jacobi: bool = False, max_step: float | None = None, _allow_backward=False) -> Trajectory:
    """Dense geodesic from ``initial`` over ``[0, S]``.

    Raises :class:`DomainExit` (with the partial trajectory) when the chart
    boundary is reached and :class:`StepSizeUnderflow` near singular data.
    """
    if not (S > 0 or (_allow_backward and S != 0)):
        raise ValueError("S must be > 0")
    if not np.any(initial.y):
        raise ZeroVectorAtDerivative("initial velocity must be nonzero")
    if initial.x.shape != (R.dim,):
        raise DimensionMismatch(f"initial state must have dimension {R.dim}")
    if not R.chart.contains(initial.x[:, None])[0]:
        raise DomainExit(0.0, None)
    convention = initial.convention
    if max_step is None:
        max_step = abs(S) / 64.0
    res = integrate_batch(R, initial.x[:, None], initial.y[:, None], S, convention=convention,
                          tol=tol, jacobi=jacobi, record=True, max_step=max_step)
    status = int(res.status[0])
    traj = _trajectory_from_record(R, convention, res.records[0], status)
    if status == DOMAIN_EXIT:
        raise DomainExit(float(traj.s[-1]), traj)
    if status == SINGULAR:
        x = traj.states[-1, :R.dim]
        raise StepSizeUnderflow(float(traj.s[-1]), f"metric degenerates near x={x.tolist()}")
    if status == UNDERFLOW:
        raise StepSizeUnderflow(float(traj.s[-1]))
    return traj


def exp_map(R: RandersStructure, p, v, tol: float = 1e-9) -> np.ndarray:
    """Endpoint of the constant-``F`` geodesic with initial velocity ``v`` after unit parameter."""
    traj = integrate(R, GeodesicState(p, v, "randers"), 1.0, tol)
    return R.chart.wrap(traj.endpoint)


def speed_drift(R: RandersStructure, traj: Trajectory) -> float:
    """``max |speed(s) - speed(0)|`` over stored nodes in the trajectory's convention."""
    n = R.dim
    X = traj.states[:, :n].T
    Y = traj.states[:, n:2 * n].T
    geo = R.geometry(X)
    hn = np.sqrt(quad(geo.h, Y, Y))
    speed = hn if traj.convention == "riemannian" else hn + np.sum(geo.omega * Y, axis=0)
    return float(np.max(np.abs(speed - speed[0])))
