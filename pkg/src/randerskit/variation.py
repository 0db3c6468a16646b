"""Jacobi fields along geodesics and conjugate-point detection.

The linearised geodesic flow is integrated alongside the geodesic itself;
its right-hand side is the complex-step derivative of the acceleration, so
the frames ``J(s) = dx(s)/dv`` and ``J'(s)`` are exact to rounding for the
discretised flow.  ``x`` is conjugate to ``x(s)`` along the geodesic iff
``J(s)`` is singular.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .geodesic import GeodesicState, Trajectory, integrate

NONCONJUGATE_MARGIN = 1e-4
CONJUGATE_MARGIN = 1e-6


def conjugacy_margin(J) -> float:
    """``sigma_min / sigma_max`` of a Jacobi frame (0 at a conjugate point)."""
    sv = np.linalg.svd(np.asarray(J, dtype=float), compute_uv=False)
    if sv[0] == 0:
        return 0.0
    return float(sv[-1] / sv[0])


def classify_margin(margin: float, nonconjugate=NONCONJUGATE_MARGIN, conjugate=CONJUGATE_MARGIN) -> str:
    if margin > nonconjugate:
        return "non-conjugate"
    if margin < conjugate:
        return "conjugate"
    return "indeterminate"


@dataclass
class ConjugacyReport:
    margin: float                      # terminal sigma_min / sigma_max of J(S)
    status: str                        # non-conjugate | conjugate | indeterminate
    conjugate_parameters: list = field(default_factory=list)

    def to_dict(self):
        return {"margin": self.margin, "status": self.status,
                "conjugate_parameters": list(self.conjugate_parameters)}


@dataclass(frozen=True)
class JacobiFrame:
    s: float
    J: np.ndarray    # dx(s)/dv
    Jp: np.ndarray   # dy(s)/dv


def jacobi_transport(R, traj: Trajectory, tol: float = 1e-9) -> Trajectory:
    """Re-integrate ``traj`` from its initial state carrying ``J = dx/dv`` and ``J' = dy/dv``.

    ``J(0) = 0`` and ``J'(0) = I``.  The returned trajectory interpolates the
    frames (see :meth:`Trajectory.jacobi_at`); :func:`frames` lists them at
    the stored steps.
    """
    if traj.has_jacobi:
        return traj
    n = traj.dim
    state = GeodesicState(traj.states[0, :n], traj.states[0, n:2 * n], traj.convention)
    return integrate(R, state, traj.S, tol, jacobi=True, _allow_backward=True)


def transport_from(R, x, v, S: float = 1.0, tol: float = 1e-9, convention: str = "randers") -> Trajectory:
    """Geodesic from ``(x, v)`` over ``[0, S]`` with Jacobi frames."""
    return integrate(R, GeodesicState(x, v, convention), S, tol, jacobi=True)


def frames(traj: Trajectory) -> list:
    J, Jp = traj.jacobi_at(traj.s)
    return [JacobiFrame(float(s), a, b) for s, a, b in zip(traj.s, J, Jp)]


def _det_along(traj: Trajectory, t):
    J, _ = traj.jacobi_at(t)
    return np.linalg.det(J)


def _ratio_along(traj: Trajectory, t):
    J, _ = traj.jacobi_at(t)
    sv = np.linalg.svd(J, compute_uv=False)
    return sv[:, -1] / sv[:, 0]


def conjugate_parameters(traj: Trajectory, threshold: float = CONJUGATE_MARGIN) -> list:
    """Parameters ``s`` in ``(0, S]`` where ``J(s)`` is singular.

    Simple zeros show up as sign changes of ``det J`` and are refined by
    Brent's method on the Hermite interpolant; zeros of even multiplicity
    are caught as local minima of ``sigma_min / sigma_max`` below
    ``threshold``.
    """
    s = traj.s
    start, end = s[0], s[-1]
    span = end - start
    # sample stored nodes and midpoints, skipping the trivial zero at s = 0
    t = np.sort(np.concatenate([s, 0.5 * (s[:-1] + s[1:])]))
    t = t[np.abs(t - start) > 1e-6 * abs(span)]
    if t.size < 2:
        return []
    det = _det_along(traj, t)
    found = []
    for a, b, da, db in zip(t[:-1], t[1:], det[:-1], det[1:]):
        if da == 0.0:
            found.append(float(a))
        elif da * db < 0:
            found.append(float(brentq(lambda u: _det_along(traj, np.array([u]))[0], a, b, xtol=1e-13)))
    if det[-1] == 0.0:
        found.append(float(t[-1]))
    ratio = _ratio_along(traj, t)
    for k in range(1, len(t) - 1):
        if ratio[k] <= ratio[k - 1] and ratio[k] <= ratio[k + 1]:
            res = minimize_scalar(lambda u: _ratio_along(traj, np.array([u]))[0],
                                  bounds=(t[k - 1], t[k + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if res.fun < threshold and not any(abs(res.x - f) < 1e-6 * abs(span) for f in found):
                found.append(float(res.x))
    return sorted(found)


def conjugate_points(traj: Trajectory, nonconjugate=NONCONJUGATE_MARGIN,
                     conjugate=CONJUGATE_MARGIN) -> ConjugacyReport:
    """Conjugate parameters along a frame-carrying trajectory plus the terminal margin."""
    J, _ = traj.jacobi_at(traj.s[-1])
    margin = conjugacy_margin(J[0])
    return ConjugacyReport(margin, classify_margin(margin, nonconjugate, conjugate),
                           conjugate_parameters(traj, conjugate))


def first_conjugate_parameter(R, x, v, S: float, tol: float = 1e-9, convention: str = "randers"):
    """First conjugate parameter in ``(0, S]`` along the geodesic, or ``None``."""
    pts = conjugate_parameters(transport_from(R, x, v, S, tol, convention))
    return pts[0] if pts else None
