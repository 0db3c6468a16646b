"""Standard stationary spacetimes through their Fermat metrics.

The spacetime ``(M x R, g0 + 2 g0(delta, .) dt - beta dt^2)`` is never
integrated as a Lorentzian system.  Future-pointing lightlike geodesics
project to geodesics of the Fermat metric and their arrival coordinate time
is the Fermat length plus the departure time.  Timelike geodesics of fixed
proper time ``T`` are handled on ``N = M x R`` with the extended data
``g0 + du^2``, ``(delta, 0)``, ``beta``: they are the lightlike ones of the
extended spacetime ending on ``u = T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ProvenanceMismatch
from .fieldcore import (
    ONE,
    ZERO,
    Chart,
    MetricField,
    ScalarField,
    VectorField,
    add,
    mul,
    sub,
    var,
)
from .metrics import Fermat, RandersStructure, randers_from_fermat
from .shooting import FinitenessReport, GeodesicSolution, ShootingConfig, finiteness_report


@dataclass(frozen=True)
class StationarySpacetime:
    chart: Chart
    g0: MetricField
    delta: VectorField
    beta: ScalarField

    def fermat(self, validation_points=None) -> RandersStructure:
        return randers_from_fermat(self.g0, self.delta, self.beta, validation_points)

    def to_dict(self):
        return {
            "g0": [[str(c) for c in r] for r in self.g0.components],
            "delta": [str(c) for c in self.delta.components],
            "beta": str(self.beta.expr),
        }


@dataclass
class LightlikeSolution:
    spatial: GeodesicSolution
    t0: float

    @property
    def arrival_time(self) -> float:
        return self.t0 + self.spatial.randers_length

    def time_at(self, s):
        """Coordinate time ``t(s) = t0 + Fermat length of x|[0, s]``."""
        z = self.spatial.trajectory.state_at(s)
        n = self.spatial.trajectory.dim
        return self.t0 + z[:, 2 * n]

    def to_dict(self):
        return {"arrival_time": self.arrival_time, "length": self.spatial.randers_length,
                "margin": self.spatial.conjugacy.margin, "conjugacy": self.spatial.conjugacy.status,
                "v": self.spatial.v.tolist()}


def lift_lightlike(sp: StationarySpacetime, solution: GeodesicSolution, t0: float = 0.0) -> LightlikeSolution:
    """Lift a Fermat geodesic to the future-pointing lightlike geodesic leaving at ``t0``."""
    if solution.trajectory.dim != sp.chart.dim:
        raise ProvenanceMismatch("solution does not live on the spacetime's spatial chart")
    return LightlikeSolution(solution, float(t0))


@dataclass
class LensingReport:
    kind: str
    images: list
    finiteness: FinitenessReport
    extra: dict = field(default_factory=dict)

    @property
    def count(self):
        return len(self.images)

    @property
    def label(self):
        return self.finiteness.label

    @property
    def arrival_times(self):
        return [im.arrival_time for im in self.images]

    def to_dict(self):
        out = {"kind": self.kind, "count": self.count, "label": self.label,
               "images": [im.to_dict() for im in self.images],
               "finiteness": self.finiteness.to_dict()}
        out.update(self.extra)
        return out


def count_lightlike_images(sp: StationarySpacetime, x0, t0: float, x1, f: ScalarField | None = None, *,
                           emax=None, config: ShootingConfig | None = None, workers: int = 1,
                           seed: int = 0) -> LensingReport:
    """Future-pointing light rays from the event ``(x0, t0)`` to the observer line through ``x1``."""
    R = sp.fermat()
    rep = finiteness_report(R, f, x0, x1, emax=emax, config=config, workers=workers, seed=seed)
    images = [lift_lightlike(sp, s, t0) for s in rep.enumeration.solutions]
    return LensingReport("lightlike", images, rep, {"t0": float(t0)})


def extend_for_proper_time(sp: StationarySpacetime) -> StationarySpacetime:
    """Data on ``N = M x R``: ``g0 + du^2``, ``(delta, 0)`` and the same ``beta``."""
    n = sp.chart.dim
    c = sp.chart
    chart = Chart(n + 1, c.lower + (-np.inf,), c.upper + (np.inf,), c.periodic + (None,))
    rows = [tuple(sp.g0.components[i]) + (ZERO,) for i in range(n)]
    rows.append(tuple(ZERO for _ in range(n)) + (ONE,))
    g0 = MetricField(chart, tuple(rows))
    delta = VectorField(chart, tuple(sp.delta.components) + (ZERO,))
    beta = ScalarField(chart, sp.beta.expr)
    return StationarySpacetime(chart, g0, delta, beta)


def extended_fermat(sp: StationarySpacetime, T: float | None = None) -> RandersStructure:
    """Fermat structure ``F~`` on ``M x R`` (``T`` is accepted for symmetry with the report)."""
    if T is not None and not T > 0:
        raise ValueError("proper time T must be > 0")
    return extend_for_proper_time(sp).fermat()


def extended_convex_function(f_base: ScalarField, chart: Chart, T: float) -> ScalarField:
    """``f(x) + (u - T/2)^2`` on ``M x R``."""
    n = chart.dim - 1
    shift = sub(var(n), T / 2.0)
    return ScalarField(chart, add(f_base.expr, mul(shift, shift)))


def count_timelike(sp: StationarySpacetime, x0, rho0: float, x1, T: float, f_base: ScalarField | None = None, *,
                   emax=None, config: ShootingConfig | None = None, workers: int = 1,
                   seed: int = 0) -> LensingReport:
    """Timelike geodesics from ``(x0, rho0)`` reaching the line through ``x1`` after proper time ``T``."""
    if not T > 0:
        raise ValueError("proper time T must be > 0")
    ext = extend_for_proper_time(sp)
    R = ext.fermat()
    f = extended_convex_function(f_base, ext.chart, T) if f_base is not None else None
    p = np.concatenate([np.asarray(x0, dtype=float), [0.0]])
    q = np.concatenate([np.asarray(x1, dtype=float), [float(T)]])
    rep = finiteness_report(R, f, p, q, emax=emax, config=config, workers=workers, seed=seed)
    images = [LightlikeSolution(s, float(rho0)) for s in rep.enumeration.solutions]
    return LensingReport("timelike", images, rep, {"rho0": float(rho0), "T": float(T)})


def is_fermat(R: RandersStructure) -> bool:
    return isinstance(R.provenance, Fermat)
