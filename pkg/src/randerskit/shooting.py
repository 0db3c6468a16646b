"""Multi-start Newton shooting, energy bounds and finiteness reports.

Geodesics from ``p`` to ``q`` are parametrised on ``[0, 1]`` with constant
Randers speed, so the initial velocity ``v`` has ``F(p, v) = E``, the
energy, which is also the Randers length.  The miss map
``v -> exp_p(v) - q`` is solved by damped Newton from a grid of seeds
(indicatrix directions x geometric energy levels); its Jacobian is the
Jacobi frame ``J(1)``.

Seeds are cut into fixed-size chunks that are solved independently, so the
result is identical for any number of worker processes.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .convexity import Certificate, certificate_for, finsler_hessian_terms
from .errors import CertificateMissing, NoSolutionFound, SublevelUnbounded
from .fieldcore import ScalarField, _as_point
from .geodesic import OK, GeodesicState, Trajectory, integrate, integrate_batch
from .metrics import RandersStructure, eval_F, eval_F_batch
from .sampling import sobol_box, sphere_directions
from .variation import (
    CONJUGATE_MARGIN,
    NONCONJUGATE_MARGIN,
    ConjugacyReport,
    conjugate_points,
)

DEFAULT_DIRECTIONS = {1: 2, 2: 64, 3: 256}
CHUNK = 64

# per-seed outcomes
CONVERGED, STALLED, ABANDONED, FAILED, MAXITER = 1, 2, 3, 4, 5
OUTCOME_NAMES = {CONVERGED: "converged", STALLED: "stalled", ABANDONED: "energy_cap",
                 FAILED: "integration_failed", MAXITER: "max_iterations"}


@dataclass(frozen=True)
class ShootingConfig:
    tol: float = 1e-9
    miss_tol: float = 1e-7
    newton_tol: float = 1e-9          # on |J^{-1} r| relative to max(1, |v|)
    dedup_radius: float = 1e-4        # relative to E
    dedup_energy: float = 1e-6
    max_iter: int = 50
    max_halvings: int = 8
    directions: int | None = None     # per energy level; default by dimension
    refine: int = 1                   # multiplies the number of directions
    min_levels: int = 3
    stall_window: int = 6             # iterations over which the miss must shrink
    stall_ratio: float = 0.5          # ... by at least this factor
    nonconjugate_margin: float = NONCONJUGATE_MARGIN
    conjugate_margin: float = CONJUGATE_MARGIN

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class GeodesicSolution:
    v: np.ndarray
    energy: float
    trajectory: Trajectory
    miss: float
    newton_residual: float
    conjugacy: ConjugacyReport

    @property
    def randers_length(self) -> float:
        return self.trajectory.randers_length

    def to_dict(self):
        return {
            "v": self.v.tolist(),
            "energy": self.energy,
            "randers_length": self.randers_length,
            "miss": self.miss,
            "newton_residual": self.newton_residual,
            "conjugacy": self.conjugacy.to_dict(),
        }


@dataclass
class EnumerationResult:
    p: list
    q: list
    solutions: list
    energy_cap: float
    seeds: int
    levels: list
    directions: int
    complete: bool
    outcomes: dict
    config: ShootingConfig

    @property
    def count(self) -> int:
        return len(self.solutions)

    @property
    def lengths(self):
        return [s.randers_length for s in self.solutions]

    def to_dict(self):
        return {
            "p": self.p,
            "q": self.q,
            "count": self.count,
            "energy_cap": self.energy_cap,
            "seeds": self.seeds,
            "energy_levels": self.levels,
            "directions": self.directions,
            "complete": self.complete,
            "seed_outcomes": self.outcomes,
            "config": self.config.to_dict(),
            "solutions": [s.to_dict() for s in self.solutions],
        }

    def trajectory_rows(self, samples: int = 101):
        """Plot data: ``(solution id, s, x...)`` rows for every solution."""
        rows = []
        for k, sol in enumerate(self.solutions):
            t, x, _ = sol.trajectory.sample(samples)
            for tt, xx in zip(t, x):
                rows.append([k, float(tt)] + [float(v) for v in xx])
        return rows


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

def energy_levels(E_max: float, floor: float, min_levels: int = 3):
    levels = [E_max]
    while len(levels) < min_levels or levels[-1] / 2 >= floor:
        levels.append(levels[-1] / 2)
    return levels


def seed_velocities(R: RandersStructure, p, q, E_max: float, cfg: ShootingConfig):
    """Seed grid ``(n, count)`` plus the energy levels and directions used."""
    n = R.dim
    base = cfg.directions or DEFAULT_DIRECTIONS.get(n, 64 * n)
    count = base * cfg.refine
    chord = R.chart.wrap_delta(np.asarray(q) - np.asarray(p))
    floor = eval_F(R, p, chord) / 4.0
    levels = energy_levels(E_max, floor, cfg.min_levels)
    P = np.repeat(np.asarray(p, dtype=float)[:, None], count, axis=1)
    seeds = []
    for j, E in enumerate(levels):
        U = sphere_directions(n, count, 0.5 * (j % 2)).T
        U = U / eval_F_batch(R, P, U)
        seeds.append(E * U)
    return np.concatenate(seeds, axis=1), levels, count


# ---------------------------------------------------------------------------
# batched damped Newton
# ---------------------------------------------------------------------------

def _shoot(R, p, q, V, tol):
    n = R.dim
    m = V.shape[1]
    P = np.repeat(p[:, None], m, axis=1)
    res = integrate_batch(R, P, V, 1.0, tol=tol, jacobi=True)
    r = R.chart.wrap_delta(res.Z[:n] - q[:, None])
    J = res.Z[2 * n + 1:].reshape(2 * n, n, m)[:n]
    return r, J, res.status == OK


def _newton_steps(J, r):
    Jm = np.moveaxis(J, -1, 0)
    rm = np.moveaxis(r, -1, 0)
    out = np.empty_like(rm)
    for k in range(Jm.shape[0]):
        try:
            out[k] = -np.linalg.solve(Jm[k], rm[k])
        except np.linalg.LinAlgError:
            out[k] = -np.linalg.lstsq(Jm[k], rm[k], rcond=None)[0]
    return out.T


def newton_chunk(R: RandersStructure, p, q, V0, E_max: float, cfg: ShootingConfig):
    """Damped Newton from every column of ``V0``; returns ``(V, outcome, miss, residual)``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    V = np.array(V0, dtype=float)
    m = V.shape[1]
    outcome = np.zeros(m, dtype=int)
    resid = np.full(m, np.inf)
    r, J, ok = _shoot(R, p, q, V, cfg.tol)
    outcome[~ok] = FAILED
    miss = np.linalg.norm(r, axis=0)
    P = np.repeat(p[:, None], m, axis=1)
    history = [miss.copy()]
    for it in range(cfg.max_iter):
        act = np.nonzero(outcome == 0)[0]
        if act.size == 0:
            break
        if it >= cfg.stall_window:
            # slow progress: the seed is wandering near a fold of the exponential map
            old = history[-cfg.stall_window][act]
            slow = miss[act] > cfg.stall_ratio * old
            outcome[act[slow]] = STALLED
            act = act[~slow]
            if act.size == 0:
                break
        step = _newton_steps(J[..., act], r[:, act])
        snorm = np.linalg.norm(step, axis=0)
        resid[act] = snorm
        vnorm = np.linalg.norm(V[:, act], axis=0)
        conv = (miss[act] <= cfg.miss_tol) & (snorm <= cfg.newton_tol * np.maximum(1.0, vnorm))
        outcome[act[conv]] = CONVERGED
        keep = ~conv
        act, step = act[keep], step[:, keep]
        alpha = np.ones(act.size)
        pending = np.ones(act.size, dtype=bool)
        capped = np.zeros(act.size, dtype=bool)
        for _h in range(cfg.max_halvings + 1):
            idx = np.nonzero(pending)[0]
            if idx.size == 0:
                break
            members = act[idx]
            Vt = V[:, members] + alpha[idx] * step[:, idx]
            # trial velocities beyond twice the cap are rejected without integrating
            Et = eval_F_batch(R, P[:, members], Vt)
            capped[idx] = ~(Et <= 2.0 * E_max)
            trial = np.nonzero(~capped[idx])[0]
            better = np.zeros(idx.size, dtype=bool)
            if trial.size:
                rt, Jt, okt = _shoot(R, p, q, Vt[:, trial], cfg.tol)
                mt = np.linalg.norm(rt, axis=0)
                good = okt & (mt < miss[members[trial]])
                acc = members[trial[good]]
                V[:, acc] = Vt[:, trial[good]]
                r[:, acc] = rt[:, good]
                J[..., acc] = Jt[..., good]
                miss[acc] = mt[good]
                better[trial[good]] = True
            pending[idx[better]] = False
            alpha[idx[~better]] *= 0.5
        outcome[act[pending & capped]] = ABANDONED
        pending &= ~capped
        stalled = act[pending]
        # at the integrator's noise floor no step can reduce the miss further
        floor_ok = (miss[stalled] <= cfg.miss_tol) & (
            resid[stalled] <= 100 * cfg.newton_tol * np.maximum(1.0, np.linalg.norm(V[:, stalled], axis=0)))
        outcome[stalled[floor_ok]] = CONVERGED
        outcome[stalled[~floor_ok]] = STALLED
        history.append(miss.copy())
        live = np.nonzero(outcome == 0)[0]
        if live.size:
            E = eval_F_batch(R, P[:, live], V[:, live])
            outcome[live[E > 2.0 * E_max]] = ABANDONED
    outcome[outcome == 0] = MAXITER
    return V, outcome, miss, resid


def _chunk_task(args):
    R, p, q, V0, E_max, cfg = args
    return newton_chunk(R, p, q, V0, E_max, cfg)


def _map_chunks(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_chunk_task(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_chunk_task, tasks))


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def _dedup(cands, cfg: ShootingConfig):
    """Merge candidates ``(E, v, miss, resid)`` closer than the dedup radius."""
    cands = sorted(cands, key=lambda c: (c[0], tuple(c[1])))
    unique = []
    for c in cands:
        dup = False
        for u in unique:
            if (abs(c[0] - u[0]) <= cfg.dedup_energy
                    and np.linalg.norm(c[1] - u[1]) <= cfg.dedup_radius * max(c[0], u[0])):
                dup = True
                break
        if not dup:
            unique.append(c)
    return unique


def _sort_key(sol_tuple):
    E, v = sol_tuple[0], sol_tuple[1]
    return (round(E, 9), tuple(round(float(x), 9) for x in v))


def enumerate_geodesics(R: RandersStructure, p, q, E_max: float, config: ShootingConfig | None = None, *,
                        workers: int = 1, complete: bool = False) -> EnumerationResult:
    """All geodesics ``p -> q`` with energy at most ``E_max`` found from the seed grid."""
    cfg = config or ShootingConfig()
    n = R.dim
    p = _as_point(p, n)
    q = _as_point(q, n)
    if not np.any(R.chart.wrap_delta(q - p)):
        raise ValueError("p and q must differ")
    if not E_max > 0:
        raise ValueError("E_max must be > 0")
    inside = R.chart.contains(np.stack([p, q], axis=1))
    if not np.all(inside):
        raise ValueError("p and q must lie inside the chart domain")
    seeds, levels, count = seed_velocities(R, p, q, E_max, cfg)
    tasks = [(R, p, q, seeds[:, k:k + CHUNK], E_max, cfg) for k in range(0, seeds.shape[1], CHUNK)]
    results = _map_chunks(tasks, workers)
    cands = []
    outcomes = {name: 0 for name in OUTCOME_NAMES.values()}
    for V, outcome, miss, resid in results:
        for k in range(V.shape[1]):
            outcomes[OUTCOME_NAMES[int(outcome[k])]] += 1
            if outcome[k] == CONVERGED:
                E = eval_F(R, p, V[:, k])
                if E <= E_max * (1 + 1e-9):
                    cands.append((E, V[:, k].copy(), float(miss[k]), float(resid[k])))
    unique = sorted(_dedup(cands, cfg), key=_sort_key)
    solutions = []
    for E, v, miss, resid in unique:
        traj = integrate(R, GeodesicState(p, v, "randers"), 1.0, cfg.tol, jacobi=True)
        solutions.append(GeodesicSolution(v, float(E), traj, miss, resid,
                                          conjugate_points(traj, cfg.nonconjugate_margin, cfg.conjugate_margin)))
    return EnumerationResult(p.tolist(), q.tolist(), solutions, float(E_max), int(seeds.shape[1]),
                             [float(e) for e in levels], int(count), bool(complete), outcomes, cfg)


def finsler_distance(R: RandersStructure, p, q, E_max: float, config: ShootingConfig | None = None,
                     workers: int = 1) -> float:
    """Non-symmetric distance ``d(p, q)``: the shortest enumerated geodesic."""
    res = enumerate_geodesics(R, p, q, E_max, config, workers=workers)
    if not res.solutions:
        raise NoSolutionFound(f"no geodesic from {list(p)} to {list(q)} with energy <= {E_max}")
    return min(res.lengths)


# ---------------------------------------------------------------------------
# energy bound
# ---------------------------------------------------------------------------

@dataclass
class EnergyBound:
    E_max: float
    raw_bound: float
    safety: float
    d: float
    f_min: float
    argmin: list
    lambda0: float
    box: tuple
    samples_in_sublevel: int
    certificate: Certificate | None = None

    def to_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k != "certificate"}
        out["box"] = {"lower": list(self.box[0]), "upper": list(self.box[1])}
        out["certificate"] = self.certificate.to_dict() if self.certificate else None
        return out


def _face_points(lower, upper, per_face=256, seed=0):
    n = lower.size
    pts = []
    for k in range(n):
        for side in (lower[k], upper[k]):
            if n == 1:
                pts.append(np.array([[side]]))
                continue
            lo = np.delete(lower, k)
            hi = np.delete(upper, k)
            s = sobol_box(lo, hi, per_face, seed)
            pts.append(np.insert(s, k, side, axis=1))
    pts = np.concatenate(pts)
    # box corners
    corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(lower, upper)], indexing="ij")).reshape(n, -1).T
    return np.concatenate([pts, corners]).T


def _shrink_box(f, d, lower, upper, pq, limits, iterations: int = 20, pad: float = 0.05):
    """Pull each face inwards by bisection while the faces stay above ``d``.

    The faces are only sampled, so the shrunk box is padded outwards by
    ``pad`` times its width (within the chart) before it is returned.
    """
    lower, upper = lower.copy(), upper.copy()
    inner_lo, inner_hi = pq.min(axis=0), pq.max(axis=0)
    for k in range(lower.size):
        for side in (0, 1):
            box = [lower, upper]
            good = box[side][k]
            bad = inner_lo[k] if side == 0 else inner_hi[k]
            for _ in range(iterations):
                mid = 0.5 * (good + bad)
                box[side][k] = mid
                vals, _, _ = f.derivatives(_face_points(lower, upper))
                if np.all(vals > d):
                    good = mid
                else:
                    bad = mid
            box[side][k] = good
    width = upper - lower
    return np.maximum(lower - pad * width, limits[0]), np.minimum(upper + pad * width, limits[1])


def sublevel_box(R: RandersStructure, f: ScalarField, p, q, d: float, *, max_doublings: int = 12):
    """Coordinate box whose faces lie strictly above the level ``d`` of ``f``."""
    chart = R.chart
    if chart.is_periodic:
        raise SublevelUnbounded("sublevel sets are not bounded in a periodic chart")
    lo_c = np.array(chart.lower)
    hi_c = np.array(chart.upper)
    pq = np.stack([p, q])
    center = pq.mean(axis=0)
    half = np.maximum(0.75 * (pq.max(axis=0) - pq.min(axis=0)), 0.5)
    with np.errstate(invalid="ignore"):
        inner_lo = np.where(np.isfinite(lo_c), lo_c + 1e-9 * np.maximum(1.0, np.abs(lo_c)), -np.inf)
        inner_hi = np.where(np.isfinite(hi_c), hi_c - 1e-9 * np.maximum(1.0, np.abs(hi_c)), np.inf)
    for _ in range(max_doublings):
        lower = np.maximum(center - half, inner_lo)
        upper = np.minimum(center + half, inner_hi)
        faces = _face_points(lower, upper)
        vals, _, _ = f.derivatives(faces)
        if np.all(vals > d):
            return _shrink_box(f, d, lower, upper, pq, (inner_lo, inner_hi))
        if np.all(lower <= inner_lo) and np.all(upper >= inner_hi):
            break
        half = 2.0 * half
    raise SublevelUnbounded(f"could not enclose the sublevel f <= {d:.6g} inside the chart")


def energy_bound(R: RandersStructure, f: ScalarField, p, q, *, samples: int = 4096, directions: int = 32,
                 seed: int = 0, safety: float = 2.0, certificate: Certificate | None = None,
                 region=None) -> EnergyBound:
    """Constructive cap on the energy of any geodesic from ``p`` to ``q``.

    Along a constant-speed geodesic ``rho = f o gamma`` satisfies
    ``rho'' >= lambda0 E^2`` and ``rho <= d`` on ``[0, 1]``, hence
    ``f_min <= rho(1/2) <= d - lambda0 E^2 / 8`` and
    ``E <= sqrt(8 (d - f_min) / lambda0)``.  The result is multiplied by
    ``safety`` to absorb sampling error in ``lambda0`` and ``f_min``.
    """
    n = R.dim
    p = _as_point(p, n)
    q = _as_point(q, n)
    d = max(float(f(p)), float(f(q)))
    if region is None:
        lower, upper = sublevel_box(R, f, p, q, d)
    else:
        lower, upper = np.asarray(region[0], dtype=float), np.asarray(region[1], dtype=float)
    box = (tuple(map(float, lower)), tuple(map(float, upper)))
    if certificate is None:
        certificate = certificate_for(R, f, box, seed=seed, level=d if region is None else None)
    if not certificate.passed:
        raise CertificateMissing(f"convexity certificate failed: {certificate.reason} "
                                 f"(margin {certificate.margin:.6g})")
    X = np.concatenate([sobol_box(lower, upper, samples, seed).T, p[:, None], q[:, None]], axis=1)
    vals, _, _ = f.derivatives(X)
    X = X[:, vals <= d]
    vals = vals[vals <= d]
    k = int(np.argmin(vals))
    opt = minimize(lambda z: float(f(z)), X[:, k], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    x_min, f_min = (opt.x, float(opt.fun)) if opt.fun < vals[k] and np.all(R.chart.contains(opt.x[:, None])) \
        else (X[:, k], float(vals[k]))
    U = sphere_directions(n, directions).T
    m = X.shape[1]
    Xs = np.repeat(X, directions, axis=1)
    Ys = np.tile(U, (1, m))
    Ys = Ys / eval_F_batch(R, Xs, Ys)
    t1, t2, t3, _, _ = finsler_hessian_terms(R, f, Xs, Ys)
    lam0 = float(np.min(t1 + t2 + t3))
    if not lam0 > 0:
        raise CertificateMissing(f"Finsler Hessian of f is not positive on the sublevel (min {lam0:.6g})")
    raw = math.sqrt(8.0 * max(d - f_min, 0.0) / lam0)
    return EnergyBound(safety * raw, raw, safety, d, f_min, list(map(float, x_min)), lam0, box, int(m),
                       certificate)


# ---------------------------------------------------------------------------
# finiteness report
# ---------------------------------------------------------------------------

PROVEN = "PROVEN-FINITE-COMPLETE"
INDETERMINATE = "INDETERMINATE-CONJUGACY"
HEURISTIC = "HEURISTIC"


@dataclass
class FinitenessReport:
    label: str
    enumeration: EnumerationResult
    certificate: Certificate | None
    bound: EnergyBound | None
    emax_source: str
    notes: list = field(default_factory=list)

    @property
    def count(self):
        return self.enumeration.count

    def to_dict(self):
        return {
            "label": self.label,
            "count": self.count,
            "lengths": self.enumeration.lengths,
            "margins": [s.conjugacy.margin for s in self.enumeration.solutions],
            "conjugacy": [s.conjugacy.status for s in self.enumeration.solutions],
            "emax_source": self.emax_source,
            "certificate": self.certificate.to_dict() if self.certificate else None,
            "energy_bound": self.bound.to_dict() if self.bound else None,
            "enumeration": self.enumeration.to_dict(),
            "notes": list(self.notes),
        }


def finiteness_report(R: RandersStructure, f: ScalarField | None, p, q, *, emax: float | None = None,
                      config: ShootingConfig | None = None, workers: int = 1, seed: int = 0,
                      samples: int = 4096, region=None) -> FinitenessReport:
    """Certificate -> energy bound -> enumeration -> conjugacy, with an honest label.

    ``PROVEN-FINITE-COMPLETE`` needs a passing certificate, a bounded
    sublevel, an energy cap no smaller than the certified bound and
    non-conjugate endpoints along every solution.
    """
    cfg = config or ShootingConfig()
    notes = []
    cert = None
    bound = None
    if f is not None:
        try:
            d = max(float(f(p)), float(f(q)))
            box = region if region is not None else sublevel_box(R, f, np.asarray(p, float), np.asarray(q, float), d)
            cert = certificate_for(R, f, box, seed=seed, samples=samples, level=d if region is None else None)
            if cert.passed:
                bound = energy_bound(R, f, p, q, certificate=cert, region=box, seed=seed, samples=samples)
            else:
                notes.append(f"certificate failed: {cert.reason}")
        except (SublevelUnbounded, CertificateMissing) as exc:
            notes.append(str(exc))
    else:
        notes.append("no convex function supplied")
    if emax is not None:
        E_max, source = float(emax), "user"
        if bound is not None and E_max < bound.E_max:
            notes.append(f"user energy cap {E_max:.6g} is below the certified bound {bound.E_max:.6g}")
    elif bound is not None:
        E_max, source = bound.E_max, "certified"
    else:
        raise CertificateMissing("no certified energy bound (" + "; ".join(notes)
                                 + "); supply an explicit energy cap (emax)")
    complete = bound is not None and E_max >= bound.E_max
    enum = enumerate_geodesics(R, p, q, E_max, cfg, workers=workers, complete=complete)
    statuses = [s.conjugacy.status for s in enum.solutions]
    if complete and all(s == "non-conjugate" for s in statuses):
        label = PROVEN
    elif any(s != "non-conjugate" for s in statuses):
        label = INDETERMINATE
    else:
        label = HEURISTIC
    if bound is not None:
        over = [s.energy for s in enum.solutions if s.energy > bound.E_max / bound.safety]
        if over:
            notes.append(f"{len(over)} solution(s) have energy in the safety margin (E_max/2, E_max]")
    return FinitenessReport(label, enum, cert, bound, source, notes)
