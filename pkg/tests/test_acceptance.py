"""The ten acceptance criteria of the toolkit, one test each.

Every test records a PASS/FAIL line through ``record_acceptance`` (printed in
the pytest terminal summary) and then asserts the criterion as stated.
Randomised criteria draw their scenarios from a fixed generator seed chosen
before the run; the scenario distributions are documented inline.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest
import sympy as sp
from scipy.optimize import minimize_scalar

from randerskit import cli
from randerskit.convexity import certificate_fermat, certificate_randers, fermat_H, finsler_hessian
from randerskit.fieldcore import Chart, MetricField, OneFormField, ScalarField, VectorField
from randerskit.geodesic import GeodesicState, integrate
from randerskit.metrics import (eval_F, randers_from_fermat, randers_from_generic, randers_from_zermelo,
                                zermelo_as_fermat)
from randerskit.shooting import PROVEN, ShootingConfig, energy_bound, enumerate_geodesics, finiteness_report
from randerskit.spacetime import StationarySpacetime, count_lightlike_images, count_timelike
from randerskit.variation import NONCONJUGATE_MARGIN, conjugate_points, first_conjugate_parameter, transport_from

PLANE = Chart(2, (-5.0, -5.0), (5.0, 5.0))
LOCAL = Chart(2, (-2.0, -2.0), (2.0, 2.0))  # random fields below are only tame near the origin
WIDE = Chart(2, (-3.0, -3.0), (3.0, 3.0))


def _polyline_distance(points, line):
    """Distance of each row of ``points`` to the polyline through the rows of ``line``."""
    a, b = line[:-1], line[1:]
    ab = b - a
    out = np.empty(len(points))
    for k, x in enumerate(points):
        t = np.clip(np.einsum("ij,ij->i", x - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        out[k] = np.min(np.linalg.norm(x - (a + t[:, None] * ab), axis=1))
    return out


def _hausdorff(c1, c2):
    return max(np.max(_polyline_distance(c1, c2)), np.max(_polyline_distance(c2, c1)))


# ---------------------------------------------------------------------------
# 1. constant-wind Zermelo oracle
# ---------------------------------------------------------------------------

def test_criterion_01_zermelo_constant_wind(record_acceptance):
    W = np.array([0.5, 0.0])
    R = randers_from_zermelo(MetricField.euclidean(PLANE), VectorField.parse(["1/2", "0"], PLANE))

    def travel_time(d):
        gdW, mu2 = float(d @ W), float(W @ W)
        return (-gdW + math.sqrt(gdW ** 2 + (1 - mu2) * float(d @ d))) / (1 - mu2)

    cases = [((0, 0), (1, 0), 2 / 3), ((1, 0), (0, 0), 2.0), ((0, 0), (0, 1), travel_time(np.array([0.0, 1.0])))]
    dist_err, straight_err = 0.0, 0.0
    for p, q, oracle in cases:
        res = enumerate_geodesics(R, p, q, 4.0)
        best = min(res.solutions, key=lambda s: s.randers_length)
        dist_err = max(dist_err, abs(best.randers_length - oracle))
        _, x, _ = best.trajectory.sample(400)
        chord = np.array([np.asarray(p, float), np.asarray(q, float)])
        straight_err = max(straight_err, _hausdorff(x, chord))
    ok = dist_err <= 1e-6 and straight_err <= 1e-6
    record_acceptance(1, "constant-wind Zermelo distances and straight geodesics", ok,
                      f"max distance error {dist_err:.2e}, max Hausdorff to chord {straight_err:.2e}")
    assert dist_err <= 1e-6
    assert straight_err <= 1e-6


# ---------------------------------------------------------------------------
# 2. finiteness pipeline end to end
# ---------------------------------------------------------------------------

def _rotational():
    omega = OneFormField.parse(["-0.1*x2*exp(-x1^2-x2^2)", "0.1*x1*exp(-x1^2-x2^2)"], PLANE)
    R = randers_from_generic(MetricField.euclidean(PLANE), omega)
    return R, ScalarField.parse("(x1^2+x2^2)/2", PLANE)


def test_criterion_02_finiteness_pipeline(record_acceptance):
    R, f = _rotational()
    p, q = [-1.0, 0.0], [1.0, 0.0]
    bound = energy_bound(R, f, p, q)
    cert = bound.certificate
    counts = {}
    reports = {}
    for name, cfg in [("base", ShootingConfig()), ("refine 2x", ShootingConfig(refine=2)),
                      ("refine 4x", ShootingConfig(refine=4)), ("tol 1e-11", ShootingConfig(tol=1e-11))]:
        rep = finiteness_report(R, f, p, q, config=cfg)
        counts[name] = rep.count
        reports[name] = rep
    base = reports["base"]
    energies = [s.energy for s in base.enumeration.solutions]
    ok = (cert.passed and math.isfinite(bound.E_max) and len(set(counts.values())) == 1
          and base.label == PROVEN and all(e <= bound.E_max / 2 for e in energies))
    record_acceptance(2, "finiteness pipeline end to end", ok,
                      f"certificate margin {cert.margin:.4g}, E_max {bound.E_max:.6g}, counts {counts}, "
                      f"label {base.label}, max energy {max(energies):.6g}")
    assert cert.passed
    assert math.isfinite(bound.E_max)
    assert len(set(counts.values())) == 1
    assert base.label == PROVEN
    assert all(e <= bound.E_max / 2 for e in energies)


# ---------------------------------------------------------------------------
# 3. multiplicity oracle on the flat cylinder
# ---------------------------------------------------------------------------

def test_criterion_03_cylinder_multiplicity(record_acceptance):
    chart = Chart(2, (-math.inf, -5.0), (math.inf, 5.0), (1.0, None))
    R = randers_from_generic(MetricField.euclidean(chart), OneFormField.parse(["0", "0"], chart))
    res = enumerate_geodesics(R, [0.0, 0.0], [0.5, 0.0], 2.5)
    lengths = sorted(res.lengths)
    expected = [0.5, 0.5, 1.5, 1.5, 2.5]
    ok = len(lengths) == 5 and np.allclose(lengths, expected, atol=1e-7, rtol=0)
    record_acceptance(3, "flat cylinder multiplicity (exactly 5 geodesics)", ok,
                      f"found {len(lengths)}: {[round(x, 9) for x in lengths]}")
    assert len(lengths) == 5
    assert np.allclose(lengths, expected, atol=1e-7, rtol=0)


# ---------------------------------------------------------------------------
# 4. conjugacy oracle on the round sphere
# ---------------------------------------------------------------------------

def test_criterion_04_sphere_conjugacy(record_acceptance):
    R = randers_from_generic(MetricField.conformal(PLANE, "4/(1+x1^2+x2^2)^2"), OneFormField.parse(["0", "0"], PLANE))
    # unit speed at (1, 0) on the equator: |(0, 1)|_h = 2 / (1 + 1) = 1
    s_conj = first_conjugate_parameter(R, [1.0, 0.0], [0.0, 1.0], 1.5 * math.pi)
    margin = conjugate_points(transport_from(R, [1.0, 0.0], [0.0, 1.0], 0.9 * math.pi)).margin
    ok = s_conj is not None and abs(s_conj - math.pi) <= 1e-4 and margin > NONCONJUGATE_MARGIN
    record_acceptance(4, "sphere first conjugate point and non-conjugate margin", ok,
                      f"first conjugate parameter {s_conj!r}, margin at 0.9 pi {margin:.4g}")
    assert s_conj is not None and abs(s_conj - math.pi) <= 1e-4
    assert margin > NONCONJUGATE_MARGIN


# ---------------------------------------------------------------------------
# 5. Finsler Hessian formula
# ---------------------------------------------------------------------------

def _random_generic(rng):
    """Random metric h >= 0.6 I with mild x-dependence, a one-form with |B|_h < 0.3, a convex-ish f."""
    a11, a22 = rng.uniform(0.8, 1.5, 2)
    a12 = rng.uniform(-0.2, 0.2)
    e1, e2 = rng.uniform(-0.1, 0.1, 2)
    h = [[f"{a11:.6f}+{e1:.6f}*sin(x2)", f"{a12:.6f}"], [f"{a12:.6f}", f"{a22:.6f}+{e2:.6f}*cos(x1)"]]
    c1, c2, k1, k2 = *rng.uniform(-1, 1, 2), *rng.uniform(0.3, 1.5, 2)
    amp = rng.uniform(0.0, 0.2)  # |omega|_euclid <= amp and h >= 0.6 I  =>  |B|_h <= amp / sqrt(0.6) < 0.3
    omega = [f"{amp * c1 / math.sqrt(2):.6f}*sin({k1:.4f}*x2)", f"{amp * c2 / math.sqrt(2):.6f}*cos({k2:.4f}*x1)"]
    q1, q2 = rng.uniform(0.5, 2.0, 2)
    q12, cub = rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1)
    f = f"{q1:.6f}*x1^2/2+{q2:.6f}*x2^2/2+{q12:.6f}*x1*x2+{cub:.6f}*x1^3"
    return h, omega, f


def _sympy_riemannian_hessian(h, f, x, y):
    """Independent reference: Hess f(y, y) = y^T d^2 f y - Gamma^k_ij y^i y^j d_k f (sympy)."""
    x1, x2 = sp.symbols("x1 x2")
    X = [x1, x2]
    ns = {"x1": x1, "x2": x2}
    H = sp.Matrix([[sp.sympify(e.replace("^", "**"), locals=ns) for e in row] for row in h])
    F = sp.sympify(f.replace("^", "**"), locals=ns)
    Hinv = H.inv()
    val = 0
    for i in range(2):
        for j in range(2):
            term = sp.diff(F, X[i], X[j])
            for k in range(2):
                gam = sum(Hinv[k, m] * (sp.diff(H[m, i], X[j]) + sp.diff(H[m, j], X[i]) - sp.diff(H[i, j], X[m]))
                          for m in range(2)) / 2
                term -= gam * sp.diff(F, X[k])
            val += term * y[i] * y[j]
    return float(val.subs({x1: x[0], x2: x[1]}))


def test_criterion_05_finsler_hessian(record_acceptance):
    rng = np.random.default_rng(5)
    step = 1e-3
    worst_fd, worst_b0 = 0.0, 0.0
    for _ in range(50):
        h, omega, fexpr = _random_generic(rng)
        metric = MetricField.parse(h, PLANE)
        R = randers_from_generic(metric, OneFormField.parse(omega, PLANE))
        reverse = randers_from_generic(metric, OneFormField.parse([f"-({w})" for w in omega], PLANE))
        f = ScalarField.parse(fexpr, PLANE)
        x = rng.uniform(-1.0, 1.0, 2)
        y = rng.normal(size=2)
        fw = integrate(R, GeodesicState(x, y), step, 1e-13).endpoint
        # the backward branch of a Randers geodesic is the forward geodesic of the reversed metric
        bw = integrate(reverse, GeodesicState(x, -y), step, 1e-13).endpoint
        fd = (float(f(fw)) - 2 * float(f(x)) + float(f(bw))) / step ** 2
        worst_fd = max(worst_fd, abs(finsler_hessian(R, f, x, y).value - fd))
        R0 = randers_from_generic(metric, OneFormField.parse(["0", "0"], PLANE))
        worst_b0 = max(worst_b0, abs(finsler_hessian(R0, f, x, y).value - _sympy_riemannian_hessian(h, fexpr, x, y)))
    ok = worst_fd <= 1e-4 and worst_b0 <= 1e-10
    record_acceptance(5, "Finsler Hessian vs second difference; B = 0 vs Riemannian Hessian", ok,
                      f"50 scenarios: max |H - second difference| {worst_fd:.2e}, max |H - Hess| (B=0) {worst_b0:.2e}")
    assert worst_fd <= 1e-4
    assert worst_b0 <= 1e-10


# ---------------------------------------------------------------------------
# 6. Fermat bound: H(0) = 3, agreement with the Randers certificate
# ---------------------------------------------------------------------------

def test_criterion_06_fermat_bound(record_acceptance):
    rng = np.random.default_rng(6)
    chart = Chart(2, (-3.0, -3.0), (3.0, 3.0))
    region = ((-1.0, -1.0), (1.0, 1.0))
    agree, rows = 0, []
    for _ in range(20):
        # wind amplitude spans both sides of the certificate threshold
        a, w = rng.uniform(0.0, 0.6), rng.uniform(0.5, 2.0)
        c1, c2 = rng.uniform(-1, 1, 2)
        A, B = rng.uniform(0.5, 2.0, 2)
        g = MetricField.euclidean(chart)
        W = VectorField.parse([f"{a * c1:.6f}*sin({w:.4f}*x2)", f"{a * c2:.6f}*cos({w:.4f}*x1)"], chart)
        f = ScalarField.parse(f"{A:.4f}*x1^2/2+{B:.4f}*x2^2/2", chart)
        g0, delta, beta = zermelo_as_fermat(g, W)  # beta = alpha = 1 - |W|^2, delta = -W
        cr = certificate_randers(randers_from_zermelo(g, W), f, region)
        cf = certificate_fermat(g0, delta, beta, f, region)
        agree += cr.passed == cf.passed
        rows.append((cr.passed, round(cr.margin, 4), cf.passed, round(cf.margin, 4)))
    h0 = fermat_H(0.0)
    ok = h0 == 3.0 and agree == 20
    disagree = [r for r in rows if r[0] != r[2]]
    record_acceptance(6, "H(0) = 3 and Fermat/Randers certificate agreement", ok,
                      f"H(0) = {h0!r}, agreement {agree}/20, passes {sum(r[0] for r in rows)}/20"
                      + (f", disagreements (randers pass, margin, fermat pass, margin) {disagree}" if disagree else ""))
    assert h0 == 3.0
    assert agree == 20


# ---------------------------------------------------------------------------
# 7. spacetime lift (Minkowski)
# ---------------------------------------------------------------------------

def test_criterion_07_spacetime_lift(record_acceptance):
    chart = Chart(2)
    spt = StationarySpacetime(chart, MetricField.euclidean(chart), VectorField.parse(["0", "0"], chart),
                              ScalarField.parse("1", chart))
    f = ScalarField.parse("(x1^2+x2^2)/2", chart)
    x0, x1, t0 = [0.0, 0.0], [1.0, 0.5], 0.3
    dx = math.hypot(1.0, 0.5)
    light = count_lightlike_images(spt, x0, t0, x1, f)
    light_err = abs(light.arrival_times[0] - (t0 + dx)) if light.count == 1 else math.inf
    time_errs = {}
    for T in (0.5, 1.0, 2.0):
        rep = count_timelike(spt, x0, 0.0, x1, T, f)
        time_errs[T] = abs(rep.arrival_times[0] - math.sqrt(dx ** 2 + T ** 2)) if rep.count == 1 else math.inf
    ok = light_err <= 1e-8 and all(e <= 1e-6 for e in time_errs.values())
    record_acceptance(7, "Minkowski lightlike and timelike arrival times", ok,
                      f"lightlike error {light_err:.2e}, timelike errors {{T: err}} "
                      f"{ {T: float(f'{e:.2e}') for T, e in time_errs.items()} }")
    assert light_err <= 1e-8
    assert all(e <= 1e-6 for e in time_errs.values())


# ---------------------------------------------------------------------------
# 8. cross-formulation equivalence
# ---------------------------------------------------------------------------

def test_criterion_08_fermat_vs_randers_trajectories(record_acceptance):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        a11, a22 = rng.uniform(0.8, 1.5, 2)
        e1, e2, e12 = rng.uniform(-0.15, 0.15, 3)
        g0 = MetricField.parse([[f"{a11:.6f}+{e1:.6f}*x1^2", f"{e12:.6f}*sin(x1+x2)"],
                                [f"{e12:.6f}*sin(x1+x2)", f"{a22:.6f}+{e2:.6f}*cos(x2)^2"]], LOCAL)
        d1, d2, k = *rng.uniform(-0.4, 0.4, 2), rng.uniform(0.5, 1.5)
        delta = VectorField.parse([f"{d1:.6f}*cos({k:.4f}*x2)", f"{d2:.6f}*sin({k:.4f}*x1)"], LOCAL)
        b0, b1 = rng.uniform(0.7, 1.5), rng.uniform(-0.3, 0.3)
        beta = ScalarField.parse(f"{b0:.6f}+{b1:.6f}*exp(-x1^2-x2^2)", LOCAL)
        R = randers_from_fermat(g0, delta, beta)
        x = rng.uniform(-1, 1, 2)
        y = rng.normal(size=2)
        y = 0.8 * y / np.linalg.norm(y)  # stays well inside the chart over unit length
        tf = integrate(R, GeodesicState(x, y, "fermat"), 1.0, 1e-11)
        tr = integrate(R, GeodesicState(x, y, "randers"), 1.0, 1e-11)
        t = np.linspace(0.0, 1.0, 201)
        worst = max(worst, float(np.max(np.abs(tf.evaluate(t)[0] - tr.evaluate(t)[0]))))
    record_acceptance(8, "Fermat vs Randers geodesic equations", worst <= 1e-6,
                      f"20 scenarios: max position difference over unit length {worst:.2e}")
    assert worst <= 1e-6


# ---------------------------------------------------------------------------
# 9. exact one-form invariance
# ---------------------------------------------------------------------------

def test_criterion_09_exact_one_form(record_acceptance):
    rng = np.random.default_rng(9)
    worst_path, worst_len = 0.0, 0.0
    for _ in range(5):
        h, _, _ = _random_generic(rng)
        c1, c2, c3 = rng.uniform(-0.1, 0.1, 3)
        f0 = f"{c1:.6f}*x1+{c2:.6f}*sin(x2)+{c3:.6f}*x1*x2"
        f0_field = ScalarField.parse(f0, WIDE)
        omega = OneFormField.parse([f"{c1:.6f}+{c3:.6f}*x2", f"{c2:.6f}*cos(x2)+{c3:.6f}*x1"], WIDE)
        metric = MetricField.parse(h, WIDE)
        R = randers_from_generic(metric, omega)
        R0 = randers_from_generic(metric, OneFormField.parse(["0", "0"], WIDE))
        x = rng.uniform(-0.5, 0.5, 2)
        y = rng.normal(size=2)
        y = y / eval_F(R0, x, y)  # unit Riemannian speed
        tr = integrate(R, GeodesicState(x, y, "randers"), 0.5, 1e-12)
        _, xr, _ = tr.sample(1001)
        q = tr.endpoint
        # Riemannian geodesic with the same initial direction, run past q and cut at the point nearest q
        tg = integrate(R, GeodesicState(x, y, "riemannian"), 1.5, 1e-12)
        tt, xg, _ = tg.sample(6001)
        k = int(np.argmin(np.linalg.norm(xg - q, axis=1)))
        s_end = minimize_scalar(lambda s: float(np.linalg.norm(tg.evaluate([s])[0][0] - q)),
                                bounds=(tt[max(k - 1, 0)], tt[min(k + 1, len(tt) - 1)]), method="bounded",
                                options={"xatol": 1e-14}).x
        xg, _ = tg.evaluate(np.linspace(0.0, s_end, 1001))
        worst_path = max(worst_path, _hausdorff(xr, xg))
        # unit Riemannian speed: the Riemannian length is the parameter length
        pred = s_end + float(f0_field(q)) - float(f0_field(x))
        worst_len = max(worst_len, abs(tr.randers_length - pred))
    ok = worst_path <= 1e-6 and worst_len <= 1e-7
    record_acceptance(9, "exact one-form: same paths, length shifted by f0(q) - f0(p)", ok,
                      f"max Hausdorff {worst_path:.2e}, max length error {worst_len:.2e}")
    assert worst_path <= 1e-6
    assert worst_len <= 1e-7


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------

def test_criterion_10_determinism(record_acceptance, tmp_path):
    outputs = []
    for run, workers in enumerate((1, 1, 4, 8)):
        out = tmp_path / f"run{run}_w{workers}"
        code = cli.main(["enumerate", "--scenario", "rotational", "--out", str(out), "--workers", str(workers)])
        assert code == 0
        outputs.append(((out / "enumerate.json").read_bytes(), (out / "trajectories.csv").read_bytes()))
    identical = all(o == outputs[0] for o in outputs)
    count = json.loads(outputs[0][0])["count"]
    record_acceptance(10, "byte-identical enumerate output across runs and workers {1, 4, 8}", identical,
                      f"4 runs (workers 1, 1, 4, 8), count {count}, "
                      f"{'identical' if identical else 'DIFFERENT'} enumerate.json and trajectories.csv")
    assert identical
