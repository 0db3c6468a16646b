"""Built-in oracle suite behind ``randerskit selftest`` (closed-form checks, a few seconds)."""

from __future__ import annotations

import math

import numpy as np

from .convexity import fermat_H, finsler_hessian
from .fieldcore import Chart, MetricField, OneFormField, ScalarField, VectorField
from .geodesic import GeodesicState, exp_map, integrate, rhs_fermat, rhs_randers_speed
from .metrics import randers_from_fermat, randers_from_generic, randers_from_zermelo
from .shooting import finsler_distance
from .spacetime import StationarySpacetime, count_lightlike_images
from .variation import first_conjugate_parameter


def _plane(lim=5.0):
    return Chart(2, (-lim, -lim), (lim, lim))


def _zermelo():
    c = _plane()
    R = randers_from_zermelo(MetricField.euclidean(c), VectorField.parse(["0.5", "0"], c))
    d1 = finsler_distance(R, [0, 0], [1, 0], 3.0)
    d2 = finsler_distance(R, [1, 0], [0, 0], 3.0)
    err = max(abs(d1 - 2 / 3), abs(d2 - 2))
    return err <= 1e-6, f"d = {d1:.10f}, {d2:.10f} (oracle 2/3, 2)"


def _flat_exp():
    c = _plane()
    R = randers_from_generic(MetricField.euclidean(c), OneFormField.parse(["0", "0"], c))
    x = exp_map(R, [0.2, -0.1], [0.7, 0.4])
    err = float(np.max(np.abs(x - [0.9, 0.3])))
    return err <= 1e-9, f"|exp(p, v) - (p + v)| = {err:.2e}"


def _sphere_conjugate():
    c = _plane()
    R = randers_from_generic(MetricField.conformal(c, "4/(1+x1^2+x2^2)^2"), OneFormField.parse(["0", "0"], c))
    s = first_conjugate_parameter(R, [1, 0], [0, 1], 1.5 * math.pi)
    ok = s is not None and abs(s - math.pi) <= 1e-4
    return ok, f"first conjugate parameter {s!r} (oracle pi)"


def _fermat_H():
    return fermat_H(0.0) == 3.0, f"H(0) = {fermat_H(0.0)!r}"


def _minkowski():
    c = Chart(2)
    sp = StationarySpacetime(c, MetricField.euclidean(c), VectorField.parse(["0", "0"], c),
                             ScalarField.parse("1", c))
    rep = count_lightlike_images(sp, [0, 0], 0.25, [1, 0.5], ScalarField.parse("(x1^2+x2^2)/2", c))
    t = rep.arrival_times
    ok = len(t) == 1 and abs(t[0] - (0.25 + math.hypot(1, 0.5))) <= 1e-8
    return ok, f"{len(t)} image(s), arrival {t}"


def _hessian():
    c = _plane()
    R = randers_from_generic(MetricField.euclidean(c), OneFormField.parse(["-0.1*x2", "0.1*x1"], c))
    f = ScalarField.parse("(x1^2+x2^2)/2", c)
    x, y, h = np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1e-3
    fw = integrate(R, GeodesicState(x, y), h, 1e-13).endpoint
    bw = integrate(R, GeodesicState(x, y), -h, 1e-13, _allow_backward=True).endpoint
    fd = (float(f(fw)) - 2 * float(f(x)) + float(f(bw))) / h ** 2
    val = finsler_hessian(R, f, x, y).value
    return abs(fd - val) <= 1e-5, f"H_f = {val:.10f}, second difference {fd:.10f}"


def _fermat_rhs():
    c = _plane()
    g0 = MetricField.parse([["1+0.1*x1^2", "0.05*x1*x2"], ["0.05*x1*x2", "1+0.2*sin(x2)^2"]], c)
    R = randers_from_fermat(g0, VectorField.parse(["0.3*cos(x2)", "0.2*sin(x1)"], c),
                            ScalarField.parse("1+0.3*exp(-x1^2)", c))
    st = GeodesicState([0.3, -0.2], [0.7, 0.4])
    err = float(np.max(np.abs(rhs_fermat(R, st) - rhs_randers_speed(R, st))))
    return err <= 1e-12, f"|a_fermat - a_randers| = {err:.2e}"


CHECKS = [
    ("zermelo constant-wind distances", _zermelo),
    ("flat exponential map", _flat_exp),
    ("sphere first conjugate point", _sphere_conjugate),
    ("Fermat bound H(0) = 3", _fermat_H),
    ("Minkowski light-ray arrival", _minkowski),
    ("Finsler Hessian vs second difference", _hessian),
    ("Fermat vs Randers acceleration", _fermat_rhs),
]


def run_selftest():
    rows = []
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # report, do not abort the table
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))
    return rows
