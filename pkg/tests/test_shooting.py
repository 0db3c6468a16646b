from __future__ import annotations

import math

import numpy as np
import pytest

from randerskit.errors import CertificateMissing, NoSolutionFound, SublevelUnbounded
from randerskit.fieldcore import Chart, MetricField, OneFormField, ScalarField, VectorField
from randerskit.metrics import eval_F, randers_from_generic, randers_from_zermelo
from randerskit.shooting import (
    HEURISTIC,
    PROVEN,
    ShootingConfig,
    energy_bound,
    energy_levels,
    enumerate_geodesics,
    finiteness_report,
    finsler_distance,
    sublevel_box,
)

PLANE = Chart(2, (-5.0, -5.0), (5.0, 5.0))
BOWL = ScalarField.parse("(x1^2+x2^2)/2", PLANE)
ZERMELO = randers_from_zermelo(MetricField.euclidean(PLANE), VectorField.parse(["0.5", "0"], PLANE))
ROT = randers_from_generic(MetricField.euclidean(PLANE),
                           OneFormField.parse(["-0.1*x2*exp(-x1^2-x2^2)", "0.1*x1*exp(-x1^2-x2^2)"], PLANE))


def test_energy_levels_cover_the_cap():
    levels = energy_levels(4.0, 3)
    assert max(levels) == pytest.approx(4.0)
    assert min(levels) > 0
    assert len(levels) >= 3


def test_zermelo_distances_and_solution_data():
    res = enumerate_geodesics(ZERMELO, [0, 0], [1, 0], 3.0)
    assert res.count == 1
    sol = res.solutions[0]
    assert sol.randers_length == pytest.approx(2 / 3, abs=1e-9)
    assert sol.energy == pytest.approx(eval_F(ZERMELO, [0, 0], sol.v), rel=1e-12)
    assert sol.miss <= 1e-7
    assert sol.conjugacy.status == "non-conjugate"
    assert finsler_distance(ZERMELO, [1, 0], [0, 0], 3.0) == pytest.approx(2.0, abs=1e-9)


def test_energy_cap_excludes_long_geodesics():
    with pytest.raises(NoSolutionFound):
        finsler_distance(ZERMELO, [1, 0], [0, 0], 1.5)


def test_cylinder_lattice_and_deduplication():
    chart = Chart(2, (-math.inf, -5.0), (math.inf, 5.0), (1.0, None))
    R = randers_from_generic(MetricField.euclidean(chart), OneFormField.parse(["0", "0"], chart))
    res = enumerate_geodesics(R, [0.0, 0.0], [0.5, 0.0], 2.5)
    # lifts q + k e1, k = -3..2, have length |0.5 + k| <= 2.5: 0.5, 0.5, 1.5, 1.5, 2.5 (k = 2), 2.5 (k = -3)
    assert sorted(round(x, 7) for x in res.lengths) == [0.5, 0.5, 1.5, 1.5, 2.5, 2.5]
    assert len({tuple(np.round(s.v, 6)) for s in res.solutions}) == res.count


def test_sublevel_box_encloses_sublevel():
    lower, upper = sublevel_box(ROT, BOWL, np.array([-1.0, 0.0]), np.array([1.0, 0.0]), 0.5)
    assert np.all(lower < -1.0 + 1e-12) and np.all(upper > 1.0 - 1e-12)
    assert np.all(upper < 5.0)
    periodic = Chart(2, (-math.inf, -5.0), (math.inf, 5.0), (1.0, None))
    R = randers_from_generic(MetricField.euclidean(periodic), OneFormField.parse(["0", "0"], periodic))
    with pytest.raises(SublevelUnbounded):
        sublevel_box(R, ScalarField.parse("x2^2", periodic), np.zeros(2), np.array([0.5, 0.0]), 1.0)


def test_energy_bound_is_finite_and_certified():
    bound = energy_bound(ROT, BOWL, [-1.0, 0.0], [1.0, 0.0])
    assert math.isfinite(bound.E_max) and bound.E_max > 0
    assert bound.E_max == pytest.approx(2 * bound.raw_bound)
    assert bound.certificate.passed
    assert bound.d == pytest.approx(0.5)


def test_energy_bound_without_certificate_raises():
    R = randers_from_generic(MetricField.euclidean(PLANE), OneFormField.parse(["0.45*tanh(2*x2)", "0"], PLANE))
    with pytest.raises(CertificateMissing):
        energy_bound(R, ScalarField.parse("(x1^2+x2^2)/20", PLANE), [-3.0, 0.5], [3.0, -0.5])


def test_finiteness_labels():
    rep = finiteness_report(ROT, BOWL, [-1.0, 0.0], [1.0, 0.0])
    assert rep.label == PROVEN and rep.count == 1
    assert rep.to_dict()["label"] == PROVEN
    heuristic = finiteness_report(ZERMELO, None, [0, 0], [1, 0], emax=3.0)
    assert heuristic.label == HEURISTIC
    with pytest.raises(CertificateMissing):
        finiteness_report(ZERMELO, None, [0, 0], [1, 0])


@pytest.mark.parametrize("workers", [1, 4])
def test_enumeration_is_independent_of_worker_count(workers):
    cfg = ShootingConfig()
    base = enumerate_geodesics(ROT, [-1.0, 0.0], [1.0, 0.0], 4.0, cfg, workers=1).to_dict()
    other = enumerate_geodesics(ROT, [-1.0, 0.0], [1.0, 0.0], 4.0, cfg, workers=workers).to_dict()
    assert base == other
