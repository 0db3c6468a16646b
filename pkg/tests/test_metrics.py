from __future__ import annotations

import math
import pickle

import numpy as np
import pytest

from randerskit.errors import NonpositiveBeta, NormViolation, WindTooStrong
from randerskit.fieldcore import Chart, MetricField, OneFormField, ScalarField, VectorField
from randerskit.geodesic import GeodesicState, integrate
from randerskit.metrics import (
    eval_F,
    fundamental_tensor,
    indicatrix,
    randers_from_fermat,
    randers_from_generic,
    randers_from_zermelo,
    randers_length,
    zermelo_as_fermat,
)

PLANE = Chart(2, (-5.0, -5.0), (5.0, 5.0))


def _zermelo(wind=("0.5", "0")):
    return randers_from_zermelo(MetricField.euclidean(PLANE), VectorField.parse(list(wind), PLANE))


def test_zermelo_norm_is_travel_time():
    R = _zermelo()
    # downwind, upwind, crosswind travel times of unit displacements at unit airspeed
    assert eval_F(R, [0, 0], [1, 0]) == pytest.approx(2 / 3, abs=1e-15)
    assert eval_F(R, [0, 0], [-1, 0]) == pytest.approx(2.0, abs=1e-15)
    assert eval_F(R, [0, 0], [0, 1]) == pytest.approx(2 / math.sqrt(3), abs=1e-15)


def test_fermat_norm_closed_form():
    R = randers_from_fermat(MetricField.euclidean(PLANE), VectorField.parse(["1", "0"], PLANE),
                            ScalarField.parse("1", PLANE))
    # F(v) = (g0(delta, v) + sqrt(g0(delta, v)^2 + beta g0(v, v))) / beta
    assert eval_F(R, [0, 0], [1, 1]) == pytest.approx(1 + math.sqrt(3), abs=1e-15)
    assert eval_F(R, [0, 0], [0, 1]) == pytest.approx(1.0, abs=1e-15)


def test_zermelo_and_fermat_routes_agree():
    g = MetricField.parse([["1 + 0.1*x1^2", "0"], ["0", "1"]], PLANE)
    W = VectorField.parse(["0.2*sin(x2)", "0.1*x1/5"], PLANE)
    Rz = randers_from_zermelo(g, W)
    Rf = randers_from_fermat(*zermelo_as_fermat(g, W))
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.uniform(-3, 3, 2), rng.normal(size=2)
        assert eval_F(Rz, x, y) == pytest.approx(eval_F(Rf, x, y), rel=1e-13)


def test_strong_wind_and_nonpositive_beta_are_rejected():
    with pytest.raises(WindTooStrong):
        _zermelo(("0.3*x1", "0"))
    with pytest.raises(NonpositiveBeta):
        randers_from_fermat(MetricField.euclidean(PLANE), VectorField.parse(["0", "0"], PLANE),
                            ScalarField.parse("x1", PLANE))
    with pytest.raises(NormViolation):
        randers_from_generic(MetricField.euclidean(PLANE), OneFormField.parse(["1.2", "0"], PLANE))


def test_homogeneity_and_asymmetry():
    R = _zermelo()
    x, y = np.array([0.3, 0.1]), np.array([0.4, -1.3])
    assert eval_F(R, x, 3.5 * y) == pytest.approx(3.5 * eval_F(R, x, y), rel=1e-14)
    assert eval_F(R, x, y) != pytest.approx(eval_F(R, x, -y))


def test_fundamental_tensor_is_hessian_of_half_F_squared():
    R = randers_from_generic(MetricField.parse([["2", "0.3"], ["0.3", "1 + x1^2"]], PLANE),
                             OneFormField.parse(["0.2*x2", "0.1"], PLANE))
    x, y = np.array([0.5, -0.4]), np.array([0.8, 0.6])
    G = fundamental_tensor(R, x, y)
    eps = 1e-4
    fd = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * eps, np.eye(2)[j] * eps
            f = lambda v: 0.5 * eval_F(R, x, v) ** 2  # noqa: E731
            fd[i, j] = (f(y + ei + ej) - f(y + ei - ej) - f(y - ei + ej) + f(y - ei - ej)) / (4 * eps ** 2)
    assert np.allclose(G, fd, atol=1e-7)
    assert np.all(np.linalg.eigvalsh(G) > 0)


def test_indicatrix_is_unit_sphere_of_F():
    R = _zermelo(("0.3", "-0.2"))
    sample = indicatrix(R, [1.0, 2.0], count=32)
    assert sample.vectors.shape == (32, 2)
    assert all(eval_F(R, sample.x, v) == pytest.approx(1.0, abs=1e-14) for v in sample.vectors)


def test_randers_length_of_straight_line_in_constant_wind():
    R = _zermelo()
    traj = integrate(R, GeodesicState([0.0, 0.0], [1.0, 0.0]), 1.0, 1e-11)
    assert randers_length(R, traj) == pytest.approx(2 / 3, abs=1e-12)
    assert traj.randers_length == pytest.approx(2 / 3, abs=1e-12)


def test_structures_pickle():
    R = _zermelo(("0.2*sin(x1)", "0.1"))
    R2 = pickle.loads(pickle.dumps(R))
    assert eval_F(R2, [0.4, 0.2], [1.0, 2.0]) == eval_F(R, [0.4, 0.2], [1.0, 2.0])
    assert R2.provenance.kind == "zermelo"
