import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projfpe import models, oracle
from projfpe.errors import NumericalError, UsageError
from projfpe.expfam import DensityGrid
from projfpe.numerics import QuadratureGrid

from conftest import normal_pdf
from test_models import BROWNIAN


def _state(times_states):
    return times_states[1][-1]


def test_gaussian_exact_examples():
    s = _state(oracle.gaussian_exact(0.0, 1.0, 0.0, 1.0, 1.0, 0.01))
    assert (s.m, s.Q) == pytest.approx((0.0, 2.0), abs=1e-12)
    times, states = oracle.gaussian_exact(-1.0, 2.0, 0.8, 1.0, 1.0, 0.01)
    assert np.allclose([st_.Q for st_ in states], 1.0, atol=1e-12)
    assert np.allclose([st_.m for st_ in states], 0.8 * np.exp(-times), atol=1e-9)
    s = _state(oracle.gaussian_exact(0.0, 0.0, 0.3, 0.7, 1.0, 0.1))
    assert (s.m, s.Q) == pytest.approx((0.3, 0.7), abs=1e-15)


def test_gaussian_exact_time_dependent():
    s = _state(oracle.gaussian_exact(lambda t: 0.0, lambda t: 2 * t, 0.0, 1.0, 1.0, 0.01))
    assert s.Q == pytest.approx(2.0, abs=1e-12)


def test_gaussian_state_rejects_nonpositive():
    with pytest.raises(NumericalError):
        oracle.GaussianState(0.0, 0.0)
    with pytest.raises(UsageError):
        oracle.gaussian_exact(0.0, 1.0, 0.0, -1.0, 1.0, 0.1)


@pytest.fixture(scope="module")
def fd_grid():
    return QuadratureGrid.trapezoid(-10.0, 10.0, 400)


def test_fd_heat(fd_grid):
    p0 = normal_pdf(fd_grid.nodes)
    p0 /= p0 @ fd_grid.weights
    res = oracle.fd_fpe_solve(BROWNIAN, p0, 0.5, 1e-3, fd_grid)
    ref = DensityGrid.from_values(fd_grid, normal_pdf(fd_grid.nodes, 0.0, 1.5))
    assert oracle.distance(res.density, ref).L1 <= 1e-3
    assert res.mass_drift <= 1e-8


def test_fd_stationary(fd_grid):
    p0 = normal_pdf(fd_grid.nodes)
    p0 /= p0 @ fd_grid.weights
    res = oracle.fd_fpe_solve(models.linear(-1.0, 2.0), p0, 1.0, 1e-3, fd_grid)
    assert oracle.distance(res.density, DensityGrid.from_values(fd_grid, p0)).L1 <= 1e-3


def test_fd_zero_time(fd_grid):
    p0 = normal_pdf(fd_grid.nodes)
    p0 /= p0 @ fd_grid.weights
    res = oracle.fd_fpe_solve(BROWNIAN, p0, 0.0, 1e-3, fd_grid)
    assert np.array_equal(res.density.values, p0) and res.steps == 0


def test_fd_linear_vs_exact(fd_grid):
    p0 = normal_pdf(fd_grid.nodes, 0.5, 0.3)
    p0 /= p0 @ fd_grid.weights
    res = oracle.fd_fpe_solve(models.linear(-1.0, 2.0), p0, 0.5, 1e-3, fd_grid)
    exact = _state(oracle.gaussian_exact(-1.0, 2.0, 0.5, 0.3, 0.5, 1e-3)).density(fd_grid)
    assert oracle.distance(res.density, exact).L1 <= 1e-3
    assert res.mass_drift <= 1e-8


def test_fd_requires_uniform_grid():
    g = QuadratureGrid.gauss_legendre(-5, 5, 4, 8)
    with pytest.raises(UsageError):
        oracle.fd_fpe_solve(BROWNIAN, normal_pdf(g.nodes), 0.1, 0.01, g)


def test_distance_examples(fd_grid):
    g = QuadratureGrid.gauss_legendre(-20.0, 20.0)
    a = DensityGrid.from_values(g, normal_pdf(g.nodes))
    zero = oracle.distance(a, a)
    assert (zero.L1, zero.hellinger, zero.KL) == (0.0, 0.0, 0.0)
    b = DensityGrid.from_values(g, normal_pdf(g.nodes, 0.0, 2.0))
    hell = np.sqrt(1 - np.sqrt(2 * np.sqrt(2) / 3))
    assert oracle.distance(a, b).hellinger == pytest.approx(hell, abs=1e-10)
    assert oracle.distance(a, b).hellinger == pytest.approx(0.1703422, abs=1e-6)
    c = DensityGrid.from_values(g, normal_pdf(g.nodes, 1.0, 1.0))
    assert oracle.distance(a, c).KL == pytest.approx(0.5, abs=1e-6)


def test_distance_kl_infinite():
    g = QuadratureGrid.trapezoid(0.0, 2.0, 3)
    a = DensityGrid.from_values(g, np.array([0.5, 0.5, 0.5]))
    b = DensityGrid.from_values(g, np.array([1.0, 0.0, 0.0]))
    assert np.isinf(oracle.distance(a, b).KL)


@given(st.floats(-2, 2), st.floats(0.3, 3), st.floats(-2, 2), st.floats(0.3, 3))
@settings(max_examples=30, deadline=None)
def test_distance_axioms(m1, q1, m2, q2):
    g = QuadratureGrid.gauss_legendre(-30.0, 30.0)
    a = DensityGrid.from_values(g, normal_pdf(g.nodes, m1, q1))
    b = DensityGrid.from_values(g, normal_pdf(g.nodes, m2, q2))
    ab, ba = oracle.distance(a, b), oracle.distance(b, a)
    assert ab.L1 == pytest.approx(ba.L1, abs=1e-14) and ab.hellinger == pytest.approx(ba.hellinger, abs=1e-14)
    assert ab.L1 >= 0 and ab.hellinger >= 0 and ab.KL >= -1e-12
    assert ab.hellinger <= 1.0 and ab.L1 <= 2.0 + 1e-12
