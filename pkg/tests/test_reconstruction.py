import numpy as np
import pytest

from projfpe import expfam, models, projection, reconstruction
from projfpe.errors import SimulationError, TailError, UsageError
from projfpe.numerics import QuadratureGrid

from conftest import normal_pdf
from test_models import BROWNIAN

UNIT = models.unit_variance(1.0, models.sine_diffusion(2.0, 1.0))


def _linear_setup(m=0.5, q=0.3):
    fam = expfam.polynomial_family(2)
    theta = expfam.gaussian_theta(m, q)
    return fam, theta, expfam.fit_grid(fam, theta)


def _window(grid, lo=-4.0, hi=4.0):
    return (grid.nodes >= lo) & (grid.nodes <= hi)


@pytest.mark.parametrize("F,A,m,q", [(-1.0, 2.0, 0.5, 0.3), (-0.5, 1.0, 0.0, 1.0), (0.3, 0.5, -0.2, 2.0)])
def test_ustar_linear(F, A, m, q):
    fam, theta, grid = _linear_setup(m, q)
    u = reconstruction.ustar(models.linear(F, A), fam, theta, 0.0, grid)
    w = _window(grid)
    assert np.max(np.abs(u[w] - F * grid.nodes[w])) <= 1e-6


@pytest.mark.parametrize("t", [0.0, 0.4, 1.0])
def test_ustar_unit_variance(t):
    fam = expfam.mean_shift_gaussian()
    theta = np.array([t])
    grid = expfam.fit_grid(fam, theta)
    u = reconstruction.ustar(UNIT, fam, theta, t, grid)
    w = _window(grid, t - 4, t + 4)
    assert np.max(np.abs(u[w] - UNIT.drift.value(t, grid.nodes[w]))) <= 1e-6


CASES = [
    (models.linear(-1.0, 2.0), expfam.polynomial_family(2), expfam.gaussian_theta(0.5, 0.3)),
    (UNIT, expfam.mean_shift_gaussian(), np.array([0.3])),
    (models.double_well(0.5), expfam.polynomial_family(2), expfam.gaussian_theta(0.0, 1.0)),
    (models.double_well(0.5), expfam.polynomial_family(4), np.array([0.0, 4.0, 0.0, -2.0])),
    (models.double_well(0.5), expfam.polynomial_family(6), np.array([0.1, 1.0, 0.0, -0.5, 0.0, -0.1])),
]


@pytest.mark.parametrize("model,fam,theta", CASES)
def test_drift_pde_residual(model, fam, theta):
    grid = expfam.fit_grid(fam, theta)
    res, _ = reconstruction.drift_pde_residual(model, fam, theta, 0.1, grid)
    assert np.max(res) <= 1e-7


@pytest.mark.parametrize("model,fam,theta", CASES)
def test_prefix_form_agrees(model, fam, theta):
    grid = expfam.fit_grid(fam, theta)
    p = expfam.density(fam, theta, grid)
    mask = p.values >= 1e-8 * p.values.max()
    u = reconstruction.ustar(model, fam, theta, 0.1, grid)
    v = reconstruction.ustar_prefix_form(model, fam, theta, 0.1, grid)
    assert np.max(np.abs(u[mask] - v[mask])) <= 1e-8 * max(1.0, np.max(np.abs(u[mask])))


def test_ustar_tail_guard():
    fam, theta, _ = _linear_setup(0.0, 1.0)
    with pytest.raises(TailError):
        reconstruction.ustar(models.linear(-1, 2), fam, theta, 0.0, QuadratureGrid.gauss_legendre(-3, 3, 8, 16))


def test_rng_deterministic_and_independent():
    k = reconstruction.path_keys(42, 1000)
    assert np.array_equal(reconstruction.counter_uniforms(k, 5), reconstruction.counter_uniforms(k, 5))
    assert not np.array_equal(reconstruction.counter_uniforms(k, 5), reconstruction.counter_uniforms(k, 6))
    assert np.array_equal(reconstruction.path_keys(42, 10), k[:10])
    assert not np.array_equal(reconstruction.path_keys(43, 10), k[:10])
    z = reconstruction.counter_normals(reconstruction.path_keys(1, 200000), 3)
    assert abs(z.mean()) < 4 / np.sqrt(z.size) and abs(z.var() - 1) < 4 * np.sqrt(2 / z.size)


def test_sample_density_moments():
    fam, theta, grid = _linear_setup(0.5, 0.3)
    p = expfam.density(fam, theta, grid)
    y = reconstruction.sample_density(p, reconstruction.counter_uniforms(reconstruction.path_keys(3, 100000), 0))
    assert abs(y.mean() - 0.5) < 4 * np.sqrt(0.3 / y.size)
    assert abs(y.var() - 0.3) < 4 * 0.3 * np.sqrt(2 / y.size)


def _brownian_traj(T, h):
    fam, theta, _ = _linear_setup(0.0, 1.0)
    return fam, projection.integrate_theta(BROWNIAN, fam, theta, T, h)


def test_euler_single_step():
    fam, tr = _brownian_traj(0.01, 0.01)
    ens = reconstruction.simulate(BROWNIAN, fam, tr, 500, 0.01, seed=9)
    xi = reconstruction.counter_normals(reconstruction.path_keys(9, 500), 1)
    assert np.allclose(ens.terminal, ens.initial + 0.1 * xi, atol=1e-10)


def test_brownian_increment_variance():
    fam, tr = _brownian_traj(1.0, 0.01)
    n = 20000
    ens = reconstruction.simulate(BROWNIAN, fam, tr, n, 0.01, seed=5)
    assert abs(np.var(ens.terminal - ens.initial) - 1.0) <= 4 * np.sqrt(2 / n)


def test_linear_stationary_moments():
    fam, theta, _ = _linear_setup(0.0, 1.0)
    model = models.linear(-1, 2)
    tr = projection.integrate_theta(model, fam, theta, 1.0, 0.01)
    n = 20000
    ens = reconstruction.simulate(model, fam, tr, n, 0.01, seed=2)
    assert abs(ens.means[-1]) <= 4 / np.sqrt(n)
    assert abs(ens.variances[-1] - 1.0) <= 4 * np.sqrt(2 / n)
    assert ens.histogram.mass == pytest.approx(1.0, abs=1e-12)


def test_simulate_deterministic():
    fam, tr = _brownian_traj(0.05, 0.01)
    a = reconstruction.simulate(BROWNIAN, fam, tr, 300, 0.005, seed=17)
    b = reconstruction.simulate(BROWNIAN, fam, tr, 300, 0.005, seed=17)
    assert np.array_equal(a.terminal, b.terminal)


def test_simulate_validation():
    fam, tr = _brownian_traj(0.05, 0.01)
    with pytest.raises(UsageError):
        reconstruction.simulate(BROWNIAN, fam, tr, 10, 0.02, seed=1)
    with pytest.raises(UsageError):
        reconstruction.simulate(BROWNIAN, fam, tr, 0, 0.01, seed=1)


def test_simulate_explosions_fail():
    fam, tr = _brownian_traj(0.02, 0.01)
    wild = models.DiffusionModel(BROWNIAN.drift, models.constant_diffusion(1e8))
    with pytest.raises(SimulationError):
        reconstruction.simulate(wild, fam, tr, 1000, 0.01, seed=1)


def test_empirical_distance_examples():
    g = QuadratureGrid.gauss_legendre(-15, 15)
    a = expfam.DensityGrid.from_values(g, normal_pdf(g.nodes))
    b = expfam.DensityGrid.from_values(g, normal_pdf(g.nodes, 0.0, 2.0))
    ha = reconstruction.Histogram.from_density(a)
    assert reconstruction.empirical_distance(ha, a).L1 < 1e-3
    assert reconstruction.empirical_distance(a, b).hellinger == pytest.approx(0.1703422, abs=1e-6)
    d = reconstruction.empirical_distance(ha, reconstruction.Histogram.from_density(b))
    assert d.hellinger == pytest.approx(0.1703422, abs=1e-3)
    left = reconstruction.Histogram.from_samples(np.full(10, -1.0), -2, 2, bins=4)
    right = reconstruction.Histogram.from_samples(np.full(10, 1.5), -2, 2, bins=4)
    assert reconstruction.empirical_distance(left, right).L1 == pytest.approx(2.0)


def test_ustar_table_rows():
    fam, tr = _brownian_traj(0.02, 0.01)
    rows = list(reconstruction.ustar_table(BROWNIAN, fam, tr, every=2))
    assert len(rows) == 2 * tr.grids[0].size
    assert max(abs(r[2]) for r in rows if abs(r[1]) <= 6) < 1e-6
