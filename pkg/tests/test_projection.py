import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projfpe import expfam, models, oracle, projection
from projfpe.errors import StepFailure

from test_models import BROWNIAN


def _fisher_norm(p, v):
    return np.sqrt(projection.inner(p, v, v))


def test_project_tangent_vector(gauss2, std_normal):
    theta, grid, p = std_normal
    v = 2 * grid.nodes
    pr = projection.project(gauss2, theta, v, grid, p)
    assert np.allclose(pr.coefficients, [2, 0], atol=1e-12)
    assert np.allclose(pr.projected, v, atol=1e-11)


def test_project_cubic(gauss2, std_normal):
    theta, grid, p = std_normal
    x = grid.nodes
    pr = projection.project(gauss2, theta, x**3, grid, p)
    assert np.allclose(pr.coefficients, [3, 0], atol=1e-10)
    assert np.max(np.abs(pr.projected - 3 * x)) < 1e-8


def test_project_hermite(gauss2, std_normal):
    theta, grid, p = std_normal
    h3 = grid.nodes**3 - 3 * grid.nodes
    assert np.allclose(projection.project(gauss2, theta, h3, grid, p).coefficients, 0, atol=1e-10)
    assert projection.residual_norm(gauss2, theta, h3, grid, p) == pytest.approx(np.sqrt(6), abs=1e-9)
    assert projection.residual_norm(gauss2, theta, 4 * grid.nodes - (grid.nodes**2 - 1), grid, p) < 1e-9


@given(st.floats(-1.5, 1.5), st.floats(0.3, 2.5), st.lists(st.floats(-2, 2), min_size=7, max_size=7))
@settings(max_examples=40, deadline=None)
def test_projection_properties(m, q, coef):
    fam = expfam.polynomial_family(2)
    theta = expfam.gaussian_theta(m, q)
    grid = expfam.fit_grid(fam, theta)
    p = expfam.density(fam, theta, grid)
    v = np.polynomial.polynomial.polyval(grid.nodes, coef)
    v = v - p.expect(v)
    pr = projection.project(fam, theta, v, grid, p)
    again = projection.project(fam, theta, pr.projected, grid, p)
    scale = _fisher_norm(p, v) + 1.0
    assert _fisher_norm(p, again.projected - pr.projected) <= 1e-9 * scale
    cc, _ = expfam.centered_stats(fam, theta, grid, p)
    for ci in cc:
        assert abs(projection.inner(p, v - pr.projected, ci)) <= 1e-9 * scale * np.sqrt(projection.inner(p, ci, ci))
    total = projection.inner(p, v, v)
    parts = projection.inner(p, pr.projected, pr.projected) + projection.inner(p, pr.residual, pr.residual)
    assert parts == pytest.approx(total, rel=1e-8, abs=1e-12)


def test_nested_residuals_double_well():
    model = models.double_well(0.5)
    res = []
    for m in (2, 4, 6):
        fam = expfam.polynomial_family(m)
        theta, grid = expfam.moment_match(fam, expfam.gaussian_moments(0, 1, m), None,
                                          expfam.gaussian_theta(0, 1, fam))
        alpha = models.alpha_field(model, 0.0, theta, fam, grid.nodes)
        res.append(projection.residual_norm(fam, theta, alpha, grid))
    assert all(b <= a + 1e-10 for a, b in zip(res, res[1:]))
    assert res[0] > 1.0


def test_field_stationary(gauss2, std_normal):
    theta, grid, _ = std_normal
    ev = projection.projected_field(models.linear(-1, 2), gauss2, theta, 0.0, grid)
    assert np.max(np.abs(ev.theta_dot)) <= 1e-9


def test_field_brownian(gauss2, std_normal):
    theta, grid, _ = std_normal
    ev = projection.projected_field(BROWNIAN, gauss2, theta, 0.0, grid)
    assert np.allclose(ev.theta_dot, [0, 0.5], atol=1e-10)


@pytest.mark.parametrize("k,t", [(1.0, 0.0), (1.0, 0.6), (2.5, 0.3)])
def test_field_unit_variance(k, t):
    fam = expfam.mean_shift_gaussian()
    model = models.unit_variance(k, models.sine_diffusion(2.0, 1.0))
    theta = np.array([k * t])
    grid = expfam.fit_grid(fam, theta)
    assert projection.projected_field(model, fam, theta, t, grid).theta_dot[0] == pytest.approx(k, abs=1e-9)


@pytest.mark.parametrize("model,m", [(models.double_well(0.5), 4), (models.linear(-0.5, 1.0), 2),
                                     (models.unit_variance(1.0, models.sine_diffusion()), 2)])
def test_field_equals_projected_alpha(model, m):
    fam = expfam.polynomial_family(m)
    theta = expfam.gaussian_theta(0.3, 0.8, fam)
    grid = expfam.fit_grid(fam, theta)
    direct = projection.projected_field(model, fam, theta, 0.2, grid).theta_dot
    via = projection.projected_field_via_alpha(model, fam, theta, 0.2, grid)
    assert np.allclose(direct, via, atol=1e-9 * (1 + np.max(np.abs(direct))))


def test_linear_alpha_in_span(gauss2):
    theta = expfam.gaussian_theta(0.5, 0.3)
    grid = expfam.fit_grid(gauss2, theta)
    alpha = models.alpha_field(models.linear(-1, 2), 0.0, theta, gauss2, grid.nodes)
    assert projection.residual_norm(gauss2, theta, alpha, grid) < 1e-8


def test_integrate_stationary(gauss2, std_normal):
    theta, _, _ = std_normal
    tr = projection.integrate_theta(models.linear(-1, 2), gauss2, theta, 0.2, 1e-2)
    assert np.max(np.abs(tr.theta_array - theta)) <= 1e-9


def test_integrate_linear_matches_exact(gauss2):
    theta0 = expfam.gaussian_theta(0.5, 0.3)
    tr = projection.integrate_theta(models.linear(-1, 2), gauss2, theta0, 0.5, 1e-2)
    times, states = oracle.gaussian_exact(-1, 2, 0.5, 0.3, 0.5, 1e-2)
    assert np.max(np.abs(np.array(tr.means) - [s.m for s in states])) < 1e-7
    assert np.max(np.abs(np.array(tr.variances) - [s.Q for s in states])) < 1e-7


def test_trajectory_csv_roundtrip(gauss2, tmp_path):
    tr = projection.integrate_theta(models.linear(-1, 2), gauss2, expfam.gaussian_theta(0.5, 0.3), 0.05, 1e-2)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert list(data.dtype.names) == ["t", "theta_1", "theta_2", "residual", "mean", "variance"]
    assert np.allclose(data["theta_2"], tr.theta_array[:, 1], rtol=1e-15)
    assert tr.theta_at(0.025) == pytest.approx(0.5 * (tr.thetas[2] + tr.thetas[3]))


def test_step_failure_keeps_partial():
    fam = expfam.polynomial_family(2)
    # drift pushes the variance negative under explosive growth: dQ/dt = 2 F Q + A with A < 0
    bad = models.DiffusionModel(models.linear(0.0, 1.0).drift,
                                models.TimeSpaceField(lambda t, x: 1.0 - 5.0 * t + 0 * x,
                                                      lambda t, x: 0 * x, lambda t, x: 0 * x))
    with pytest.raises(StepFailure) as info:
        projection.integrate_theta(bad, fam, expfam.gaussian_theta(0.0, 0.1), 2.0, 0.01)
    assert info.value.partial is not None and len(info.value.partial.times) > 1
    assert 0 < info.value.time < 2.0
