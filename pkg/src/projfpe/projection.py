"""Fisher-metric projection onto T_theta EM(c) and the projected parameter ODE."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import expfam
from .errors import ConditionFViolation, NumericalError, StepFailure, UsageError
from .models import DiffusionModel, alpha_field
from .numerics import integrate, rk4_step, spd_solve

ALPHA_OVERFLOW = 1e200
ALPHA_TAIL_FRACTION = 1e-6


@dataclass(frozen=True)
class Projection:
    coefficients: np.ndarray  # b = g^-1 <v, c - E c>
    projected: np.ndarray     # b . (c - E c) on the grid
    residual: np.ndarray      # v - projected


def inner(p: expfam.DensityGrid, u, v) -> float:
    """<u, v>_theta = E_theta[u v]."""
    return float(integrate(p.grid, np.asarray(u) * np.asarray(v) * p.values))


def project(family, theta, v_values, grid, p=None) -> Projection:
    cc, p = expfam.centered_stats(family, theta, grid, p)
    v = np.asarray(v_values, dtype=float)
    g = expfam.fisher_matrix(family, theta, grid, p)
    b = spd_solve(g, (cc * (p.values * grid.weights)) @ v).solution
    proj = b @ cc
    return Projection(b, proj, v - proj)


def residual_norm(family, theta, v_values, grid, p=None) -> float:
    """Fisher norm of v - Pi v."""
    if p is None:
        p = expfam.density(family, theta, grid)
    r = project(family, theta, v_values, grid, p).residual
    return float(np.sqrt(max(inner(p, r, r), 0.0)))


def generator_on_stats(model: DiffusionModel, family, t, x) -> np.ndarray:
    """L_t c_i = f c_i' + a c_i'' / 2, shape (m, n)."""
    return (model.drift.value(t, x) * family.dc(x)
            + 0.5 * model.diffusion.value(t, x) * family.d2c(x))


def check_condition_f(alpha, p: expfam.DensityGrid) -> float:
    """E_theta[alpha^2] with overflow and tail-domination guards."""
    dens = alpha**2 * p.values * p.grid.weights
    total = float(np.sum(dens))
    if not np.isfinite(total) or total > ALPHA_OVERFLOW:
        raise ConditionFViolation(f"E[alpha^2] is not finite under quadrature ({total})")
    k = max(p.grid.nodes_per_panel, 1)
    tails = float(np.sum(dens[:k]) + np.sum(dens[-k:]))
    if total > 1e-280 and tails > ALPHA_TAIL_FRACTION * total:
        raise ConditionFViolation(
            f"outer panels carry {tails / total:.2e} of E[alpha^2]; tails dominate")
    return total


@dataclass(frozen=True)
class FieldEvaluation:
    theta_dot: np.ndarray
    condition: float
    alpha_sq_mean: float


def projected_field(model, family, theta, t, grid, check_f=True) -> FieldEvaluation:
    """theta' = g^-1(theta) E_theta[L_t c]."""
    theta = family.check_domain(theta)
    p = expfam.density(family, theta, grid)
    g = expfam.fisher_matrix(family, theta, grid, p)
    rhs = p.expect(generator_on_stats(model, family, t, grid.nodes))
    sol = spd_solve(g, rhs)
    a2 = np.nan
    if check_f:
        a2 = check_condition_f(alpha_field(model, t, theta, family, grid.nodes), p)
    return FieldEvaluation(sol.solution, sol.condition, a2)


def projected_field_via_alpha(model, family, theta, t, grid) -> np.ndarray:
    """Coefficients of Pi_theta[alpha_{t,theta}]; should equal projected_field."""
    p = expfam.density(family, theta, grid)
    alpha = alpha_field(model, t, theta, family, grid.nodes)
    return project(family, theta, alpha, grid, p).coefficients


# ---------------------------------------------------------------- trajectory

@dataclass
class ThetaTrajectory:
    family: expfam.ExponentialFamily
    h: float
    times: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    conditions: list = field(default_factory=list)
    means: list = field(default_factory=list)
    variances: list = field(default_factory=list)
    grids: list = field(default_factory=list)

    def append(self, t, theta, residual, condition, mean, var, grid):
        self.times.append(float(t))
        self.thetas.append(np.array(theta, dtype=float))
        self.residuals.append(float(residual))
        self.conditions.append(float(condition))
        self.means.append(float(mean))
        self.variances.append(float(var))
        self.grids.append(grid)

    @property
    def theta_array(self):
        return np.array(self.thetas)

    @property
    def final_theta(self):
        return self.thetas[-1]

    @property
    def final_grid(self):
        return self.grids[-1]

    def integrated_residual(self) -> float:
        r = np.asarray(self.residuals)
        if r.size < 2:
            return 0.0
        return float(np.sum(0.5 * (r[1:] + r[:-1]) * np.diff(self.times)))

    def theta_at(self, t) -> np.ndarray:
        """Linear interpolation of theta between recorded steps."""
        times = np.asarray(self.times)
        th = self.theta_array
        return np.array([np.interp(t, times, th[:, i]) for i in range(th.shape[1])])

    def header(self):
        return (["t"] + [f"theta_{i + 1}" for i in range(self.family.dim)]
                + ["residual", "mean", "variance"])

    def rows(self):
        for k, t in enumerate(self.times):
            yield ([t] + list(self.thetas[k])
                   + [self.residuals[k], self.means[k], self.variances[k]])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def _record(traj, model, family, t, theta, grid):
    p = expfam.density(family, theta, grid)
    alpha = alpha_field(model, t, theta, family, grid.nodes)
    check_condition_f(alpha, p)
    res = residual_norm(family, theta, alpha, grid, p)
    cond = np.linalg.cond(expfam.fisher_matrix(family, theta, grid, p))
    m = float(p.expect(grid.nodes))
    v = float(p.expect((grid.nodes - m) ** 2))
    traj.append(t, theta, res, cond, m, v, grid)


def integrate_theta(model, family, theta0, T, h, policy: expfam.GridPolicy | None = None,
                    t0=0.0) -> ThetaTrajectory:
    """RK4 integration of the projected parameter ODE on [t0, t0 + T].

    The grid is held fixed within each step and refreshed by ``policy``
    between steps. Any failure raises StepFailure carrying the partial
    trajectory and the time of the last completed step.
    """
    if not (T > 0 and h > 0):
        raise UsageError("T and h must be positive")
    n = int(round(T / h))
    if n < 1 or abs(n * h - T) > 1e-9 * T:
        raise UsageError(f"T={T} is not a multiple of h={h}")
    theta = family.check_domain(theta0)
    policy = policy or expfam.GridPolicy(family)
    traj = ThetaTrajectory(family, h)
    grid = policy.update(theta)
    _record(traj, model, family, t0, theta, grid)

    def field_fn(grid):
        return lambda t, y: projected_field(model, family, y, t, grid, check_f=False).theta_dot

    t = t0
    for k in range(n):
        try:
            theta = family.check_domain(rk4_step(field_fn(grid), t, theta, h))
            t = t0 + (k + 1) * h
            grid = policy.update(theta)
            _record(traj, model, family, t, theta, grid)
        except NumericalError as exc:
            raise StepFailure(f"step {k + 1} from t={t:.6g} failed: {exc}", t, traj, exc) from exc
    return traj
