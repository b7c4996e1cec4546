"""Exponential-manifold computations realized on a quadrature grid.

A density is a :class:`~projfpe.expfam.DensityGrid`; random variables are
arrays of values at the grid nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, TailError, UsageError
from .expfam import TAIL_TOL, DensityGrid
from .numerics import integrate


@dataclass(frozen=True, eq=False)
class CenteredVariable:
    values: np.ndarray
    base: DensityGrid

    @classmethod
    def center(cls, base: DensityGrid, values):
        values = np.asarray(values, dtype=float)
        return cls(values - float(base.expect(values)), base)

    def mean(self) -> float:
        return float(self.base.expect(self.values))


def _values(u):
    return u.values if isinstance(u, CenteredVariable) else np.asarray(u, dtype=float)


def chart(p: DensityGrid, q: DensityGrid) -> CenteredVariable:
    """s_p(q) = log(q/p) - E_p[log(q/p)]."""
    if p.grid is not q.grid and not np.array_equal(p.grid.nodes, q.grid.nodes):
        raise UsageError("densities live on different grids")
    if np.any(p.values <= 0) or np.any(q.values <= 0):
        raise DomainError("chart needs strictly positive densities")
    return CenteredVariable.center(p, q.log_values - p.log_values)


def _log_mgf(p: DensityGrid, u):
    """log E_p[e^u] with a max shift; also returns the shifted summands."""
    logs = p.log_values + u
    top = float(np.max(logs))
    terms = np.exp(logs - top) * p.grid.weights
    total = float(np.sum(terms))
    return top + np.log(total), logs - top - np.log(total)


def cumulant(p: DensityGrid, u) -> float:
    """K_p(u) = log E_p[e^u]."""
    u = _values(u)
    k, log_rel = _log_mgf(p, u)
    if max(log_rel[0], log_rel[-1]) > np.log(TAIL_TOL):
        raise TailError("e^u p is not negligible at the grid boundary")
    return float(k)


def patch(p: DensityGrid, u) -> DensityGrid:
    """e_p(u) = exp(u - K_p(u)) p."""
    u = _values(u)
    return DensityGrid.from_log(p.grid, p.log_values + u - cumulant(p, u))


def transition(p1: DensityGrid, p2: DensityGrid, u) -> CenteredVariable:
    """s_{p2}(e_{p1}(u)) computed by composing chart and patch."""
    return chart(p2, patch(p1, u))


def transition_closed_form(p1: DensityGrid, p2: DensityGrid, u) -> CenteredVariable:
    """u + log(p1/p2) recentered under p2."""
    return CenteredVariable.center(p2, _values(u) + p1.log_values - p2.log_values)


def cumulant_differentials(p: DensityGrid, u, v):
    """Analytic (DK_p(u) v, D^2 K_p(u)(v, v)) = (E_q v, Var_q v) with q = e_p(u)."""
    q = patch(p, u)
    v = _values(v)
    m = float(q.expect(v))
    return m, float(q.expect((v - m) ** 2))


def cumulant_differentials_fd(p: DensityGrid, u, v, eps=1e-4):
    u, v = _values(u), _values(v)
    kp, k0, km = cumulant(p, u + eps * v), cumulant(p, u), cumulant(p, u - eps * v)
    return (kp - km) / (2 * eps), (kp - 2 * k0 + km) / eps**2


def _cosh_excess(p: DensityGrid, u, r):
    """E_p[cosh(u/r) - 1], +inf on overflow."""
    z = np.abs(u) / r
    with np.errstate(over="ignore"):
        vals = np.where(z < 1e-3, 0.5 * z * z * (1 + z * z / 12), np.cosh(z) - 1.0)
    out = float(np.sum(vals * p.values * p.grid.weights))
    return out if np.isfinite(out) else np.inf


def orlicz_norm(p: DensityGrid, u, rel_width=1e-8, bounds=(1e-8, 1e8)) -> float:
    """inf{r > 0 : E_p[cosh(u/r) - 1] <= 1}, found by bisection in log r."""
    u = _values(u)
    umax = float(np.max(np.abs(u)))
    if umax == 0.0:
        return 0.0
    lo, hi = umax / 50.0, umax * 50.0
    while _cosh_excess(p, u, lo) <= 1.0:
        lo /= 2.0
        if lo < bounds[0]:
            return float(bounds[0])
    while _cosh_excess(p, u, hi) > 1.0:
        hi *= 2.0
        if hi > bounds[1]:
            return np.inf
    while hi / lo - 1.0 > rel_width:
        mid = np.sqrt(lo * hi)
        if _cosh_excess(p, u, mid) <= 1.0:
            hi = mid
        else:
            lo = mid
    return float(np.sqrt(lo * hi))


def sqrt_map(p0: DensityGrid, u) -> np.ndarray:
    """H_{p0}(u) = sqrt(e_{p0}(u)) on the grid."""
    return np.exp(0.5 * patch(p0, u).log_values)


@dataclass(frozen=True)
class SqrtMapCheck:
    fd_rel_error: float        # relative L2 gap, finite difference vs analytic derivative
    derivative_sq_norm: float  # ||DH(u) v||_2^2
    quarter_hessian: float     # D^2 K_{p0}(u)(v, v) / 4
    norm_rel_error: float


def sqrt_map_derivative_check(p0: DensityGrid, u, v, eps=1e-4) -> SqrtMapCheck:
    """Compare the tangent map DH(u) v = H(u) (v - E_q v) / 2 with central differences."""
    u, v = _values(u), _values(v)
    grid = p0.grid
    fd = (sqrt_map(p0, u + eps * v) - sqrt_map(p0, u - eps * v)) / (2 * eps)
    q = patch(p0, u)
    analytic = 0.5 * np.exp(0.5 * q.log_values) * (v - float(q.expect(v)))
    an_sq = float(integrate(grid, analytic**2))
    gap = float(np.sqrt(integrate(grid, (fd - analytic) ** 2)))
    _, hess = cumulant_differentials(p0, u, v)
    quarter = 0.25 * hess
    if an_sq == 0.0:
        return SqrtMapCheck(gap, 0.0, quarter, abs(quarter))
    return SqrtMapCheck(gap / np.sqrt(an_sq), an_sq, quarter, abs(an_sq - quarter) / quarter)
