"""Quadrature, cumulative integration, SPD solves and RK4 stepping."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.linalg
from numpy.polynomial import legendre

from .errors import SingularFisher, UsageError

GAUSS_LEGENDRE = "gauss-legendre"
TRAPEZOID = "trapezoid"

DEFAULT_NODES_PER_PANEL = 16
DEFAULT_PANELS = 64


@lru_cache(maxsize=None)
def _panel_rule(n):
    """Reference Gauss-Legendre rule on [-1, 1] plus its prefix-integration operator.

    Returns (nodes, weights, inv_vander, antideriv) where antideriv maps
    Legendre coefficients of the panel interpolant to coefficients of its
    antiderivative vanishing at -1.
    """
    xi, w = legendre.leggauss(n)
    inv_vander = np.linalg.inv(legendre.legvander(xi, n - 1))
    antideriv = legendre.legint(np.eye(n), lbnd=-1.0, axis=0)  # (n+1, n)
    return xi, w, inv_vander, antideriv


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Truncated spatial grid with positive quadrature weights.

    For the Gauss-Legendre scheme the interval is split into ``panels``
    equal panels carrying ``nodes_per_panel`` nodes each. For the trapezoid
    scheme the nodes are uniform and include both endpoints.
    """

    x_min: float
    x_max: float
    nodes: np.ndarray
    weights: np.ndarray
    scheme: str
    panels: int = 1
    nodes_per_panel: int = 0
    _breaks: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def gauss_legendre(cls, x_min, x_max, panels=DEFAULT_PANELS,
                       nodes_per_panel=DEFAULT_NODES_PER_PANEL):
        if not x_max > x_min:
            raise UsageError(f"empty interval [{x_min}, {x_max}]")
        if panels < 1 or nodes_per_panel < 1:
            raise UsageError("panels and nodes_per_panel must be positive")
        xi, w, _, _ = _panel_rule(nodes_per_panel)
        breaks = np.linspace(x_min, x_max, panels + 1)
        half = 0.5 * np.diff(breaks)
        mid = 0.5 * (breaks[1:] + breaks[:-1])
        nodes = (mid[:, None] + half[:, None] * xi[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel()
        return cls(float(x_min), float(x_max), nodes, weights, GAUSS_LEGENDRE,
                   panels, nodes_per_panel, breaks)

    @classmethod
    def trapezoid(cls, x_min, x_max, n):
        if not x_max > x_min:
            raise UsageError(f"empty interval [{x_min}, {x_max}]")
        if n < 2:
            raise UsageError("trapezoid grid needs at least 2 nodes")
        nodes = np.linspace(x_min, x_max, n)
        dx = (x_max - x_min) / (n - 1)
        weights = np.full(n, dx)
        weights[0] = weights[-1] = 0.5 * dx
        return cls(float(x_min), float(x_max), nodes, weights, TRAPEZOID, n - 1, 0)

    @property
    def size(self):
        return self.nodes.size

    @property
    def spacing(self):
        """Uniform spacing (trapezoid) or panel width (Gauss-Legendre)."""
        return (self.x_max - self.x_min) / self.panels

    def __len__(self):
        return self.nodes.size


def _check_aligned(grid, values):
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != grid.size:
        raise UsageError(
            f"values of length {values.shape[-1]} do not match grid with {grid.size} nodes")
    return values


def integrate(grid: QuadratureGrid, values) -> float | np.ndarray:
    """Quadrature sum over the last axis of ``values``."""
    values = _check_aligned(grid, values)
    return values @ grid.weights


def cumulative_integral(grid: QuadratureGrid, values, at=None) -> np.ndarray:
    """Prefix integrals F(x) = int_{x_min}^{x} v(y) dy.

    Evaluated at the grid nodes by default, or at the points ``at`` (which
    must lie in [x_min, x_max]). For Gauss-Legendre grids the integrand is
    replaced by its per-panel interpolating polynomial, so the prefix
    integral is exact for piecewise polynomials of degree < nodes_per_panel.
    """
    values = _check_aligned(grid, values)
    if grid.scheme == TRAPEZOID:
        dx = grid.nodes[1] - grid.nodes[0]
        prefix = np.concatenate(([0.0], np.cumsum(0.5 * dx * (values[1:] + values[:-1]))))
        if at is None:
            return prefix
        at = _check_points(grid, at)
        k = np.clip(((at - grid.x_min) / dx).astype(int), 0, grid.size - 2)
        s = at - grid.nodes[k]
        slope = (values[k + 1] - values[k]) / dx
        return prefix[k] + s * values[k] + 0.5 * slope * s * s

    n = grid.nodes_per_panel
    xi, _, inv_vander, antideriv = _panel_rule(n)
    op = antideriv @ inv_vander  # panel values -> antiderivative coefficients
    panel_vals = values.reshape(grid.panels, n)
    half = 0.5 * np.diff(grid._breaks)
    coeffs = half[:, None] * (panel_vals @ op.T)  # (panels, n+1)
    panel_totals = legendre.legval(1.0, coeffs.T)
    offsets = np.concatenate(([0.0], np.cumsum(panel_totals)[:-1]))
    if at is None:
        local = legendre.legvander(xi, n) @ coeffs.T  # (n, panels)
        return (offsets[None, :] + local).T.ravel()
    at = _check_points(grid, at)
    p = np.clip(np.searchsorted(grid._breaks, at, side="right") - 1, 0, grid.panels - 1)
    mid = 0.5 * (grid._breaks[p] + grid._breaks[p + 1])
    ref = (at - mid) / half[p]
    local = np.einsum("ij,ij->i", legendre.legvander(ref, n), coeffs[p])
    return offsets[p] + local


def tail_integral(grid: QuadratureGrid, values) -> np.ndarray:
    """Suffix integrals int_{x_k}^{x_max} v(y) dy at the nodes.

    Accumulated from the right so that values far in the right tail keep
    their relative accuracy (no cancellation against the full integral).
    """
    values = _check_aligned(grid, values)
    if grid.scheme == TRAPEZOID:
        dx = grid.nodes[1] - grid.nodes[0]
        seg = 0.5 * dx * (values[1:] + values[:-1])
        return np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))
    n = grid.nodes_per_panel
    xi, _, inv_vander, antideriv = _panel_rule(n)
    half = 0.5 * np.diff(grid._breaks)
    coeffs = half[:, None] * (values.reshape(grid.panels, n) @ (antideriv @ inv_vander).T)
    panel_totals = legendre.legval(1.0, coeffs.T)
    right = np.concatenate((np.cumsum(panel_totals[::-1])[::-1][1:], [0.0]))
    local = (legendre.legvander(xi, n) @ coeffs.T).T  # (panels, n), from panel start
    return (right[:, None] + (panel_totals[:, None] - local)).ravel()


def differentiate(grid: QuadratureGrid, values) -> np.ndarray:
    """Derivative at the nodes: per-panel interpolant (Gauss-Legendre) or
    second-order differences (trapezoid)."""
    values = _check_aligned(grid, values)
    if grid.scheme == TRAPEZOID:
        return np.gradient(values, grid.nodes, edge_order=2)
    n = grid.nodes_per_panel
    xi, _, inv_vander, _ = _panel_rule(n)
    half = 0.5 * np.diff(grid._breaks)
    coeffs = values.reshape(grid.panels, n) @ inv_vander.T  # Legendre coefficients
    dcoeffs = legendre.legder(coeffs.T)  # (n-1, panels)
    return ((legendre.legvander(xi, n - 2) @ dcoeffs) / half[None, :]).T.ravel()


def interpolate(grid: QuadratureGrid, values, at) -> np.ndarray:
    """Evaluate the grid interpolant (per-panel polynomial or piecewise linear) at ``at``."""
    values = _check_aligned(grid, values)
    at = _check_points(grid, at)
    if grid.scheme == TRAPEZOID:
        return np.interp(at, grid.nodes, values)
    n = grid.nodes_per_panel
    _, _, inv_vander, _ = _panel_rule(n)
    coeffs = values.reshape(grid.panels, n) @ inv_vander.T
    p = np.clip(np.searchsorted(grid._breaks, at, side="right") - 1, 0, grid.panels - 1)
    half = 0.5 * np.diff(grid._breaks)
    mid = 0.5 * (grid._breaks[p] + grid._breaks[p + 1])
    ref = (at - mid) / half[p]
    return np.einsum("ij,ij->i", legendre.legvander(ref, n - 1), coeffs[p])


def _check_points(grid, at):
    at = np.atleast_1d(np.asarray(at, dtype=float))
    tol = 1e-12 * (grid.x_max - grid.x_min)
    if np.any(at < grid.x_min - tol) or np.any(at > grid.x_max + tol):
        raise UsageError("evaluation points outside the grid interval")
    return at


@dataclass(frozen=True)
class SpdSolveReport:
    solution: np.ndarray
    min_pivot: float
    condition: float


def spd_solve(matrix, rhs, rel_pivot_tol=1e-10) -> SpdSolveReport:
    """Solve ``matrix @ x = rhs`` by Cholesky factorization.

    Raises SingularFisher when a Cholesky pivot falls below
    ``rel_pivot_tol`` times the largest diagonal entry.
    """
    a = np.asarray(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise UsageError(f"incompatible shapes {a.shape} and {b.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * np.max(np.abs(a), initial=0.0):
        raise UsageError("matrix is not symmetric")
    max_diag = float(np.max(np.diag(a))) if a.size else 0.0
    if not max_diag > 0.0:
        raise SingularFisher("matrix has no positive diagonal entry")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularFisher(f"Cholesky factorization failed: {exc}") from exc
    pivots = np.diag(factor[0]) ** 2
    min_pivot = float(pivots.min())
    if min_pivot < rel_pivot_tol * max_diag:
        raise SingularFisher(
            f"Cholesky pivot {min_pivot:.3e} below {rel_pivot_tol:g} x max diagonal {max_diag:.3e}")
    x = scipy.linalg.cho_solve(factor, b)
    # pivot spread is a cheap lower bound on the 2-norm condition number
    return SpdSolveReport(x, min_pivot, float(pivots.max() / min_pivot))


def rk4_step(field: Callable, t: float, y, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of y' = field(t, y)."""
    if not h > 0:
        raise UsageError("step size must be positive")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(field(t, y), dtype=float)
    k2 = np.asarray(field(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(field(t + 0.5 * h, y + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(field(t + h, y + h * k3), dtype=float)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(field, t0, y0, t_end, h):
    """Fixed-step RK4 from t0 to t_end; returns (times, states)."""
    n = int(round((t_end - t0) / h))
    if n < 0 or abs(t0 + n * h - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise UsageError(f"interval length {t_end - t0} is not a multiple of h={h}")
    times = t0 + h * np.arange(n + 1)
    states = np.empty((n + 1, np.size(y0)))
    states[0] = y0
    for k in range(n):
        states[k + 1] = rk4_step(field, times[k], states[k], h)
    return times, states


def step_halving_error(field, t, y, h):
    """Difference between one RK4 step of size h and two of size h/2."""
    full = rk4_step(field, t, y, h)
    half = rk4_step(field, t + 0.5 * h, rk4_step(field, t, y, 0.5 * h), 0.5 * h)
    return float(np.max(np.abs(full - half)))
