"""Reference solutions: exact Gaussian moments, a Crank-Nicolson FPE solver, distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import NumericalError, UsageError
from .expfam import DensityGrid
from .models import DiffusionModel, _as_time_function
from .numerics import TRAPEZOID, QuadratureGrid, integrate, rk4_integrate


@dataclass(frozen=True)
class GaussianState:
    m: float
    Q: float

    def __post_init__(self):
        if not self.Q > 0:
            raise NumericalError(f"variance {self.Q} is not positive")

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x - self.m) ** 2 / self.Q) / np.sqrt(2 * np.pi * self.Q)

    def density(self, grid: QuadratureGrid) -> DensityGrid:
        x = grid.nodes
        return DensityGrid.from_log(grid, -0.5 * (x - self.m) ** 2 / self.Q
                                    - 0.5 * np.log(2 * np.pi * self.Q))


def gaussian_exact(F, A, m0, Q0, T, h):
    """Mean and variance of a linear diffusion: m' = F m, Q' = 2 F Q + A.

    ``F`` and ``A`` are constants or functions of t. Returns (times, states).
    """
    if not Q0 > 0:
        raise UsageError("Q0 must be positive")
    if T == 0:
        return np.array([0.0]), [GaussianState(float(m0), float(Q0))]
    F_t, A_t = _as_time_function(F), _as_time_function(A)

    def field(t, y):
        return np.array([F_t(t) * y[0], 2 * F_t(t) * y[1] + A_t(t)])

    times, ys = rk4_integrate(field, 0.0, np.array([m0, Q0], dtype=float), T, h)
    return times, [GaussianState(float(m), float(Q)) for m, Q in ys]


@dataclass(frozen=True)
class FDResult:
    density: DensityGrid
    clip_events: int
    mass_drift: float
    steps: int


def _operator_bands(model, t, x, w):
    """Tridiagonal finite-volume generator M with W dp/dt = M p (zero-flux ends).

    Interface flux J = f_{i+1/2} (p_i + p_{i+1}) / 2 - (a_{i+1} p_{i+1} - a_i p_i) / (2 dx).
    """
    dx = x[1] - x[0]
    xm = 0.5 * (x[1:] + x[:-1])
    fm = model.drift.value(t, xm)
    a = model.diffusion.value(t, x)
    # J_k = cl_k p_k + cr_k p_{k+1}, k = 0..n-2
    cl = 0.5 * fm + a[:-1] / (2 * dx)
    cr = 0.5 * fm - a[1:] / (2 * dx)
    n = x.size
    diag = np.zeros(n)
    upper = np.zeros(n)  # coefficient of p_{i+1} in row i
    lower = np.zeros(n)  # coefficient of p_{i-1} in row i
    # row i gets -J_i (outflow right) + J_{i-1} (inflow left)
    diag[:-1] -= cl
    upper[:-1] -= cr
    diag[1:] += cr
    lower[1:] += cl
    return lower, diag, upper


def fd_fpe_solve(model: DiffusionModel, p0, T, dt, grid: QuadratureGrid, t0=0.0,
                 max_ratio=1e4) -> FDResult:
    """Crank-Nicolson for dp/dt = -(f p)' + (a p)''/2 with reflecting boundaries.

    Mass sum(w p) is conserved by construction. Negative values below -1e-12
    are clipped to zero and the density renormalized; each such step counts
    as a clip event.
    """
    if grid.scheme != TRAPEZOID:
        raise UsageError("the finite-difference solver needs a uniform trapezoid grid")
    p = np.array(p0.values if isinstance(p0, DensityGrid) else p0, dtype=float)
    x, w = grid.nodes, grid.weights
    n_steps = int(round(T / dt)) if T > 0 else 0
    if T < 0 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise UsageError(f"T={T} is not a nonnegative multiple of dt={dt}")
    dx = x[1] - x[0]
    amax = float(np.max(model.diffusion.value(t0, x)))
    if dt * amax / dx**2 > max_ratio:
        raise UsageError(f"dt={dt} too large for spacing {dx:.3g} (ratio limit {max_ratio:g})")
    mass0 = float(p @ w)
    if abs(mass0 - 1.0) > 1e-6:
        raise UsageError(f"initial density has mass {mass0}")
    clips = 0
    t = t0
    for _ in range(n_steps):
        lo0, d0, up0 = _operator_bands(model, t, x, w)
        lo1, d1, up1 = _operator_bands(model, t + dt, x, w)
        rhs = w * p + 0.5 * dt * (d0 * p)
        rhs[1:] += 0.5 * dt * lo0[1:] * p[:-1]
        rhs[:-1] += 0.5 * dt * up0[:-1] * p[1:]
        ab = np.zeros((3, x.size))
        ab[0, 1:] = -0.5 * dt * up1[:-1]
        ab[1] = w - 0.5 * dt * d1
        ab[2, :-1] = -0.5 * dt * lo1[1:]
        p = solve_banded((1, 1), ab, rhs)
        t += dt
        if p.min() < -1e-12:
            clips += 1
            p = np.clip(p, 0.0, None)
            p /= p @ w
    drift = abs(float(p @ w) - mass0)
    if drift > 1e-6 or clips > x.size:
        raise NumericalError(f"FD solver failed: mass drift {drift:.2e}, {clips} clip events")
    return FDResult(DensityGrid.from_values(grid, p), clips, drift, n_steps)


@dataclass(frozen=True)
class Distances:
    L1: float
    hellinger: float
    KL: float

    def as_dict(self):
        return {"L1": self.L1, "hellinger": self.hellinger, "KL": self.KL}


def distance(pa: DensityGrid, pb: DensityGrid) -> Distances:
    """L1, Hellinger sqrt(int (sqrt pa - sqrt pb)^2 / 2) and KL(pa || pb) on a shared grid."""
    if pa.grid.size != pb.grid.size or not np.allclose(pa.grid.nodes, pb.grid.nodes):
        raise UsageError("densities live on different grids")
    grid = pa.grid
    a = np.clip(pa.values, 0.0, None)
    b = np.clip(pb.values, 0.0, None)
    l1 = float(integrate(grid, np.abs(a - b)))
    hell = float(np.sqrt(max(0.5 * integrate(grid, (np.sqrt(a) - np.sqrt(b)) ** 2), 0.0)))
    if np.any((b <= 0) & (a > 0)):
        kl = np.inf
    else:
        mask = a > 0
        kl = float(np.sum(grid.weights[mask] * a[mask] * np.log(a[mask] / b[mask])))
    return Distances(l1, hell, kl)
