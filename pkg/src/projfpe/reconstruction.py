"""Diffusion Y with the original sigma whose density follows the projected one.

The drift is

    u*(x) = a'(x)/2 + a(x) (log p)'(x) / 2
            - E[L c]^T g^-1 (1 / p(x)) int_{-inf}^x (c(y) - E c) p(y) dy,

with p = p(., theta_t). The lower limit is truncated at the grid's x_min.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import expfam
from .errors import SimulationError, TailError, UsageError
from .numerics import (cumulative_integral, differentiate, interpolate, spd_solve,
                       tail_integral)
from .projection import ThetaTrajectory, generator_on_stats, project

TAIL_TOL = 1e-12
N_BINS = 200
DRIFT_TABLE = 8193  # uniform drift table fed by the spectral interpolant


def _normalized_prefix(grid, p: expfam.DensityGrid, integrand_over_p):
    """(1 / p(x)) int_{x_min}^x h(y) p(y) dy for integrands with int h p = 0.

    Left of the median the prefix integral is used, right of it minus the
    suffix integral; the 1/p factor is applied in log space.
    """
    h = np.atleast_2d(integrand_over_p) * p.values
    left = cumulative_integral(grid, h) if h.ndim == 1 else np.array([cumulative_integral(grid, r) for r in h])
    right = np.array([tail_integral(grid, r) for r in h])
    cdf = cumulative_integral(grid, p.values)
    acc = np.where(cdf[None, :] <= 0.5, left, -right)
    with np.errstate(divide="ignore"):
        mag = np.exp(np.log(np.abs(acc)) - p.log_values)
    return np.sign(acc) * mag


def _check_lower_tail(h):
    scale = np.max(np.abs(h), axis=-1)
    edge = np.abs(h[..., 0])
    if np.any(edge > TAIL_TOL * np.where(scale > 0, scale, np.inf)):
        raise TailError("drift integrand is not negligible at x_min")


@dataclass(frozen=True)
class DriftPieces:
    u: np.ndarray
    b: np.ndarray           # g^-1 E[L c]
    density: expfam.DensityGrid


def ustar_pieces(model, family, theta, t, grid) -> DriftPieces:
    theta = family.check_domain(theta)
    x = grid.nodes
    p = expfam.density(family, theta, grid)
    cc, _ = expfam.centered_stats(family, theta, grid, p)
    _check_lower_tail(cc * p.values)
    g = expfam.fisher_matrix(family, theta, grid, p)
    b = spd_solve(g, p.expect(generator_on_stats(model, family, t, x))).solution
    integral = _normalized_prefix(grid, p, cc)
    a = model.diffusion.value(t, x)
    u = (0.5 * model.diffusion.dx(t, x) + 0.5 * a * family.dlogp(theta, x) - b @ integral)
    return DriftPieces(u, b, p)


def ustar(model, family, theta, t, grid) -> np.ndarray:
    """Closed-form reconstructed drift u*_t on the grid nodes."""
    return ustar_pieces(model, family, theta, t, grid).u


def _log_derivs(family, theta, x):
    return family.dlogp(theta, x), family.d2logp(theta, x)


def second_derivative_term(model, family, theta, t, x):
    """(a p)'' / p."""
    l1, l2 = _log_derivs(family, theta, x)
    a, ax, axx = (model.diffusion.value(t, x), model.diffusion.dx(t, x),
                  model.diffusion.dxx(t, x))
    return axx + 2 * ax * l1 + a * (l2 + l1**2)


def first_derivative_term(model, family, theta, t, x):
    """(f p)' / p."""
    l1, _ = _log_derivs(family, theta, x)
    return model.drift.dx(t, x) + model.drift.value(t, x) * l1


def pde_rhs(model, family, theta, t, grid, p=None) -> np.ndarray:
    """B = (a p)''/(2p) - Pi[(a p)''/(2p)] + Pi[(f p)'/p]."""
    x = grid.nodes
    if p is None:
        p = expfam.density(family, theta, grid)
    s2 = 0.5 * second_derivative_term(model, family, theta, t, x)
    s1 = first_derivative_term(model, family, theta, t, x)
    return (s2 - project(family, theta, s2, grid, p).projected
            + project(family, theta, s1, grid, p).projected)


def ustar_prefix_form(model, family, theta, t, grid) -> np.ndarray:
    """u* as (1/p(x)) int_{-inf}^x B(y) p(y) dy, without expanding (a p)''."""
    theta = family.check_domain(theta)
    p = expfam.density(family, theta, grid)
    B = pde_rhs(model, family, theta, t, grid, p)
    _check_lower_tail(B * p.values)
    return _normalized_prefix(grid, p, B)[0]


def drift_pde_residual(model, family, theta, t, grid, u=None, interior_mass=1e-8):
    """|u' + (log p)' u - B| on nodes where the density exceeds ``interior_mass`` of its peak."""
    theta = family.check_domain(theta)
    if u is None:
        u = ustar(model, family, theta, t, grid)
    p = expfam.density(family, theta, grid)
    res = differentiate(grid, u) + family.dlogp(theta, grid.nodes) * u - pde_rhs(model, family, theta, t, grid, p)
    mask = p.values >= interior_mass * p.values.max()
    return np.abs(res[mask]), grid.nodes[mask]


# ------------------------------------------------------------------- random numbers

_GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = 2**64 - 1


def _mix64(z):
    """SplitMix64 output function on uint64 arrays (wrapping arithmetic)."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def path_keys(seed: int, n_paths: int) -> np.ndarray:
    """One 64-bit stream key per path, derived from (seed, path index)."""
    base = np.full(1, (int(seed) * _GOLDEN + 0x632BE59BD9B4E019) & _MASK, dtype=np.uint64)
    idx = np.arange(1, n_paths + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
    return _mix64(_mix64(base) ^ _mix64(idx))


def counter_uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Draw number ``counter`` of each path's SplitMix64 stream, as a uniform in (0, 1).

    The n-th state of a stream is key + n * golden, so any draw is computable
    directly from (key, n) without touching earlier draws.
    """
    z = _mix64(keys + np.uint64(((counter + 1) * _GOLDEN) & _MASK))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def counter_normals(keys: np.ndarray, counter: int) -> np.ndarray:
    """Standard normals by the inverse normal CDF of :func:`counter_uniforms`."""
    return ndtri(counter_uniforms(keys, counter))


def sample_density(p: expfam.DensityGrid, uniforms) -> np.ndarray:
    """Inverse-CDF sampling from a grid density (CDF interpolated linearly between nodes)."""
    grid = p.grid
    cdf = cumulative_integral(grid, p.values)
    xs = np.concatenate(([grid.x_min], grid.nodes, [grid.x_max]))
    cs = np.concatenate(([0.0], cdf, [cdf[-1] + (grid.x_max - grid.nodes[-1]) * p.values[-1]]))
    cs = np.maximum.accumulate(cs) / cs[-1]
    return np.interp(uniforms, cs, xs)


# ---------------------------------------------------------------------- histograms

@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    heights: np.ndarray  # piecewise-constant density, integrates to 1

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def mass(self):
        return float(np.sum(self.heights * self.widths))

    @classmethod
    def from_samples(cls, samples, x_min, x_max, bins=N_BINS):
        edges = np.linspace(x_min, x_max, bins + 1)
        counts, _ = np.histogram(samples, bins=edges)
        total = counts.sum()
        heights = counts / (total * np.diff(edges)) if total else np.zeros(bins)
        return cls(edges, heights)

    @classmethod
    def from_density(cls, p: expfam.DensityGrid, edges=None, bins=N_BINS):
        """Bin averages of a grid density."""
        grid = p.grid
        if edges is None:
            edges = np.linspace(grid.x_min, grid.x_max, bins + 1)
        cdf = cumulative_integral(grid, p.values, at=edges)
        probs = np.clip(np.diff(cdf), 0.0, None)
        return cls(np.asarray(edges), probs / np.diff(edges))


@dataclass(frozen=True)
class EmpiricalDistances:
    L1: float
    hellinger: float


def empirical_distance(hist, density) -> EmpiricalDistances:
    """L1 and Hellinger between a histogram and a density binned on the same edges.

    ``density`` is a DensityGrid (bin-averaged here) or another Histogram.
    Two DensityGrids on a shared grid are compared directly, without binning.
    """
    if isinstance(hist, expfam.DensityGrid):
        if not isinstance(density, expfam.DensityGrid):
            raise UsageError("a grid density can only be compared with another grid density")
        if not np.array_equal(hist.grid.nodes, density.grid.nodes):
            raise UsageError("densities live on different grids")
        a, b = np.clip(hist.values, 0.0, None), np.clip(density.values, 0.0, None)
        w = hist.grid.weights
        return EmpiricalDistances(float(np.abs(a - b) @ w),
                                  float(np.sqrt(max(0.5 * ((np.sqrt(a) - np.sqrt(b)) ** 2 @ w), 0.0))))
    ref = density if isinstance(density, Histogram) else Histogram.from_density(density, hist.edges)
    if not np.allclose(ref.edges, hist.edges):
        raise UsageError("histograms use different bins")
    w = hist.widths
    l1 = float(np.sum(np.abs(hist.heights - ref.heights) * w))
    hell = float(np.sqrt(max(0.5 * np.sum((np.sqrt(hist.heights) - np.sqrt(ref.heights)) ** 2 * w), 0.0)))
    return EmpiricalDistances(l1, hell)


# ---------------------------------------------------------------------- simulation

@dataclass
class PathEnsemble:
    terminal: np.ndarray      # terminal values of the surviving paths
    initial: np.ndarray
    times: np.ndarray         # Euler times, uniform step delta
    means: np.ndarray         # ensemble mean at each time
    variances: np.ndarray
    delta: float
    seed: int
    n_paths: int
    excluded: int
    histogram: Histogram

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "density"])
            for lo, hi, d in zip(self.histogram.edges[:-1], self.histogram.edges[1:],
                                 self.histogram.heights):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])


def _grid_at(traj: ThetaTrajectory, t):
    k = int(np.clip(np.searchsorted(traj.times, t + 1e-12, side="right") - 1, 0, len(traj.times) - 1))
    return traj.grids[k]


def simulate(model, family, traj: ThetaTrajectory, n_paths, delta, seed,
             max_excluded_fraction=1e-3, hist_range=None) -> PathEnsemble:
    """Euler-Maruyama for dY = u*_t(Y) dt + sigma_t(Y) dW along a theta trajectory.

    u* is recomputed on the trajectory grid at every Euler time (theta
    interpolated linearly between ODE steps), sampled on a uniform table
    through the grid interpolant, and interpolated linearly in x; outside
    the grid the drift is held at its boundary value.
    Paths leaving 10 max(|x_min|, |x_max|) are excluded and counted.
    """
    if n_paths < 1:
        raise UsageError("need at least one path")
    if not (0 < delta <= traj.h + 1e-15):
        raise UsageError(f"Euler step {delta} must be positive and at most the ODE step {traj.h}")
    t0, T = traj.times[0], traj.times[-1]
    n_steps = int(round((T - t0) / delta))
    if abs(n_steps * delta - (T - t0)) > 1e-9 * max(1.0, T):
        raise UsageError("trajectory length is not a multiple of delta")
    keys = path_keys(seed, n_paths)
    p0 = expfam.density(family, traj.thetas[0], traj.grids[0])
    y = sample_density(p0, counter_uniforms(keys, 0))
    y0 = y.copy()
    alive = np.ones(n_paths, dtype=bool)
    times = t0 + delta * np.arange(n_steps + 1)
    means, variances = [float(np.mean(y))], [float(np.var(y))]
    sq = np.sqrt(delta)
    for k in range(n_steps):
        t = times[k]
        grid = _grid_at(traj, t)
        u = ustar(model, family, traj.theta_at(t), t, grid)
        table_x = np.linspace(grid.x_min, grid.x_max, DRIFT_TABLE)
        table_u = interpolate(grid, u, table_x)
        s = np.clip((y - grid.x_min) * ((DRIFT_TABLE - 1) / (grid.x_max - grid.x_min)),
                    0.0, DRIFT_TABLE - 1.0)
        j = np.minimum(s.astype(np.intp), DRIFT_TABLE - 2)
        drift = table_u[j] + (s - j) * (table_u[j + 1] - table_u[j])
        sigma = np.sqrt(model.diffusion.value(t, y))
        y = y + drift * delta + sigma * sq * counter_normals(keys, k + 1)
        bound = 10.0 * max(abs(grid.x_min), abs(grid.x_max))
        blown = alive & ~(np.abs(y) <= bound)
        if blown.any():
            alive &= ~blown
            y = np.where(alive, y, 0.0)
        live = y[alive]
        means.append(float(np.mean(live)) if live.size else np.nan)
        variances.append(float(np.var(live)) if live.size else np.nan)
    excluded = int(n_paths - alive.sum())
    if excluded > max_excluded_fraction * n_paths:
        raise SimulationError(f"{excluded} of {n_paths} paths exploded")
    final_grid = traj.final_grid
    lo, hi = hist_range if hist_range is not None else (final_grid.x_min, final_grid.x_max)
    hist = Histogram.from_samples(y[alive], lo, hi)
    return PathEnsemble(y[alive], y0, times, np.array(means), np.array(variances), delta,
                        int(seed), n_paths, excluded, hist)


def ustar_table(model, family, traj: ThetaTrajectory, every=1):
    """Rows (t, x, u*) for every ``every``-th trajectory step."""
    for k in range(0, len(traj.times), every):
        t, grid = traj.times[k], traj.grids[k]
        u = ustar(model, family, traj.thetas[k], t, grid)
        for xi, ui in zip(grid.nodes, u):
            yield t, float(xi), float(ui)
