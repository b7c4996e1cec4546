"""Finite-dimensional exponential families p(x, theta) = exp(theta.c(x) + c0(x) - psi(theta)).

All integrals are quadratures on a :class:`~projfpe.numerics.QuadratureGrid`.
Grids are fitted to the density with :func:`fit_grid` and kept current along
a trajectory with :class:`GridPolicy`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DomainError, NonConvergence, SingularFisher, TailError, UsageError
from .models import SmoothFunction, monomial
from .numerics import (DEFAULT_NODES_PER_PANEL, DEFAULT_PANELS, QuadratureGrid,
                       integrate, spd_solve)

TOP_COEFF_MAX = -1e-8   # domain guard on the leading polynomial coefficient
NEGLIGIBLE_COEFF = 1e-10  # trailing coefficients this small count as absent
TAIL_TOL = 1e-12
LOG_DROP = 72.0  # grid edge sits this many nats below the log-density peak


@dataclass(frozen=True, eq=False)
class ExponentialFamily:
    """Sufficient statistics c_1..c_m, an optional carrier c0, and a domain guard.

    ``degrees`` is set for polynomial statistics (c_i = x**degrees[i]) and
    enables the leading-coefficient guard. ``carrier_degree`` and
    ``carrier_lead`` describe the carrier's leading monomial when it has one.
    """

    stats: tuple
    carrier: SmoothFunction | None = None
    tag: str = "custom"
    degrees: tuple | None = None
    carrier_degree: int | None = None
    carrier_lead: float = 0.0

    @property
    def dim(self):
        return len(self.stats)

    # -- pointwise pieces ------------------------------------------------------

    def c(self, x):
        return np.array([s.value(x) for s in self.stats])

    def dc(self, x):
        return np.array([s.dx(x) for s in self.stats])

    def d2c(self, x):
        return np.array([s.dxx(x) for s in self.stats])

    def log_unnormalized(self, theta, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(theta) @ self.c(x)
        if self.carrier is not None:
            out = out + self.carrier.value(x)
        return out

    def dlogp(self, theta, x):
        out = np.asarray(theta) @ self.dc(x)
        if self.carrier is not None:
            out = out + self.carrier.dx(x)
        return out

    def d2logp(self, theta, x):
        out = np.asarray(theta) @ self.d2c(x)
        if self.carrier is not None:
            out = out + self.carrier.dxx(x)
        return out

    # -- domain ----------------------------------------------------------------

    def check_domain(self, theta) -> np.ndarray:
        """Return theta as an array, raising DomainError when it cannot be normalized.

        For polynomial exponents the highest-degree non-negligible coefficient
        (carrier included) must have even degree and be <= -1e-8.
        """
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.dim:
            raise UsageError(f"theta has {theta.size} entries, family has {self.dim}")
        if not np.all(np.isfinite(theta)):
            raise DomainError(f"non-finite natural parameters {theta}")
        if self.degrees is None:
            return theta
        lead = {}
        for deg, th in zip(self.degrees, theta):
            lead[deg] = lead.get(deg, 0.0) + th
        if self.carrier_degree is not None:
            lead[self.carrier_degree] = lead.get(self.carrier_degree, 0.0) + self.carrier_lead
        live = [d for d, v in lead.items() if abs(v) > NEGLIGIBLE_COEFF]
        if not live:
            raise DomainError("exponent is constant; density is not normalizable")
        top = max(live)
        if top % 2 or lead[top] > TOP_COEFF_MAX:
            raise DomainError(
                f"leading coefficient {lead[top]:.3e} of x^{top} violates the domain guard")
        return theta

    def in_domain(self, theta) -> bool:
        try:
            self.check_domain(theta)
        except DomainError:
            return False
        return True


def polynomial_family(max_degree: int) -> ExponentialFamily:
    """Monomials x, x^2, ..., x^max_degree (max_degree even)."""
    if max_degree < 2 or max_degree % 2:
        raise UsageError(f"polynomial family needs an even degree >= 2, got {max_degree}")
    degs = tuple(range(1, max_degree + 1))
    return ExponentialFamily(tuple(monomial(k) for k in degs), None,
                             f"polynomial degrees 1..{max_degree}", degs)


def mean_shift_gaussian() -> ExponentialFamily:
    """N(theta, 1) written as c = (x) with carrier -x^2/2 - log(2 pi)/2."""
    half_log_2pi = 0.5 * np.log(2 * np.pi)
    carrier = SmoothFunction(lambda x: -0.5 * np.asarray(x, dtype=float) ** 2 - half_log_2pi,
                             lambda x: -np.asarray(x, dtype=float),
                             lambda x: -np.ones_like(np.asarray(x, dtype=float)))
    return ExponentialFamily((monomial(1),), carrier, "mean-shift-gaussian", (1,), 2, -0.5)


def from_spec(spec: dict, size: int | None = None) -> ExponentialFamily:
    basis = spec.get("basis")
    if basis == "poly":
        return polynomial_family(int(size if size is not None else spec.get("max_degree", 2)))
    if basis == "mean-shift-gaussian":
        return mean_shift_gaussian()
    raise UsageError(f"unknown family basis {basis!r}")


def gaussian_theta(mean, var, family: ExponentialFamily | None = None) -> np.ndarray:
    """Natural parameters of N(mean, var) in a polynomial family (zero-padded)."""
    if not var > 0:
        raise DomainError("variance must be positive")
    theta = np.array([mean / var, -0.5 / var])
    if family is not None:
        if family.tag == "mean-shift-gaussian":
            if abs(var - 1.0) > 1e-12:
                raise DomainError("mean-shift family has unit variance")
            return np.array([float(mean)])
        theta = np.concatenate([theta, np.zeros(family.dim - 2)])
    return theta


def gaussian_moments(mean, var, max_degree) -> np.ndarray:
    """E[x^k], k = 1..max_degree, for N(mean, var)."""
    # E[x^k] = sum_j C(k, 2j) mean^(k-2j) var^j (2j-1)!!
    from math import comb
    out = []
    for k in range(1, max_degree + 1):
        s, dfact = 0.0, 1.0
        for j in range(0, k // 2 + 1):
            if j > 0:
                dfact *= 2 * j - 1
            s += comb(k, 2 * j) * mean ** (k - 2 * j) * var**j * dfact
        out.append(s)
    return np.array(out)


# ------------------------------------------------------------------ densities

@dataclass(frozen=True, eq=False)
class DensityGrid:
    grid: QuadratureGrid
    values: np.ndarray
    log_values: np.ndarray

    @classmethod
    def from_values(cls, grid, values):
        values = np.asarray(values, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(values > 0, np.log(np.where(values > 0, values, 1.0)), -np.inf)
        return cls(grid, values, logs)

    @classmethod
    def from_log(cls, grid, log_values):
        log_values = np.asarray(log_values, dtype=float)
        return cls(grid, np.exp(log_values), log_values)

    @property
    def mass(self):
        return float(integrate(self.grid, self.values))

    def expect(self, phi_values):
        return integrate(self.grid, np.asarray(phi_values) * self.values)


def log_partition(family: ExponentialFamily, theta, grid: QuadratureGrid) -> float:
    """psi(theta) = log int exp(theta.c + c0) dx by log-sum-exp over the grid."""
    theta = family.check_domain(theta)
    logq = family.log_unnormalized(theta, grid.nodes)
    top = float(np.max(logq))
    psi = top + float(np.log(np.exp(logq - top) @ grid.weights))
    _check_tails(family, theta, grid, psi)
    return psi


def _check_tails(family, theta, grid, psi):
    edge = family.log_unnormalized(theta, np.array([grid.x_min, grid.x_max]))
    worst = float(np.max(edge)) - psi
    if not np.isfinite(psi) or worst > np.log(TAIL_TOL):
        raise TailError(
            f"boundary integrand is {np.exp(worst):.2e} of the total on "
            f"[{grid.x_min:.4g}, {grid.x_max:.4g}]")


def density(family, theta, grid) -> DensityGrid:
    psi = log_partition(family, theta, grid)
    return DensityGrid.from_log(grid, family.log_unnormalized(theta, grid.nodes) - psi)


def expectation(family, theta, phi_values, grid) -> float:
    return float(density(family, theta, grid).expect(phi_values))


def mean_var(family, theta, grid) -> tuple[float, float]:
    p = density(family, theta, grid)
    m = float(p.expect(grid.nodes))
    v = float(p.expect((grid.nodes - m) ** 2))
    return m, v


def centered_stats(family, theta, grid, p: DensityGrid | None = None):
    """(c - E_theta c) on the grid and the density used, shape (m, n)."""
    if p is None:
        p = density(family, theta, grid)
    c = family.c(grid.nodes)
    return c - p.expect(c)[:, None], p


def fisher_matrix(family, theta, grid, p: DensityGrid | None = None) -> np.ndarray:
    """g_ij = Cov_theta(c_i, c_j)."""
    cc, p = centered_stats(family, theta, grid, p)
    g = (cc * (p.values * grid.weights)) @ cc.T
    g = 0.5 * (g + g.T)
    eig = np.linalg.eigvalsh(g)
    if eig[0] < 1e-10 * np.trace(g):
        raise SingularFisher(f"Fisher matrix min eigenvalue {eig[0]:.3e} vs trace {np.trace(g):.3e}")
    return g


# -------------------------------------------------------------------- grids

def fit_grid(family, theta, panels=DEFAULT_PANELS, nodes_per_panel=DEFAULT_NODES_PER_PANEL,
             log_drop=LOG_DROP) -> QuadratureGrid:
    """Gauss-Legendre grid spanning where log p(., theta) is within ``log_drop`` nats of its peak.

    With the default drop of 72 nats a Gaussian gets mean +- 12 sd; lighter
    tails get a tighter interval. The crossing points are located by a
    widening uniform scan refined with Brent's method.
    """
    theta = family.check_domain(theta)

    def lq(x):
        return family.log_unnormalized(theta, x)

    half = 8.0
    while True:
        xs = np.linspace(-half, half, 4001)
        vals = lq(xs)
        top = vals.max()
        if vals[0] < top - log_drop - 5 and vals[-1] < top - log_drop - 5:
            break
        half *= 2.0
        if half > 1e8:
            raise DomainError("could not bracket the density")
    # refine the peak so narrow densities are not under-resolved by the scan
    i = int(np.argmax(vals))
    peak = optimize.minimize_scalar(lambda x: -float(lq(np.array([x]))[0]), method="bounded",
                                    bounds=(xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]),
                                    options={"xatol": 1e-10})
    top = max(top, -float(peak.fun))
    level = top - log_drop
    keep = np.nonzero(vals > level)[0]
    if keep.size == 0:
        keep = np.array([i])
    j0, j1 = keep[0], keep[-1]

    def crossing(a, b):
        return optimize.brentq(lambda x: float(lq(np.array([x]))[0]) - level, a, b, xtol=1e-12)

    lo = crossing(xs[j0 - 1], xs[j0]) if vals[j0 - 1] < level < lq(np.array([xs[j0]]))[0] else xs[j0 - 1]
    hi = crossing(xs[j1], xs[j1 + 1]) if vals[j1 + 1] < level < lq(np.array([xs[j1]]))[0] else xs[j1 + 1]
    if keep.size == 1:
        lo, hi = xs[j0 - 1], xs[j0 + 1]
    grid = QuadratureGrid.gauss_legendre(lo, hi, panels, nodes_per_panel)
    log_partition(family, theta, grid)
    return grid


class GridPolicy:
    """Keeps a grid fitted to a moving density.

    The grid is rebuilt when the density's mean +- 8 sd interval has moved
    (either endpoint) by more than 10% of that interval's width since the
    last build.
    """

    def __init__(self, family, panels=DEFAULT_PANELS, nodes_per_panel=DEFAULT_NODES_PER_PANEL,
                 trigger=0.10, log_drop=LOG_DROP):
        self.family = family
        self.panels = panels
        self.nodes_per_panel = nodes_per_panel
        self.trigger = trigger
        self.log_drop = log_drop
        self.grid = None
        self._ref = None
        self.rebuilds = 0

    def _interval(self, theta, grid):
        m, v = mean_var(self.family, theta, grid)
        s = np.sqrt(v)
        return m - 8 * s, m + 8 * s

    def build(self, theta) -> QuadratureGrid:
        self.grid = fit_grid(self.family, theta, self.panels, self.nodes_per_panel,
                             self.log_drop)
        self._ref = self._interval(theta, self.grid)
        self.rebuilds += 1
        return self.grid

    def update(self, theta) -> QuadratureGrid:
        if self.grid is None:
            return self.build(theta)
        try:
            lo, hi = self._interval(theta, self.grid)
        except TailError:
            return self.build(theta)
        ref_lo, ref_hi = self._ref
        tol = self.trigger * (ref_hi - ref_lo)
        if abs(lo - ref_lo) > tol or abs(hi - ref_hi) > tol:
            return self.build(theta)
        return self.grid


# ---------------------------------------------------------- moment matching

def moment_match(family, eta, grid: QuadratureGrid | None, theta_init,
                 tol=1e-10, max_iter=100, max_halvings=30, refit=True):
    """Solve grad psi(theta) = eta by Newton's method with step halving.

    The Fisher matrix is the Jacobian of grad psi. When ``refit`` is true the
    grid is refitted to each accepted iterate. Returns (theta, grid).
    """
    eta = np.asarray(eta, dtype=float)
    theta = family.check_domain(theta_init)
    if grid is None:
        grid = fit_grid(family, theta)
    for _ in range(max_iter):
        p = density(family, theta, grid)
        resid = eta - p.expect(family.c(grid.nodes))
        if np.max(np.abs(resid)) <= tol:
            return theta, grid
        g = fisher_matrix(family, theta, grid, p)
        step = spd_solve(g, resid).solution
        for _ in range(max_halvings + 1):
            trial = theta + step
            if family.in_domain(trial):
                try:
                    new_grid = fit_grid(family, trial, grid.panels, grid.nodes_per_panel) if refit else grid
                    log_partition(family, trial, new_grid)
                    break
                except (TailError, DomainError):
                    pass
            step = 0.5 * step
        else:
            raise DomainError("Newton iterate left the domain after repeated halving")
        theta, grid = trial, new_grid
    raise NonConvergence(f"moment matching did not converge in {max_iter} iterations")


def _fd_steps(family, theta, grid, eps):
    # one standard deviation of c_i sets the natural scale of theta_i
    p = density(family, theta, grid)
    c = family.c(grid.nodes)
    mean = c @ (p.values * grid.weights)
    var = ((c - mean[:, None]) ** 2) @ (p.values * grid.weights)
    return eps / np.sqrt(var)


def grad_log_partition_fd(family, theta, grid, eps=1e-5) -> np.ndarray:
    """Central-difference gradient of psi, used as an independent check.

    Steps are ``eps`` divided by the standard deviation of each statistic.
    """
    theta = np.asarray(theta, dtype=float)
    steps = _fd_steps(family, theta, grid, eps)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = steps[i]
        out[i] = (log_partition(family, theta + e, grid) - log_partition(family, theta - e, grid)) / (2 * steps[i])
    return out


def hessian_log_partition_fd(family, theta, grid, eps=1e-4) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    steps = _fd_steps(family, theta, grid, eps)
    m = theta.size
    H = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            ei = np.zeros(m)
            ej = np.zeros(m)
            ei[i] = steps[i]
            ej[j] = steps[j]
            H[i, j] = (log_partition(family, theta + ei + ej, grid)
                       - log_partition(family, theta + ei - ej, grid)
                       - log_partition(family, theta - ei + ej, grid)
                       + log_partition(family, theta - ei - ej, grid)) / (4 * steps[i] * steps[j])
    return H
