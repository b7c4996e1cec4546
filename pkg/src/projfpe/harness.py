"""Configured experiments: projection runs, drift reconstruction, nested-family sweeps.

Configurations are JSON mappings::

    {
      "model":   {"name": "linear", "F": -1, "A": 2},
      "family":  {"basis": "poly", "max_degree": 2},      # or "sizes": [2, 4, 6]
      "initial": {"gaussian": {"mean": 0.5, "var": 0.3}},  # or {"theta": [...]}, {"moments": [...]}
      "T": 1.0, "h": 0.001,
      "grid":    {"panels": 64, "nodes_per_panel": 16},
      "mc":      {"N": 100000, "delta": 0.001, "seed": 1},
      "reference": {"nodes": 2048, "dt": 0.001, "x_min": -6, "x_max": 6},
      "drift_window": [-2, 2],
      "output":  "out"
    }
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import expfam, geometry, models, oracle, projection, reconstruction
from .errors import ConfigError, NumericalError, ProjFPEError, StepFailure
from .numerics import QuadratureGrid, interpolate

log = logging.getLogger(__name__)

DERIVATIVE_TOL = 1e-4


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


# ---------------------------------------------------------------- configuration

@dataclass
class ExperimentConfig:
    model: dict
    family: dict
    initial: dict
    T: float
    h: float
    grid: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    drift_window: tuple = (-2.0, 2.0)
    output: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        missing = [k for k in ("model", "family", "initial", "T", "h") if k not in raw]
        if missing:
            raise ConfigError(f"missing configuration keys: {', '.join(missing)}")
        known = {"model", "family", "initial", "T", "h", "grid", "mc", "reference",
                 "drift_window", "output"}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(extra))}")
        raw = copy.deepcopy(raw)
        try:
            T, h = float(raw["T"]), float(raw["h"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"T and h must be numbers: {exc}") from exc
        return cls(raw["model"], raw["family"], raw["initial"], T, h,
                   raw.get("grid", {}), raw.get("mc", {}), raw.get("reference", {}),
                   tuple(raw.get("drift_window", (-2.0, 2.0))), raw.get("output", "out"))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        return cls.from_dict(raw)

    @property
    def sizes(self):
        if "sizes" in self.family:
            return [int(m) for m in self.family["sizes"]]
        if self.family.get("basis") == "poly":
            return [int(self.family.get("max_degree", 2))]
        return [None]

    @property
    def panels(self):
        return int(self.grid.get("panels", 64))

    @property
    def nodes_per_panel(self):
        return int(self.grid.get("nodes_per_panel", 16))

    def with_grid_nodes(self, total: int) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        npp = cfg.nodes_per_panel
        if total < npp or total % npp:
            raise ConfigError(f"--grid-nodes must be a positive multiple of {npp}")
        cfg.grid = dict(cfg.grid, panels=total // npp)
        return cfg


@dataclass
class Resolved:
    """A validated configuration for one family size."""

    config: ExperimentConfig
    model: models.DiffusionModel
    family: expfam.ExponentialFamily
    theta0: np.ndarray
    grid0: QuadratureGrid

    def policy(self):
        return expfam.GridPolicy(self.family, self.config.panels, self.config.nodes_per_panel)


def _check_steps(cfg: ExperimentConfig):
    if not (cfg.T > 0 and cfg.h > 0):
        raise ConfigError("T and h must be positive")
    n = round(cfg.T / cfg.h)
    if n < 1 or abs(n * cfg.h - cfg.T) > 1e-9 * cfg.T:
        raise ConfigError(f"T={cfg.T} is not a multiple of h={cfg.h}")
    if cfg.panels < 1 or cfg.nodes_per_panel < 2:
        raise ConfigError("grid needs at least one panel of two nodes")
    if cfg.mc:
        delta = float(cfg.mc.get("delta", cfg.h))
        if not (0 < delta <= cfg.h * (1 + 1e-12)):
            raise ConfigError(f"mc.delta={delta} must be positive and at most h={cfg.h}")
        if int(cfg.mc.get("N", 1)) < 1:
            raise ConfigError("mc.N must be at least 1")


def _initial_theta(cfg, family):
    init = cfg.initial
    if not isinstance(init, dict) or len(init) != 1:
        raise ConfigError("initial must have exactly one of 'theta', 'moments', 'gaussian'")
    kind, val = next(iter(init.items()))
    if kind == "theta":
        theta = family.check_domain(np.asarray(val, dtype=float))
        return theta, None
    if kind == "gaussian":
        mean, var = float(val["mean"]), float(val["var"])
        start = expfam.gaussian_theta(mean, var, family)
        if family.tag == "mean-shift-gaussian":
            return start, None
        eta = expfam.gaussian_moments(mean, var, family.dim)
    elif kind == "moments":
        eta = np.asarray(val, dtype=float)
        if eta.size != family.dim:
            raise ConfigError(f"{eta.size} moments given for a {family.dim}-parameter family")
        var = eta[1] - eta[0] ** 2 if family.dim >= 2 else 1.0
        if not var > 0:
            raise ConfigError("moments do not describe a positive variance")
        start = expfam.gaussian_theta(eta[0], var, family)
    else:
        raise ConfigError(f"unknown initial condition {kind!r}")
    grid = expfam.fit_grid(family, start, cfg.panels, cfg.nodes_per_panel)
    theta, grid = expfam.moment_match(family, eta, grid, start)
    return theta, grid


def validate(cfg: ExperimentConfig, size=None) -> Resolved:
    """Resolve and check a configuration before any time stepping.

    Checks positivity of a, the nonexplosion bound when the model has a
    constant K, analytic derivatives against central differences, the
    initial domain guard, and the E[alpha^2] surrogate at t = 0.
    """
    try:
        return _validate(cfg, size)
    except ProjFPEError as exc:
        exc.during_validation = True
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed configuration: {exc!r}") from exc


def _validate(cfg, size):
    _check_steps(cfg)
    try:
        model = models.from_spec(cfg.model)
        family = expfam.from_spec(cfg.family, size)
    except ProjFPEError as exc:
        raise ConfigError(str(exc)) from exc
    theta0, grid0 = _initial_theta(cfg, family)
    if grid0 is None:
        grid0 = expfam.fit_grid(family, theta0, cfg.panels, cfg.nodes_per_panel)
    m, v = expfam.mean_var(family, theta0, grid0)
    probe = models.probe_nodes(m, v)
    times = np.linspace(0.0, cfg.T, 5)
    if not models.positivity_check(model, probe, times):
        raise ConfigError("diffusion coefficient is not positive on the probe grid")
    if model.K is not None:
        rep = models.nonexplosion_check(model, probe, model.K, times)
        if not rep.ok:
            raise ConfigError(f"nonexplosion bound fails at x={rep.worst_x:.3g}, t={rep.worst_t:.3g}")
    for name, fld in (("drift", model.drift), ("diffusion", model.diffusion)):
        err = fld.derivative_error(times, probe)
        if err > DERIVATIVE_TOL:
            raise ConfigError(f"{name} derivatives disagree with finite differences ({err:.2e})")
    p0 = expfam.density(family, theta0, grid0)
    projection.check_condition_f(models.alpha_field(model, 0.0, theta0, family, grid0.nodes), p0)
    if cfg.family.get("basis") == "poly":
        for s in cfg.sizes:
            if s is None or s % 2 or s < 2:
                raise ConfigError(f"polynomial family sizes must be even and >= 2, got {s}")
    return Resolved(cfg, model, family, theta0, grid0)


# ---------------------------------------------------------------- experiments

@dataclass
class ProjectionRun:
    resolved: Resolved
    trajectory: projection.ThetaTrajectory

    def summary(self):
        tr = self.trajectory
        return {
            "family": self.resolved.family.tag,
            "steps": len(tr.times) - 1,
            "T": tr.times[-1],
            "terminal_mean": tr.means[-1],
            "terminal_variance": tr.variances[-1],
            "max_residual": float(np.max(tr.residuals)),
            "integrated_residual": tr.integrated_residual(),
            "max_fisher_condition": float(np.max(tr.conditions)),
            **{f"terminal_theta_{i + 1}": float(v) for i, v in enumerate(tr.final_theta)},
        }


def _ensure_dir(path):
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _write_summary(path, summary: dict):
    write_csv(path, ["key", "value"], summary.items())


def run_projection(cfg: ExperimentConfig, out_dir=None, resolved=None) -> ProjectionRun:
    """Integrate the projected parameter ODE and write trajectory.csv and summary.csv."""
    resolved = resolved or validate(cfg)
    tr = projection.integrate_theta(resolved.model, resolved.family, resolved.theta0,
                                    cfg.T, cfg.h, resolved.policy())
    run = ProjectionRun(resolved, tr)
    if out_dir is not None:
        _ensure_dir(out_dir)
        write_csv(os.path.join(out_dir, "trajectory.csv"), tr.header(), tr.rows())
        _write_summary(os.path.join(out_dir, "summary.csv"), run.summary())
    return run


@dataclass
class ReconstructionRun:
    projection: ProjectionRun
    ensemble: reconstruction.PathEnsemble
    distances: reconstruction.EmpiricalDistances
    reference: reconstruction.Histogram


def run_reconstruction(cfg: ExperimentConfig, out_dir=None, write_ustar=True,
                       ustar_snapshots=11) -> ReconstructionRun:
    """Simulate Y under u* and compare its terminal histogram with p(., theta_T)."""
    resolved = validate(cfg)
    proj = run_projection(cfg, out_dir, resolved)
    tr = proj.trajectory
    mc = cfg.mc
    ens = reconstruction.simulate(resolved.model, resolved.family, tr,
                                  int(mc.get("N", 100000)), float(mc.get("delta", cfg.h)),
                                  int(mc.get("seed", 0)))
    pT = expfam.density(resolved.family, tr.final_theta, tr.final_grid)
    ref = reconstruction.Histogram.from_density(pT, ens.histogram.edges)
    dist = reconstruction.empirical_distance(ens.histogram, ref)
    if out_dir is not None:
        if write_ustar:
            every = max(1, (len(tr.times) - 1) // max(ustar_snapshots - 1, 1))
            write_csv(os.path.join(out_dir, "ustar.csv"), ["t", "x", "ustar"],
                      reconstruction.ustar_table(resolved.model, resolved.family, tr, every))
        write_simulation_outputs(out_dir, ens, ref, dist)
    return ReconstructionRun(proj, ens, dist, ref)


def write_simulation_outputs(out_dir, ens, ref, dist):
    h = ens.histogram
    write_csv(os.path.join(out_dir, "histogram.csv"),
              ["bin_left", "bin_right", "empirical", "projected"],
              zip(h.edges[:-1], h.edges[1:], h.heights, ref.heights))
    write_csv(os.path.join(out_dir, "distances.csv"), ["metric", "value"],
              [("L1", dist.L1), ("hellinger", dist.hellinger), ("paths", ens.n_paths),
               ("excluded", ens.excluded), ("seed", ens.seed), ("delta", ens.delta)])


# ---------------------------------------------------------------- convergence

@dataclass
class ConvergenceRow:
    m: int
    status: str
    L1: float = np.nan
    hellinger: float = np.nan
    KL: float = np.nan
    residual_t0: float = np.nan
    integrated_residual: float = np.nan
    drift_sup: float = np.nan
    terminal_mean: float = np.nan
    terminal_variance: float = np.nan
    density: np.ndarray | None = None


@dataclass
class ConvergenceReport:
    rows: list
    reference_grid: QuadratureGrid
    reference_density: np.ndarray
    reference_kind: str

    HEADER = ["m", "status", "L1", "hellinger", "KL", "residual_t0", "integrated_residual",
              "drift_sup", "terminal_mean", "terminal_variance"]

    def table(self):
        for r in self.rows:
            yield [r.m, r.status, r.L1, r.hellinger, r.KL, r.residual_t0, r.integrated_residual,
                   r.drift_sup, r.terminal_mean, r.terminal_variance]

    def residuals_monotone(self, slack=1e-10) -> bool:
        res = [r.residual_t0 for r in self.rows if r.status == "ok"]
        return all(b <= a + slack for a, b in zip(res, res[1:]))

    def write(self, out_dir):
        _ensure_dir(out_dir)
        write_csv(os.path.join(out_dir, "convergence.csv"), self.HEADER, self.table())
        for r in self.rows:
            if r.density is None:
                continue
            write_csv(os.path.join(out_dir, f"density_m{r.m}.csv"), ["x", "projected", "reference"],
                      zip(self.reference_grid.nodes, r.density, self.reference_density))


def _reference(cfg, resolved_list, refine=2):
    """Terminal reference density on a uniform grid ``refine`` times finer than the projection grid."""
    base = resolved_list[0]
    ref = cfg.reference
    m0, v0 = expfam.mean_var(base.family, base.theta0, base.grid0)
    x_min = float(ref.get("x_min", m0 - 8 * np.sqrt(v0)))
    x_max = float(ref.get("x_max", m0 + 8 * np.sqrt(v0)))
    nodes = max(int(ref.get("nodes", 0)), refine * cfg.panels * cfg.nodes_per_panel)
    grid = QuadratureGrid.trapezoid(x_min, x_max, nodes)
    model = base.model
    if model.is_linear:
        F, A = model.params["F"], model.params["A"]
        _, states = oracle.gaussian_exact(F, A, m0, v0, cfg.T, cfg.h)
        return grid, states[-1].density(grid).values, "gaussian_exact"
    logp = base.family.log_unnormalized(base.theta0, grid.nodes)
    p0 = np.exp(logp - logp.max())
    p0 /= p0 @ grid.weights
    res = oracle.fd_fpe_solve(model, p0, cfg.T, float(ref.get("dt", cfg.h)), grid)
    return grid, res.density.values, "fd_fpe_solve"


def _on_grid(family, theta, own_grid, grid):
    psi = expfam.log_partition(family, theta, own_grid)
    return np.exp(family.log_unnormalized(theta, grid.nodes) - psi)


def _one_size(cfg, resolved, ref_grid, ref_density):
    m = resolved.family.dim
    try:
        tr = projection.integrate_theta(resolved.model, resolved.family, resolved.theta0,
                                        cfg.T, cfg.h, resolved.policy())
        dens = _on_grid(resolved.family, tr.final_theta, tr.final_grid, ref_grid)
        # KL(reference || projected): the projected density is strictly positive
        d = oracle.distance(expfam.DensityGrid.from_values(ref_grid, ref_density),
                            expfam.DensityGrid.from_values(ref_grid, dens))
        lo, hi = cfg.drift_window
        g = tr.final_grid
        xs = np.linspace(max(lo, g.x_min), min(hi, g.x_max), 201)
        u = reconstruction.ustar(resolved.model, resolved.family, tr.final_theta, tr.times[-1], g)
        sup = float(np.max(np.abs(interpolate(g, u, xs) - resolved.model.drift.value(tr.times[-1], xs))))
        return ConvergenceRow(m, "ok", d.L1, d.hellinger, d.KL, tr.residuals[0],
                              tr.integrated_residual(), sup, tr.means[-1], tr.variances[-1], dens)
    except (NumericalError, StepFailure) as exc:
        log.warning("family size %d failed: %s", m, exc)
        res0 = np.nan
        if isinstance(exc, StepFailure) and exc.partial is not None and exc.partial.residuals:
            res0 = exc.partial.residuals[0]
        return ConvergenceRow(m, f"failed: {type(exc).__name__}", residual_t0=res0)


def run_convergence(cfg: ExperimentConfig, out_dir=None, workers=None) -> ConvergenceReport:
    """Project onto nested polynomial families c^m = (x, ..., x^m) and compare with a reference."""
    if cfg.family.get("basis") != "poly":
        raise ConfigError("the convergence sweep needs a polynomial family")
    sizes = cfg.sizes
    if sorted(sizes) != sizes or len(set(sizes)) != len(sizes):
        raise ConfigError("family sizes must be strictly increasing")
    resolved = [validate(cfg, s) for s in sizes]
    ref_grid, ref_density, kind = _reference(cfg, resolved)
    with ThreadPoolExecutor(max_workers=workers or len(sizes)) as pool:
        rows = list(pool.map(lambda r: _one_size(cfg, r, ref_grid, ref_density), resolved))
    report = ConvergenceReport(rows, ref_grid, ref_density, kind)
    if out_dir is not None:
        report.write(out_dir)
    return report


# ---------------------------------------------------------------- oracle / geometry

def run_oracle(cfg: ExperimentConfig, out_dir=None):
    """Reference densities at T: Crank-Nicolson always, exact Gaussian for linear models."""
    resolved = validate(cfg)
    model = resolved.model
    grid, _, _ = _reference(cfg, [resolved], refine=0)
    m0, v0 = expfam.mean_var(resolved.family, resolved.theta0, resolved.grid0)
    p0 = _on_grid(resolved.family, resolved.theta0, resolved.grid0, grid)
    p0 /= p0 @ grid.weights
    fd = oracle.fd_fpe_solve(model, p0, cfg.T, float(cfg.reference.get("dt", cfg.h)), grid)
    columns = {"x": grid.nodes, "fd": fd.density.values}
    rows = []
    series = None
    if model.is_linear:
        times, states = oracle.gaussian_exact(model.params["F"], model.params["A"], m0, v0, cfg.T, cfg.h)
        exact = states[-1].density(grid)
        columns["exact"] = exact.values
        d = oracle.distance(fd.density, exact)
        rows.append(("fd_vs_exact", d.L1, d.hellinger, d.KL))
        series = (times, states)
    proj = projection.integrate_theta(model, resolved.family, resolved.theta0, cfg.T, cfg.h,
                                      resolved.policy())
    pp = expfam.DensityGrid.from_values(
        grid, _on_grid(resolved.family, proj.final_theta, proj.final_grid, grid))
    columns["projected"] = pp.values
    d = oracle.distance(fd.density, pp)
    rows.append(("fd_vs_projected", d.L1, d.hellinger, d.KL))
    if out_dir is not None:
        _ensure_dir(out_dir)
        write_csv(os.path.join(out_dir, "oracle_density.csv"), list(columns),
                  zip(*columns.values()))
        write_csv(os.path.join(out_dir, "oracle_distances.csv"), ["pair", "L1", "hellinger", "KL"], rows)
        if series is not None:
            write_csv(os.path.join(out_dir, "gaussian_exact.csv"), ["t", "mean", "variance"],
                      ((t, s.m, s.Q) for t, s in zip(*series)))
    return {"distances": rows, "fd": fd, "grid": grid}


def geometry_checks(seed=0):
    """Numerical identities of the exponential-manifold machinery on N(0, 1).

    Returns a list of (name, value, tolerance, passed).
    """
    fam = expfam.polynomial_family(2)
    theta = expfam.gaussian_theta(0.0, 1.0)
    grid = expfam.fit_grid(fam, theta)
    p = expfam.density(fam, theta, grid)
    x = grid.nodes
    out = []

    def add(name, value, tol):
        out.append((name, float(value), tol, bool(value <= tol)))

    add("orlicz_norm_x_abs_error", abs(geometry.orlicz_norm(p, x) - 1 / np.sqrt(2 * np.log(2))), 1e-6)
    add("cumulant_tx_abs_error", abs(geometry.cumulant(p, 0.7 * x) - 0.5 * 0.49), 1e-10)
    rng = np.random.default_rng(seed)
    worst_ball = 0.0
    worst_patch = 0.0
    worst_dk = 0.0
    worst_sqrt = 0.0
    for _ in range(20):
        coef = rng.normal(size=3)
        u = geometry.CenteredVariable.center(p, coef[0] * x + coef[1] * np.sin(x) + coef[2] * x**2 / (1 + x**2))
        nrm = geometry.orlicz_norm(p, u)
        u = geometry.CenteredVariable(u.values * (rng.uniform(0.05, 0.95) / nrm), p)
        worst_ball = max(worst_ball, float(p.expect(np.exp(u.values))))
        back = geometry.chart(p, geometry.patch(p, u))
        worst_patch = max(worst_patch, float(np.max(np.abs(back.values - u.values))))
        v = geometry.CenteredVariable.center(p, rng.normal() * x + rng.normal() * np.cos(x) + 0.1 * rng.normal() * x**2)
        d1, d2 = geometry.cumulant_differentials(p, u, v)
        f1, f2 = geometry.cumulant_differentials_fd(p, u, v)
        worst_dk = max(worst_dk, abs(f1 - d1) / max(abs(d1), 1e-3), abs(f2 - d2) / abs(d2))
        chk = geometry.sqrt_map_derivative_check(p, u, v)
        worst_sqrt = max(worst_sqrt, chk.fd_rel_error, chk.norm_rel_error)
    add("ball_max_E_exp_u", worst_ball, 4.0)
    add("chart_patch_roundtrip", worst_patch, 1e-8)
    add("cumulant_differentials_rel", worst_dk, 1e-5)
    add("sqrt_map_derivative_rel", worst_sqrt, 1e-5)
    return out


def run_geometry_check(out_dir=None, seed=0):
    rows = geometry_checks(seed)
    if out_dir is not None:
        _ensure_dir(out_dir)
        write_csv(os.path.join(out_dir, "geometry_check.csv"), ["check", "value", "tolerance", "pass"], rows)
    return rows
