"""Scalar Ito diffusions dX = f dt + sigma dW and their generators.

The diffusion coefficient is carried as ``a = sigma**2``. Coefficients are
functions of ``(t, x)`` with ``x`` a numpy array.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UsageError

Field = Callable[[float, np.ndarray], np.ndarray]


def _zeros(t, x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class TimeSpaceField:
    """A coefficient g(t, x) with its first and second spatial derivatives."""

    value: Field
    dx: Field
    dxx: Field | None = None

    def __call__(self, t, x):
        return self.value(t, x)

    def derivative_error(self, times, x, step=1e-5):
        """Worst relative mismatch between analytic derivatives and central differences."""
        worst = 0.0
        x = np.asarray(x, dtype=float)
        for t in np.atleast_1d(times):
            v_plus, v_minus = self.value(t, x + step), self.value(t, x - step)
            v0 = self.value(t, x)
            pairs = [(self.dx(t, x), (v_plus - v_minus) / (2 * step))]
            if self.dxx is not None:
                pairs.append((self.dxx(t, x), (v_plus - 2 * v0 + v_minus) / step**2))
            for exact, approx in pairs:
                scale = np.maximum(np.abs(exact), 1.0)
                worst = max(worst, float(np.max(np.abs(exact - approx) / scale)))
        return worst


@dataclass(frozen=True)
class SmoothFunction:
    """A time-independent test function phi(x) with phi' and phi''."""

    value: Callable[[np.ndarray], np.ndarray]
    dx: Callable[[np.ndarray], np.ndarray]
    dxx: Callable[[np.ndarray], np.ndarray]


def monomial(k: int) -> SmoothFunction:
    if k < 0:
        raise UsageError("monomial degree must be nonnegative")
    return SmoothFunction(
        lambda x: np.asarray(x, dtype=float) ** k,
        lambda x: k * np.asarray(x, dtype=float) ** (k - 1) if k >= 1 else np.zeros_like(x, dtype=float),
        lambda x: k * (k - 1) * np.asarray(x, dtype=float) ** (k - 2) if k >= 2 else np.zeros_like(x, dtype=float),
    )


@dataclass(frozen=True)
class DiffusionModel:
    drift: TimeSpaceField
    diffusion: TimeSpaceField
    K: float | None = None
    name: str = "custom"
    params: dict | None = None

    def __post_init__(self):
        if self.diffusion.dxx is None:
            raise UsageError("the diffusion coefficient needs a second derivative")

    @property
    def is_linear(self):
        return self.name == "linear"

    def sigma(self, t, x):
        return np.sqrt(self.diffusion.value(t, x))


def backward_apply(model: DiffusionModel, t: float, phi: SmoothFunction, x) -> np.ndarray:
    """(L phi)(x) = f phi' + a phi'' / 2 on the nodes ``x``."""
    x = np.asarray(x, dtype=float)
    return model.drift.value(t, x) * phi.dx(x) + 0.5 * model.diffusion.value(t, x) * phi.dxx(x)


def forward_over_density(model: DiffusionModel, t, x, dlogp, d2logp) -> np.ndarray:
    """(L* p) / p written through derivatives of log p.

    Never differences p itself, so the result stays accurate in the tails.
    """
    f = model.drift.value(t, x)
    fx = model.drift.dx(t, x)
    a = model.diffusion.value(t, x)
    ax = model.diffusion.dx(t, x)
    axx = model.diffusion.dxx(t, x)
    return (-f * dlogp - fx
            + 0.5 * (a * d2logp + a * dlogp**2 + 2.0 * ax * dlogp + axx))


def alpha_field(model: DiffusionModel, t: float, theta, family, x) -> np.ndarray:
    """alpha_{t,theta} = (L_t* p(.,theta)) / p(.,theta) at the nodes ``x``."""
    theta = family.check_domain(theta)
    x = np.asarray(x, dtype=float)
    return forward_over_density(model, t, x, family.dlogp(theta, x), family.d2logp(theta, x))


@dataclass(frozen=True)
class NonexplosionReport:
    ok: bool
    worst_margin: float  # max of 2xf + a - K(1+x^2); <= 0 when ok
    worst_x: float
    worst_t: float


def nonexplosion_check(model: DiffusionModel, x, K=None, times=(0.0,)) -> NonexplosionReport:
    """Check 2 x f(t,x) + a(t,x) <= K (1 + x^2) on the probe nodes and times."""
    K = model.K if K is None else K
    if K is None:
        raise UsageError("no nonexplosion constant given")
    x = np.asarray(x, dtype=float)
    worst = (-np.inf, np.nan, np.nan)
    for t in np.atleast_1d(times):
        margin = 2 * x * model.drift.value(t, x) + model.diffusion.value(t, x) - K * (1 + x**2)
        i = int(np.argmax(margin))
        if margin[i] > worst[0]:
            worst = (float(margin[i]), float(x[i]), float(t))
    return NonexplosionReport(worst[0] <= 0.0, *worst)


def positivity_check(model: DiffusionModel, x, times=(0.0,)) -> bool:
    return all(np.all(model.diffusion.value(t, x) > 0) for t in np.atleast_1d(times))


def probe_nodes(mean, var, n=41, width=6.0):
    s = np.sqrt(var)
    return np.linspace(mean - width * s, mean + width * s, n)


# ---------------------------------------------------------------- builtins

def _as_time_function(c):
    if callable(c):
        return c
    c = float(c)
    return lambda t: c


def constant_diffusion(A) -> TimeSpaceField:
    A_t = _as_time_function(A)
    return TimeSpaceField(lambda t, x: np.full_like(np.asarray(x, dtype=float), A_t(t)),
                          _zeros, _zeros)


def sine_diffusion(offset=2.0, amplitude=1.0) -> TimeSpaceField:
    """a(x) = offset + amplitude * sin(x); positive when offset > |amplitude|."""
    return TimeSpaceField(lambda t, x: offset + amplitude * np.sin(x),
                          lambda t, x: amplitude * np.cos(x),
                          lambda t, x: -amplitude * np.sin(x))


def linear(F, A) -> DiffusionModel:
    """f = F(t) x, a = A(t); F and A may be constants or functions of t."""
    F_t = _as_time_function(F)
    drift = TimeSpaceField(lambda t, x: F_t(t) * np.asarray(x, dtype=float),
                           lambda t, x: np.full_like(np.asarray(x, dtype=float), F_t(t)),
                           _zeros)
    K = None
    if not callable(F) and not callable(A):
        K = max(2 * float(F), float(A), 0.0)
    return DiffusionModel(drift, constant_diffusion(A), K=K, name="linear",
                          params={"F": F, "A": A})


def unit_variance(k, diffusion: TimeSpaceField) -> DiffusionModel:
    """Drift f = a'/2 + a (k t - x)/2 + k, whose law stays N(k t, 1) from N(0, 1)."""
    a = diffusion

    def f(t, x):
        return 0.5 * a.dx(t, x) + 0.5 * a.value(t, x) * (k * t - x) + k

    def fx(t, x):
        return 0.5 * a.dxx(t, x) + 0.5 * a.dx(t, x) * (k * t - x) - 0.5 * a.value(t, x)

    return DiffusionModel(TimeSpaceField(f, fx), a, name="unit-variance", params={"k": k})


def double_well(sigma0_sq=0.5) -> DiffusionModel:
    """f = x - x^3 with constant a = sigma0^2."""
    drift = TimeSpaceField(lambda t, x: x - x**3, lambda t, x: 1 - 3 * x**2,
                           lambda t, x: -6 * x)
    # 2x(x - x^3) + a <= (2 + a)(1 + x^2) since 2x^2 - 2x^4 <= 2(1 + x^2)
    return DiffusionModel(drift, constant_diffusion(sigma0_sq), K=2.0 + sigma0_sq,
                          name="double-well", params={"sigma0_sq": sigma0_sq})


def from_spec(spec: dict) -> DiffusionModel:
    """Build a named model from its configuration mapping."""
    if not isinstance(spec, dict) or "name" not in spec:
        raise UsageError("model spec must be a mapping with a 'name' key")
    name = spec["name"]
    if name == "linear":
        return linear(float(spec.get("F", 0.0)), float(spec.get("A", 1.0)))
    if name == "unit-variance":
        a_spec = spec.get("a", {"type": "constant", "value": 1.0})
        return unit_variance(float(spec.get("k", 1.0)), diffusion_from_spec(a_spec))
    if name == "double-well":
        return double_well(float(spec.get("sigma0_sq", 0.5)))
    raise UsageError(f"unknown model {name!r}")


def diffusion_from_spec(spec) -> TimeSpaceField:
    if isinstance(spec, (int, float)):
        return constant_diffusion(float(spec))
    kind = spec.get("type")
    if kind == "constant":
        return constant_diffusion(float(spec["value"]))
    if kind == "sine":
        return sine_diffusion(float(spec.get("offset", 2.0)), float(spec.get("amplitude", 1.0)))
    raise UsageError(f"unknown diffusion spec {spec!r}")
