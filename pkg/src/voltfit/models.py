"""Drift/diffusion model descriptions and the built-in test families.

A model bundles the drift b(x, theta), its derivative oracles, the diffusion
a(x), the start point and the admissible parameter box.  Solvers only ever
touch models through this container, so user-supplied dynamics plug in the
same way the built-ins do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, DomainError

Array = np.ndarray


@dataclass(frozen=True)
class ParamDomain:
    """Closed axis-aligned parameter box."""

    lower: Array
    upper: Array

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise DomainError("lower and upper bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("parameter bounds must be finite")
        if not np.all(lo < hi):
            raise DomainError("every lower bound must be strictly below its upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> Array:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        """Euclidean length of the box diagonal."""
        return float(np.linalg.norm(self.widths))

    def contains(self, theta) -> bool:
        th = np.asarray(theta, dtype=float)
        return th.shape == self.lower.shape and bool(
            np.all(th >= self.lower) and np.all(th <= self.upper)
        )

    def is_interior(self, theta, margin: float = 1e-9) -> bool:
        th = np.asarray(theta, dtype=float)
        return th.shape == self.lower.shape and bool(
            np.all(th >= self.lower + margin) and np.all(th <= self.upper - margin)
        )

    def project(self, theta) -> Array:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def edge_distance(self, theta) -> float:
        th = np.asarray(theta, dtype=float)
        return float(min(np.min(th - self.lower), np.min(self.upper - th)))


@dataclass(frozen=True)
class ModelSpec:
    """Dynamics container.

    drift(x, theta) -> (d,);  drift_grad_x -> (d, d);  drift_grad_theta ->
    (d, d_theta);  diffusion(x) -> (d, r).  ``drift_hess`` is optional and,
    when present, returns the tuple (d2b/dxdx, d2b/dxdtheta, d2b/dthetadtheta)
    with shapes (d, d, d), (d, d, d_theta), (d, d_theta, d_theta).
    """

    family: str
    x0: Array
    d: int
    r: int
    d_theta: int
    domain: ParamDomain
    drift: Callable[[Array, Array], Array]
    drift_grad_x: Callable[[Array, Array], Array]
    drift_grad_theta: Callable[[Array, Array], Array]
    diffusion: Callable[[Array], Array]
    drift_hess: Optional[Callable[[Array, Array], tuple]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.d,):
            raise DomainError(f"x0 must have shape ({self.d},), got {x0.shape}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if self.domain.dim != self.d_theta:
            raise DomainError("parameter box dimension must equal d_theta")
        for n, v in (("d", self.d), ("r", self.r), ("d_theta", self.d_theta)):
            if int(v) != v or v < 1:
                raise DomainError(f"{n} must be a positive integer, got {v!r}")

    def check_theta(self, theta) -> Array:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        if th.shape != (self.d_theta,):
            raise DomainError(f"theta must have shape ({self.d_theta},), got {th.shape}")
        if not self.domain.contains(th):
            raise DomainError(f"theta {th.tolist()} lies outside the parameter box")
        return th


def eval_drift(model: ModelSpec, x, theta) -> Array:
    th = model.check_theta(theta)
    return np.asarray(model.drift(np.asarray(x, dtype=float), th), dtype=float)


def eval_drift_grad_x(model: ModelSpec, x, theta) -> Array:
    th = model.check_theta(theta)
    return np.asarray(model.drift_grad_x(np.asarray(x, dtype=float), th), dtype=float)


def eval_drift_grad_theta(model: ModelSpec, x, theta) -> Array:
    th = model.check_theta(theta)
    return np.asarray(model.drift_grad_theta(np.asarray(x, dtype=float), th), dtype=float)


def eval_diffusion(model: ModelSpec, x) -> Array:
    return np.asarray(model.diffusion(np.asarray(x, dtype=float)), dtype=float)


def eval_drift_hess(model: ModelSpec, x, theta) -> tuple:
    if model.drift_hess is None:
        raise CapabilityError(
            f"model family {model.family!r} has no second-derivative oracle"
        )
    th = model.check_theta(theta)
    hxx, hxt, htt = model.drift_hess(np.asarray(x, dtype=float), th)
    return (
        np.asarray(hxx, dtype=float),
        np.asarray(hxt, dtype=float),
        np.asarray(htt, dtype=float),
    )


# ---------------------------------------------------------------------------
# built-in families
# ---------------------------------------------------------------------------


def constant_drift(
    sigma: float, lower, upper, x0=None
) -> ModelSpec:
    """b(x, theta) = theta with diffusion sigma * identity; d = d_theta.

    The flow is an exact fractional integral of a constant, so every
    downstream quantity has a closed form; this is the calibration family.
    """
    domain = ParamDomain(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    d = domain.dim
    sig = float(sigma)
    if x0 is None:
        x0 = np.zeros(d)
    eye = np.eye(d)
    zero_d = np.zeros((d, d))

    def hess(x, th):
        return np.zeros((d, d, d)), np.zeros((d, d, d)), np.zeros((d, d, d))

    return ModelSpec(
        family="constant-drift",
        x0=x0,
        d=d,
        r=d,
        d_theta=d,
        domain=domain,
        drift=lambda x, th: th.copy(),
        drift_grad_x=lambda x, th: zero_d.copy(),
        drift_grad_theta=lambda x, th: eye.copy(),
        diffusion=lambda x: sig * eye,
        drift_hess=hess,
        params={"sigma": sig},
    )


def fractional_linear(
    sigma: float, lower, upper, x0=1.0, offset: float = 0.0
) -> ModelSpec:
    """Scalar relaxation drift b(x, theta) = -theta_1 * x + theta_2.

    With a one-parameter box the offset theta_2 is frozen at ``offset`` and
    only the decay rate is estimated.  The noiseless flow from theta_2 = 0
    is the fractional relaxation curve, giving this family an analytic
    benchmark solution.
    """
    domain = ParamDomain(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    d_theta = domain.dim
    if d_theta not in (1, 2):
        raise DomainError("fractional_linear supports 1 or 2 free parameters")
    sig = float(sigma)
    off = float(offset)

    if d_theta == 1:
        drift = lambda x, th: -th[0] * x + off
        grad_x = lambda x, th: np.array([[-th[0]]])
        grad_t = lambda x, th: np.array([[-x[0]]])

        def hess(x, th):
            return (
                np.zeros((1, 1, 1)),
                np.array([[[-1.0]]]),
                np.zeros((1, 1, 1)),
            )

    else:
        drift = lambda x, th: -th[0] * x + th[1]
        grad_x = lambda x, th: np.array([[-th[0]]])
        grad_t = lambda x, th: np.array([[-x[0], 1.0]])

        def hess(x, th):
            return (
                np.zeros((1, 1, 1)),
                np.array([[[-1.0, 0.0]]]),
                np.zeros((1, 2, 2)),
            )

    return ModelSpec(
        family="fractional-linear",
        x0=np.atleast_1d(np.asarray(x0, dtype=float)),
        d=1,
        r=1,
        d_theta=d_theta,
        domain=domain,
        drift=drift,
        drift_grad_x=grad_x,
        drift_grad_theta=grad_t,
        diffusion=lambda x: np.array([[sig]]),
        drift_hess=hess,
        params={"sigma": sig, "offset": off},
    )


def bounded_nonlinear(
    sigma: float, lower, upper, x0=0.0
) -> ModelSpec:
    """b(x, theta) = theta_1 * tanh(x) + theta_2 with diffusion sigma (1 + cos(x)^2) / 2.

    Everything is globally Lipschitz and bounded; the diffusion actually
    depends on the state, unlike the other two families.
    """
    domain = ParamDomain(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    if domain.dim != 2:
        raise DomainError("bounded_nonlinear has exactly 2 parameters")
    sig = float(sigma)

    def drift(x, th):
        return np.array([th[0] * math.tanh(x[0]) + th[1]])

    def grad_x(x, th):
        c = math.cosh(x[0])
        return np.array([[th[0] / (c * c)]])

    def grad_t(x, th):
        return np.array([[math.tanh(x[0]), 1.0]])

    def hess(x, th):
        t = math.tanh(x[0])
        sech2 = 1.0 - t * t
        return (
            np.array([[[-2.0 * th[0] * t * sech2]]]),
            np.array([[[sech2, 0.0]]]),
            np.zeros((1, 2, 2)),
        )

    def diffusion(x):
        c = math.cos(x[0])
        return np.array([[sig * (1.0 + c * c) / 2.0]])

    return ModelSpec(
        family="bounded-nonlinear",
        x0=np.atleast_1d(np.asarray(x0, dtype=float)),
        d=1,
        r=1,
        d_theta=2,
        domain=domain,
        drift=drift,
        drift_grad_x=grad_x,
        drift_grad_theta=grad_t,
        diffusion=diffusion,
        drift_hess=hess,
        params={"sigma": sig},
    )


_BUILDERS = {
    "constant-drift": constant_drift,
    "fractional-linear": fractional_linear,
    "bounded-nonlinear": bounded_nonlinear,
}


def build_model(family: str, sigma: float, x0, lower, upper, **kwargs) -> ModelSpec:
    """Construct a built-in family from plain config values."""
    try:
        builder = _BUILDERS[family]
    except KeyError:
        raise DomainError(
            f"unknown model family {family!r}; available: {sorted(_BUILDERS)}"
        ) from None
    return builder(sigma, lower, upper, x0=x0, **kwargs)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipschitzReport:
    """Empirical Lipschitz ratios.  Diagnostic only; nothing consumes it."""

    drift_ratio: float
    diffusion_ratio: float
    samples: int
    radius: float


def lipschitz_probe(
    model: ModelSpec, samples: int = 2000, radius: float = 5.0, rng_seed: int = 0
) -> LipschitzReport:
    """Max observed |b(x)-b(x')| / |x-x'| (and same for the diffusion) over
    random state pairs near the start point, with theta drawn from the box."""
    if samples < 1:
        raise DomainError("samples must be positive")
    rng = np.random.default_rng(rng_seed)
    lo, hi = model.domain.lower, model.domain.upper
    worst_b = 0.0
    worst_a = 0.0
    for _ in range(samples):
        x = model.x0 + rng.uniform(-radius, radius, size=model.d)
        xp = model.x0 + rng.uniform(-radius, radius, size=model.d)
        gap = float(np.linalg.norm(x - xp))
        if gap == 0.0:
            continue
        th = rng.uniform(lo, hi)
        db = np.linalg.norm(model.drift(x, th) - model.drift(xp, th))
        da = np.linalg.norm(model.diffusion(x) - model.diffusion(xp))
        worst_b = max(worst_b, float(db) / gap)
        worst_a = max(worst_a, float(da) / gap)
    return LipschitzReport(
        drift_ratio=worst_b, diffusion_ratio=worst_a, samples=samples, radius=radius
    )


def check_derivative_oracles(
    model: ModelSpec,
    points: int = 100,
    rng_seed: int = 0,
    step: float = 1e-5,
    radius: float = 2.0,
) -> float:
    """Largest relative deviation between the analytic Jacobians and central
    finite differences over random probe points.  Raises nothing; callers
    assert on the returned value."""
    rng = np.random.default_rng(rng_seed)
    lo, hi = model.domain.lower, model.domain.upper
    margin = 2.0 * step * np.maximum(1.0, np.abs(hi - lo))
    worst = 0.0
    for _ in range(points):
        x = model.x0 + rng.uniform(-radius, radius, size=model.d)
        th = rng.uniform(lo + margin, hi - margin)
        jx = np.asarray(model.drift_grad_x(x, th), dtype=float)
        jt = np.asarray(model.drift_grad_theta(x, th), dtype=float)
        for m in range(model.d):
            e = np.zeros(model.d)
            e[m] = step
            fd = (model.drift(x + e, th) - model.drift(x - e, th)) / (2.0 * step)
            denom = max(1.0, float(np.max(np.abs(jx[:, m]))))
            worst = max(worst, float(np.max(np.abs(fd - jx[:, m]))) / denom)
        for u in range(model.d_theta):
            e = np.zeros(model.d_theta)
            e[u] = step
            fd = (model.drift(x, th + e) - model.drift(x, th - e)) / (2.0 * step)
            denom = max(1.0, float(np.max(np.abs(jt[:, u]))))
            worst = max(worst, float(np.max(np.abs(fd - jt[:, u]))) / denom)
    return worst
