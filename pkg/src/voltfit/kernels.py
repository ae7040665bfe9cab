"""Singular power-law convolution kernel: closed forms and quadrature weights.

The kernel is K(u) = u**(alpha - 1/2) / gamma(alpha + 1/2) for u > 0 with
alpha in (0, 1/2), so every path convolved against it picks up a Holder
exponent below 1/2.  Its companion kernel of opposite singularity,
L(u) = u**(-alpha - 1/2) / gamma(1/2 - alpha), satisfies the convolution
identity (L * K)(t) = 1 for all t > 0, which is what makes the discrete
sanity check `resolvent_convolution_check` possible.

All gamma values come from ``math.gamma`` (double precision, correctly
rounded to ~1 ulp on this argument range); the choice is recorded in run
manifests as ``gamma_impl``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OverflowGuardError, ResourceLimitError

GAMMA_IMPL = "math.gamma"

# mittag_leffler rejects positive z with z**(1/beta) above this: the sum is
# dominated by exp(z**(1/beta)) and exp(709) is the double-precision ceiling.
ML_OVERFLOW_EXPONENT = 700.0

_ML_MAX_TERMS = 100000

# cap on per-lag weight storage (O(n) doubles)
MAX_GRID_STEPS = 20_000_000


@dataclass(frozen=True)
class KernelSpec:
    """Roughness parameter of the power-law kernel.

    ``alpha`` must lie strictly inside (0, 1/2); both endpoints are rejected
    because the kernel degenerates there (alpha=1/2 is the flat kernel,
    alpha=0 makes the companion kernel non-integrable).
    """

    alpha: float

    def __post_init__(self) -> None:
        a = float(self.alpha)
        if not (0.0 < a < 0.5) or not math.isfinite(a):
            raise DomainError(f"alpha must lie strictly in (0, 1/2), got {self.alpha!r}")

    @property
    def beta(self) -> float:
        """Order alpha + 1/2 of the associated fractional integral."""
        return self.alpha + 0.5


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid t_i = i * horizon / steps, i = 0..steps."""

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.horizon) and self.horizon > 0.0):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps!r}")

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        # linspace pins both endpoints exactly
        return np.linspace(0.0, self.horizon, self.steps + 1)


def _pos_times(t, name: str, strict: bool) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if strict:
        if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
            raise DomainError(f"{name} requires strictly positive finite times")
    else:
        if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
            raise DomainError(f"{name} requires nonnegative finite times")
    return arr


def _scalar_like(t, value: np.ndarray):
    return float(value) if np.isscalar(t) or np.ndim(t) == 0 else value


def kernel_eval(spec: KernelSpec, u):
    """K(u) = u**(alpha - 1/2) / gamma(alpha + 1/2), u > 0."""
    arr = _pos_times(u, "kernel_eval", strict=True)
    return _scalar_like(u, np.power(arr, spec.alpha - 0.5) / math.gamma(spec.beta))


def resolvent_eval(spec: KernelSpec, u):
    """Companion kernel L(u) = u**(-alpha - 1/2) / gamma(1/2 - alpha), u > 0."""
    arr = _pos_times(u, "resolvent_eval", strict=True)
    return _scalar_like(u, np.power(arr, -spec.alpha - 0.5) / math.gamma(0.5 - spec.alpha))


def kernel_l1(spec: KernelSpec, t):
    """Running L1 mass of K: integral of K over [0, t] = t**beta / gamma(beta + 1)."""
    arr = _pos_times(t, "kernel_l1", strict=False)
    return _scalar_like(t, np.power(arr, spec.beta) / math.gamma(spec.beta + 1.0))


def kernel_l2sq(spec: KernelSpec, t):
    """Squared L2 mass of K over [0, t]: t**(2 alpha) / (2 alpha * gamma(alpha + 1/2)**2)."""
    arr = _pos_times(t, "kernel_l2sq", strict=False)
    denom = 2.0 * spec.alpha * math.gamma(spec.beta) ** 2
    return _scalar_like(t, np.power(arr, 2.0 * spec.alpha) / denom)


def resolvent_l1(spec: KernelSpec, t):
    """Integral of L over [0, t] = t**(1/2 - alpha) / gamma(3/2 - alpha)."""
    arr = _pos_times(t, "resolvent_l1", strict=False)
    return _scalar_like(t, np.power(arr, 0.5 - spec.alpha) / math.gamma(1.5 - spec.alpha))


def mittag_leffler(beta: float, z: float) -> float:
    """One-parameter Mittag-Leffler function: sum_k z**k / gamma(k*beta + 1).

    ``beta`` must lie in (0, 1].  For beta = 1 the series is exactly exp(z)
    and is evaluated that way; the raw series would lose all relative
    accuracy to cancellation already around z = -15.  For beta < 1 the series
    is summed through per-term logs until the current term drops below
    1e-16 of the partial sum *and* the term ratio certifies a geometric tail
    no larger than that, keeping the truncation error well under 1e-12
    relative.  Intended
    argument range is moderate |z| (the estimation routines never leave
    |z| of a few units); positive z with z**(1/beta) > 700 is rejected
    outright since the value would overflow, and deep negative z with
    beta < 1 loses accuracy to cancellation roughly like eps * exp(|z|**(1/beta)).
    """
    beta = float(beta)
    z = float(z)
    if not (0.0 < beta <= 1.0):
        raise DomainError(f"mittag_leffler requires beta in (0, 1], got {beta!r}")
    if not math.isfinite(z):
        raise DomainError(f"mittag_leffler requires finite z, got {z!r}")
    if beta == 1.0:
        if z > ML_OVERFLOW_EXPONENT:
            raise OverflowGuardError(f"mittag_leffler(1, {z}) would overflow")
        return math.exp(z)
    if z == 0.0:
        return 1.0
    if z > 0.0 and z ** (1.0 / beta) > ML_OVERFLOW_EXPONENT:
        raise OverflowGuardError(
            f"mittag_leffler rejected: z**(1/beta) = {z ** (1.0 / beta):.3g} > {ML_OVERFLOW_EXPONENT}"
        )

    log_az = math.log(abs(z))
    negative = z < 0.0
    total = 1.0
    lg_curr = 0.0  # lgamma(k*beta + 1) at current k
    for k in range(1, _ML_MAX_TERMS + 1):
        lg_curr = math.lgamma(k * beta + 1.0)
        mag = math.exp(k * log_az - lg_curr)
        total += -mag if (negative and k % 2 == 1) else mag
        if mag <= 1e-16 * abs(total):
            # geometric-tail certificate: |t_{k+1}/t_k| = |z| * G(k)/G(k+1),
            # decreasing past the peak term, so the tail is geometric
            ratio = math.exp(log_az + lg_curr - math.lgamma((k + 1) * beta + 1.0))
            if ratio < 1.0 and mag * ratio / (1.0 - ratio) <= 1e-16 * abs(total):
                return total
    raise OverflowGuardError(
        f"mittag_leffler series did not converge within {_ML_MAX_TERMS} terms "
        f"(beta={beta}, z={z})"
    )


@dataclass(frozen=True)
class DriftWeights:
    """Product-integration weights for the drift convolution on a uniform grid.

    The weight of node j in the step-i update is the exact kernel mass of the
    subinterval [t_j, t_{j+1}] seen from t_i,

        w[i][j] = ((t_i - t_j)**beta - (t_i - t_{j+1})**beta) / gamma(beta + 1),

    which depends only on the lag k = i - j.  ``lag[k]`` stores that value
    for k = 1..steps (``lag[0]`` is an unused 0.0 so indices read naturally);
    ``reversed_lag`` is the same data back to front so a solver step can take
    a contiguous slice.
    """

    spec: KernelSpec
    grid: GridSpec
    lag: np.ndarray
    reversed_lag: np.ndarray

    def weight(self, i: int, j: int) -> float:
        """w[i][j] for 0 <= j < i <= steps."""
        if not (0 <= j < i <= self.grid.steps):
            raise DomainError(f"weight indices need 0 <= j < i <= steps, got ({i}, {j})")
        return float(self.lag[i - j])


def drift_weights(spec: KernelSpec, grid: GridSpec) -> DriftWeights:
    """Build the per-lag weight table (O(steps) storage).

    The difference k**beta - (k-1)**beta is evaluated as
    k**beta * (-expm1(beta * log1p(-1/k))), which keeps every individual
    weight accurate to a couple of ulps; the naive subtraction loses
    ~k/beta ulps at lag k.
    """
    n = grid.steps
    if n > MAX_GRID_STEPS:
        raise ResourceLimitError(
            f"{n} steps exceeds the weight-table cap of {MAX_GRID_STEPS}"
        )
    beta = spec.beta
    diffs = np.empty(n)
    diffs[0] = 1.0
    if n > 1:
        k = np.arange(2.0, n + 1.0)
        diffs[1:] = np.power(k, beta) * (-np.expm1(beta * np.log1p(-1.0 / k)))
    scale = grid.h ** beta / math.gamma(beta + 1.0)
    lag = np.concatenate(([0.0], diffs * scale))
    lag.setflags(write=False)
    rev = lag[1:][::-1].copy()
    rev.setflags(write=False)
    return DriftWeights(spec=spec, grid=grid, lag=lag, reversed_lag=rev)


def resolvent_convolution_check(spec: KernelSpec, grid: GridSpec) -> np.ndarray:
    """Discrete product-integration approximation of (L * K)(t_i), i = 1..steps.

    The exact convolution is identically 1.  Each entry splits [0, t_i] at
    its midpoint and product-integrates the singular factor on each half
    exactly (through its running integral) while sampling the smooth factor
    at subinterval midpoints.  Entries are invariant under grid refinement
    at fixed node index because both kernels are homogeneous power laws, so
    convergence shows up at fixed *physical* times: refining the grid maps a
    time t to a larger index and the entry there is closer to 1.
    """
    n = grid.steps
    if n < 2:
        raise DomainError("resolvent_convolution_check needs at least 2 steps")
    if n > MAX_GRID_STEPS:
        raise ResourceLimitError(
            f"{n} steps exceeds the convolution-check cap of {MAX_GRID_STEPS}"
        )
    h = grid.h
    beta = spec.beta
    g_k1 = math.gamma(beta + 1.0)
    g_l1 = math.gamma(1.5 - spec.alpha)
    g_k = math.gamma(beta)
    g_l = math.gamma(0.5 - spec.alpha)

    idx = np.arange(0.0, n + 1.0)
    kl1 = np.power(idx * h, beta) / g_k1            # running integral of K at nodes
    ll1 = np.power(idx * h, 0.5 - spec.alpha) / g_l1  # running integral of L at nodes
    d_k = np.diff(kl1)                               # d_k[j]: K mass of [t_j, t_{j+1}]
    d_l = np.diff(ll1)                               # d_l[k-1]: L mass of [(k-1)h, kh]
    mid = (np.arange(1.0, n + 1.0) - 0.5) * h
    l_mid = np.power(mid, -spec.alpha - 0.5) / g_l   # L((k - 1/2) h)
    k_mid = np.power(mid, spec.alpha - 0.5) / g_k    # K((k - 1/2) h)

    out = np.empty(n)
    for i in range(1, n + 1):
        m = i // 2
        if m:
            rev_dk = d_k[m - 1 :: -1]
            rev_dl = d_l[m - 1 :: -1]
            acc = np.dot(l_mid[i - m : i], rev_dk) + np.dot(k_mid[i - m : i], rev_dl)
        else:
            acc = 0.0
        if i % 2 == 1:
            # odd index: the midpoint t_i / 2 bisects a subinterval; finish
            # each half with one extra piece sampled at its own midpoint
            t_q = (m + 0.75) * h
            t_half = (m + 0.5) * h
            acc += (t_q ** (-spec.alpha - 0.5) / g_l) * (t_half ** beta / g_k1 - kl1[m])
            acc += (t_q ** (spec.alpha - 0.5) / g_k) * (
                t_half ** (0.5 - spec.alpha) / g_l1 - ll1[m]
            )
        out[i - 1] = acc
    return out
