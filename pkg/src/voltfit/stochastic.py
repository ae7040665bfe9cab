"""Small-noise simulation of the rough Volterra dynamics.

The noisy state solves

    X_t = x0 + eps * int K(t-s) a(X_s) dB_s + int K(t-s) b(X_s, theta*) ds

and is discretised with the same product-integration weights as the
noiseless flow: the drift uses the exact subinterval kernel mass w[k], the
stochastic integral uses the *averaged* kernel w[k] / h against raw Brownian
increments, which keeps the scheme left-point (Ito-consistent) while taming
the kernel singularity at lag one.  The averaged kernel carries an
O(h^(2 alpha)) relative variance bias; Monte Carlo checks against continuous
closed forms must budget for it (the discrete second moment itself is exact
and available in closed form from the weights).

Noise is generated by a counter-based Philox stream keyed on
(seed, replicate_id), with the (step, component) pair addressing positions
inside the block.  Streams for different replicates never overlap and can be
created in any order, on any worker, with identical bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, DomainError, GridMismatchError
from .kernels import DriftWeights, GridSpec, KernelSpec, drift_weights
from .models import ModelSpec

from .deterministic import DEFAULT_BLOWUP, DetPath, require_same_grid, solve_x0


@dataclass(frozen=True)
class NoiseStream:
    """Brownian increments for one replicate; shape (steps, r), variance h.

    ``mean_in_bounds`` records the construction-time sanity check
    |column mean| <= 5 sqrt(h / steps); it is advisory (a fair stream fails
    it about once per 1.7 million columns) and never blocks simulation.
    """

    seed: int
    replicate_id: int
    grid: GridSpec
    increments: np.ndarray
    mean_in_bounds: bool


def make_noise(seed: int, replicate_id: int, grid: GridSpec, r: int) -> NoiseStream:
    """Draw the (steps, r) increment block for one replicate.

    Philox is counter-based: the key is (seed, replicate_id) and the block is
    read from counter zero, so the draw is a pure function of those two
    integers plus the shape.
    """
    if seed < 0 or replicate_id < 0:
        raise DomainError("seed and replicate_id must be nonnegative integers")
    if r < 1:
        raise DomainError("noise dimension r must be positive")
    bitgen = np.random.Philox(key=np.array([seed, replicate_id], dtype=np.uint64))
    rng = np.random.Generator(bitgen)
    inc = rng.standard_normal((grid.steps, r)) * math.sqrt(grid.h)
    inc.setflags(write=False)
    bound = 5.0 * math.sqrt(grid.h / grid.steps)
    ok = bool(np.all(np.abs(inc.mean(axis=0)) <= bound))
    return NoiseStream(
        seed=seed, replicate_id=replicate_id, grid=grid, increments=inc, mean_in_bounds=ok
    )


@dataclass(frozen=True)
class StochPath:
    """Simulated noisy path; values has shape (steps + 1, d)."""

    grid: GridSpec
    epsilon: float
    theta_star: np.ndarray
    values: np.ndarray
    noise: NoiseStream


@dataclass(frozen=True)
class ExpansionPath:
    """First-order noise term of the small-eps expansion; (steps + 1, d)."""

    grid: GridSpec
    theta_star: np.ndarray
    values: np.ndarray


def _check_noise(model: ModelSpec, grid: GridSpec, noise: NoiseStream) -> None:
    require_same_grid(noise.grid, grid)
    if noise.increments.shape != (grid.steps, model.r):
        raise GridMismatchError(
            f"noise block has shape {noise.increments.shape}, "
            f"expected {(grid.steps, model.r)}"
        )


def simulate_xeps(
    model: ModelSpec,
    theta_star,
    epsilon: float,
    spec: KernelSpec,
    grid: GridSpec,
    noise: NoiseStream,
    weights: DriftWeights | None = None,
    blowup: float = DEFAULT_BLOWUP,
) -> StochPath:
    """Left-point averaged-kernel Euler step of the noisy dynamics.

    The drift and noise accumulators are kept separate so that eps = 0
    reproduces the noiseless solver bit for bit, as does a vanishing
    diffusion at any eps.
    """
    th = model.check_theta(theta_star)
    eps = float(epsilon)
    if not (0.0 <= eps <= 1.0):
        raise DomainError(f"epsilon must lie in [0, 1], got {epsilon!r}")
    _check_noise(model, grid, noise)
    if weights is None:
        weights = drift_weights(spec, grid)
    else:
        require_same_grid(weights.grid, grid)
    n = grid.steps
    h = grid.h
    rev = weights.reversed_lag
    db = noise.increments
    x = np.empty((n + 1, model.d))
    x[0] = model.x0
    bvals = np.empty((n, model.d))
    gvals = np.empty((n, model.d))
    for i in range(1, n + 1):
        xj = x[i - 1]
        bvals[i - 1] = model.drift(xj, th)
        gvals[i - 1] = model.diffusion(xj) @ db[i - 1]
        xi = model.x0 + rev[n - i :] @ bvals[:i] + eps * ((rev[n - i :] @ gvals[:i]) / h)
        if not np.all(np.isfinite(xi)) or np.linalg.norm(xi) > blowup:
            raise DivergenceError(
                f"noisy path left the stability region at step {i} (|x| > {blowup:g})"
            )
        x[i] = xi
    return StochPath(grid=grid, epsilon=eps, theta_star=th, values=x, noise=noise)


def kernel_noise_convolution(
    model: ModelSpec,
    base: DetPath,
    spec: KernelSpec,
    grid: GridSpec,
    noise: NoiseStream,
    weights: DriftWeights | None = None,
) -> np.ndarray:
    """Averaged-kernel stochastic convolution along a frozen path:

        M_{t_i} = sum_{j<i} (w[i-j] / h) a(X0_{t_j}) dB_j,   M_0 = 0.

    This is both the forcing term of the expansion process and the noise
    functional entering the limit distribution, so it lives in one place.
    """
    require_same_grid(base.grid, grid)
    _check_noise(model, grid, noise)
    if weights is None:
        weights = drift_weights(spec, grid)
    n = grid.steps
    h = grid.h
    rev = weights.reversed_lag
    db = noise.increments
    gvals = np.empty((n, model.d))
    for j in range(n):
        gvals[j] = model.diffusion(base.values[j]) @ db[j]
    m = np.zeros((n + 1, model.d))
    for i in range(1, n + 1):
        m[i] = (rev[n - i :] @ gvals[:i]) / h
    return m


def simulate_z0(
    model: ModelSpec,
    theta_star,
    spec: KernelSpec,
    grid: GridSpec,
    noise: NoiseStream,
    base: DetPath | None = None,
    weights: DriftWeights | None = None,
) -> ExpansionPath:
    """First-order expansion process around the noiseless flow:

        Z_{t_i} = sum_{j<i} w[i-j] grad_x b(X0_j, theta*) Z_j + M_{t_i},

    driven by the same increments as the noisy path it couples to.
    """
    th = model.check_theta(theta_star)
    if weights is None:
        weights = drift_weights(spec, grid)
    if base is None:
        base = solve_x0(model, th, spec, grid, weights=weights)
    require_same_grid(base.grid, grid)
    forcing = kernel_noise_convolution(model, base, spec, grid, noise, weights=weights)
    n = grid.steps
    rev = weights.reversed_lag
    z = np.zeros((n + 1, model.d))
    fvals = np.empty((n, model.d))
    for i in range(1, n + 1):
        fvals[i - 1] = model.drift_grad_x(base.values[i - 1], th) @ z[i - 1]
        z[i] = rev[n - i :] @ fvals[:i] + forcing[i]
    return ExpansionPath(grid=grid, theta_star=th, values=z)


def expansion_residual(
    noisy: StochPath, base: DetPath, expansion: ExpansionPath
) -> np.ndarray:
    """Second-order residual X^eps - X0 - eps Z0 on the shared grid."""
    require_same_grid(noisy.grid, base.grid)
    require_same_grid(noisy.grid, expansion.grid)
    return noisy.values - base.values - noisy.epsilon * expansion.values


def discrete_noise_variance(
    spec: KernelSpec, grid: GridSpec, weights: DriftWeights | None = None
) -> float:
    """Exact terminal variance of the averaged-kernel stochastic convolution
    for unit diffusion in one dimension: sum_k (w[k]/h)^2 h.

    The continuous counterpart is kernel_l2sq(horizon); the gap between the
    two is the scheme's variance bias and shrinks like h^(2 alpha).
    """
    if weights is None:
        weights = drift_weights(spec, grid)
    w = weights.lag[1:]
    return float(np.dot(w, w) / grid.h)
