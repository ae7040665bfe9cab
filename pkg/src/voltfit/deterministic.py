"""Noiseless Volterra flow and its parameter sensitivities.

The flow solves X_t = x0 + integral of K(t - s) b(X_s, theta) ds with the
singular kernel handled by product integration: the kernel mass of each
subinterval is exact, the drift is frozen at the left node.  The update

    X_{t_i} = x0 + sum_{j < i} w[i - j] * b(X_{t_j}, theta)

is explicit, and because the sensitivity recursions below are the exact
theta-derivatives of this discrete map, finite differences of the solver
match them to truncation error at any resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .errors import DivergenceError, DomainError, GridMismatchError
from .kernels import DriftWeights, GridSpec, KernelSpec, drift_weights
from .models import ModelSpec, eval_drift_hess

DEFAULT_BLOWUP = 1e8


@dataclass(frozen=True)
class DetPath:
    """Noiseless solution on a grid; values has shape (steps + 1, d)."""

    grid: GridSpec
    theta: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SensitivityPath:
    """First parameter sensitivity; values has shape (steps + 1, d, d_theta)."""

    grid: GridSpec
    theta: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SecondSensitivityPath:
    """Second parameter sensitivity; values (steps + 1, d, d_theta, d_theta)."""

    grid: GridSpec
    theta: np.ndarray
    values: np.ndarray


def require_same_grid(a: GridSpec, b: GridSpec) -> None:
    if a.steps != b.steps or a.horizon != b.horizon:
        raise GridMismatchError(
            f"grids differ: ({a.horizon}, {a.steps}) vs ({b.horizon}, {b.steps})"
        )


def solve_x0(
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    grid: GridSpec,
    weights: DriftWeights | None = None,
    blowup: float = DEFAULT_BLOWUP,
) -> DetPath:
    """Explicit product-integration solve of the noiseless flow.

    ``weights`` may be passed to reuse a precomputed table across many solves
    on the same grid (the estimator's inner loop does).  Raises
    DivergenceError as soon as the state norm exceeds ``blowup``.
    """
    th = model.check_theta(theta)
    if weights is None:
        weights = drift_weights(spec, grid)
    else:
        require_same_grid(weights.grid, grid)
    n = grid.steps
    rev = weights.reversed_lag
    x = np.empty((n + 1, model.d))
    x[0] = model.x0
    bvals = np.empty((n, model.d))
    for i in range(1, n + 1):
        bvals[i - 1] = model.drift(x[i - 1], th)
        xi = model.x0 + rev[n - i :] @ bvals[:i]
        if not np.all(np.isfinite(xi)) or np.linalg.norm(xi) > blowup:
            raise DivergenceError(
                f"noiseless path left the stability region at step {i} "
                f"(|x| > {blowup:g})"
            )
        x[i] = xi
    return DetPath(grid=grid, theta=th, values=x)


def solve_y0(
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    grid: GridSpec,
    base: DetPath | None = None,
    weights: DriftWeights | None = None,
) -> SensitivityPath:
    """First sensitivity: the exact theta-gradient of the discrete flow.

    Y_{t_i} = sum_{j<i} w[i-j] (grad_x b(X_j) Y_j + grad_theta b(X_j)),
    starting from Y_0 = 0.
    """
    th = model.check_theta(theta)
    if weights is None:
        weights = drift_weights(spec, grid)
    if base is None:
        base = solve_x0(model, th, spec, grid, weights=weights)
    require_same_grid(base.grid, grid)
    n = grid.steps
    rev = weights.reversed_lag
    y = np.zeros((n + 1, model.d, model.d_theta))
    fvals = np.empty((n, model.d, model.d_theta))
    for i in range(1, n + 1):
        xj = base.values[i - 1]
        fvals[i - 1] = model.drift_grad_x(xj, th) @ y[i - 1] + model.drift_grad_theta(
            xj, th
        )
        y[i] = np.tensordot(rev[n - i :], fvals[:i], axes=1)
    return SensitivityPath(grid=grid, theta=th, values=y)


def solve_second_sensitivity(
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    grid: GridSpec,
    base: DetPath | None = None,
    first: SensitivityPath | None = None,
    weights: DriftWeights | None = None,
) -> SecondSensitivityPath:
    """Second sensitivity, obtained by differentiating the Y recursion again.

    Needs the model's second-derivative oracle (CapabilityError otherwise).
    """
    th = model.check_theta(theta)
    if weights is None:
        weights = drift_weights(spec, grid)
    if base is None:
        base = solve_x0(model, th, spec, grid, weights=weights)
    if first is None:
        first = solve_y0(model, th, spec, grid, base=base, weights=weights)
    require_same_grid(base.grid, grid)
    require_same_grid(first.grid, grid)
    n = grid.steps
    rev = weights.reversed_lag
    dt = model.d_theta
    s = np.zeros((n + 1, model.d, dt, dt))
    fvals = np.empty((n, model.d, dt, dt))
    for i in range(1, n + 1):
        xj = base.values[i - 1]
        yj = first.values[i - 1]
        hxx, hxt, htt = eval_drift_hess(model, xj, th)
        jx = np.asarray(model.drift_grad_x(xj, th), dtype=float)
        term = np.einsum("amp,mu,pv->auv", hxx, yj, yj)
        term += np.einsum("amv,mu->auv", hxt, yj)
        term += np.einsum("apu,pv->auv", hxt, yj)
        term += htt
        term += np.einsum("am,muv->auv", jx, s[i - 1])
        fvals[i - 1] = term
        s[i] = np.tensordot(rev[n - i :], fvals[:i], axes=1)
    return SecondSensitivityPath(grid=grid, theta=th, values=s)


@dataclass(frozen=True)
class ConvergenceReport:
    """Successive-refinement comparison of the noiseless solver."""

    steps: tuple
    sup_errors: tuple   # sup over shared nodes of |X_fine - X_coarse|, len = len(steps)-1
    fitted_order: float


def self_convergence(
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    horizon: float,
    step_ladder: Sequence[int],
) -> ConvergenceReport:
    """Solve on each grid of the ladder and compare successive resolutions at
    the coarser grid's nodes.  Every ladder entry must divide the next."""
    ladder = [int(n) for n in step_ladder]
    if len(ladder) < 2:
        raise DomainError("step ladder needs at least two resolutions")
    for a, b in zip(ladder, ladder[1:]):
        if b % a != 0 or b <= a:
            raise DomainError("each ladder entry must strictly divide the next")
    paths = [
        solve_x0(model, theta, spec, GridSpec(horizon, n)).values for n in ladder
    ]
    errs = []
    for (na, pa), (nb, pb) in zip(zip(ladder, paths), zip(ladder[1:], paths[1:])):
        stride = nb // na
        errs.append(float(np.max(np.abs(pb[::stride] - pa))))
    hs = [horizon / n for n in ladder[:-1]]
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0]) if len(errs) > 1 else math.nan
    return ConvergenceReport(
        steps=tuple(ladder), sup_errors=tuple(errs), fitted_order=order
    )


def export_csv(path: DetPath, dest: TextIO) -> None:
    """Write a path as delimited text: header t,x_1..x_d, full precision."""
    d = path.values.shape[1]
    header = "t," + ",".join(f"x_{k + 1}" for k in range(d))
    dest.write(header + "\n")
    nodes = path.grid.nodes()
    for t, row in zip(nodes, path.values):
        dest.write("%.17g" % t)
        for v in row:
            dest.write(",%.17g" % v)
        dest.write("\n")
