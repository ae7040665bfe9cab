"""Trajectory-fitting estimation of drift parameters.

The estimator matches an observed path against the noiseless flow in
integrated squared distance,

    Q(theta) = int_0^T |obs_t - X0_t(theta)|^2 dt   (trapezoid in t),

minimised over the closed parameter box by a coarse grid pass followed by a
box-clipped Nelder-Mead refinement.  The same discrete convolution that
solves the flow also produces the curvature (information) matrix and the
small-noise limit sample used to check asymptotic normality.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deterministic import DetPath, require_same_grid, solve_x0, solve_y0
from .errors import (
    DegenerateFitError,
    DivergenceError,
    DomainError,
    SingularMatrixError,
)
from .kernels import DriftWeights, GridSpec, KernelSpec, drift_weights
from .models import ModelSpec
from .stochastic import NoiseStream, kernel_noise_convolution, simulate_z0

INTERIOR_MARGIN = 1e-9
FISHER_DET_FLOOR = 1e-10


def trapezoid_weights(grid: GridSpec) -> np.ndarray:
    """Node weights of the composite trapezoid rule on the grid."""
    tau = np.full(grid.steps + 1, grid.h)
    tau[0] = grid.h / 2.0
    tau[-1] = grid.h / 2.0
    return tau


def _observed_values(obs) -> tuple[GridSpec, np.ndarray]:
    if not hasattr(obs, "grid") or not hasattr(obs, "values"):
        raise DomainError("observations must expose .grid and .values")
    return obs.grid, np.asarray(obs.values, dtype=float)


@dataclass(frozen=True)
class ContrastValue:
    value: float
    theta: np.ndarray


def contrast(
    obs,
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    grid: GridSpec,
    weights: DriftWeights | None = None,
) -> ContrastValue:
    """Integrated squared distance between obs and the flow at theta."""
    ogrid, ovals = _observed_values(obs)
    require_same_grid(ogrid, grid)
    path = solve_x0(model, theta, spec, grid, weights=weights)
    diff = ovals - path.values
    tau = trapezoid_weights(grid)
    val = float(tau @ np.einsum("td,td->t", diff, diff))
    return ContrastValue(value=val, theta=path.theta)


def contrast_gradient(
    obs,
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    grid: GridSpec,
    weights: DriftWeights | None = None,
) -> np.ndarray:
    """Exact gradient of the discrete contrast:
    -2 int (obs - X0(theta))^T Y0(theta) dt."""
    ogrid, ovals = _observed_values(obs)
    require_same_grid(ogrid, grid)
    if weights is None:
        weights = drift_weights(spec, grid)
    path = solve_x0(model, theta, spec, grid, weights=weights)
    sens = solve_y0(model, theta, spec, grid, base=path, weights=weights)
    diff = ovals - path.values
    tau = trapezoid_weights(grid)
    return -2.0 * np.einsum("t,td,tdu->u", tau, diff, sens.values)


# ---------------------------------------------------------------------------
# two-stage minimiser
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateOptions:
    grid_points: int = 11          # stage-1 nodes per box axis
    max_iterations: int = 500      # stage-2 cap
    diameter_tol: float = 1e-6     # stage-2 stop: simplex diameter below tol * box diameter
    init_step: float = 0.05        # initial simplex leg, fraction of box width
    boundary_margin: float = 1e-9  # distance at which the boundary flag trips

    def __post_init__(self) -> None:
        if int(self.grid_points) != self.grid_points or self.grid_points < 2:
            raise DomainError(f"grid_points must be an integer >= 2, got {self.grid_points!r}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise DomainError(f"max_iterations must be a positive integer, got {self.max_iterations!r}")
        for name in ("diameter_tol", "init_step", "boundary_margin"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")


@dataclass(frozen=True)
class EstimationResult:
    theta_hat: np.ndarray
    q_min: float
    evaluations: int
    converged: bool
    boundary_hit: bool
    stage_trace: dict = field(repr=False)


def _lex_less(a: np.ndarray, b: np.ndarray) -> bool:
    for x, y in zip(a, b):
        if x != y:
            return x < y
    return False


def estimate(
    obs,
    model: ModelSpec,
    spec: KernelSpec,
    grid: GridSpec,
    options: EstimateOptions | None = None,
) -> EstimationResult:
    """Minimise the contrast over the parameter box.

    Stage 1 evaluates a uniform grid (``grid_points`` per axis, box corners
    included) and keeps the best node, breaking exact ties toward the
    lexicographically smallest parameter so the result does not depend on
    enumeration order.  Stage 2 runs Nelder-Mead from that node with every
    proposed vertex clipped into the box, stopping once the simplex diameter
    drops below ``diameter_tol`` times the box diameter or the iteration cap
    is reached.
    """
    opts = options or EstimateOptions()
    if opts.grid_points < 2:
        raise DomainError("stage-1 grid needs at least 2 points per axis")
    ogrid, _ = _observed_values(obs)
    require_same_grid(ogrid, grid)
    weights = drift_weights(spec, grid)
    domain = model.domain

    evaluations = 0

    def q_of(th: np.ndarray) -> float:
        # a candidate whose flow blows up cannot be the minimiser
        nonlocal evaluations
        evaluations += 1
        try:
            return contrast(obs, model, th, spec, grid, weights=weights).value
        except DivergenceError:
            return math.inf

    # stage 1: coarse grid, content-based tie-break
    axes = [
        np.linspace(domain.lower[k], domain.upper[k], opts.grid_points)
        for k in range(domain.dim)
    ]
    best_theta = None
    best_q = math.inf
    for point in itertools.product(*axes):
        th = np.array(point)
        q = q_of(th)
        if (
            best_theta is None
            or q < best_q
            or (q == best_q and _lex_less(th, best_theta))
        ):
            best_q = q
            best_theta = th
    coarse = (best_theta.copy(), best_q)

    # stage 2: box-clipped Nelder-Mead
    theta_hat, q_min, iters, converged, refine_trace = _nelder_mead_box(
        q_of, best_theta, best_q, domain, opts
    )

    boundary = domain.edge_distance(theta_hat) <= opts.boundary_margin
    return EstimationResult(
        theta_hat=theta_hat,
        q_min=q_min,
        evaluations=evaluations,
        converged=converged,
        boundary_hit=boundary,
        stage_trace={
            "coarse_theta": coarse[0],
            "coarse_q": coarse[1],
            "iterations": iters,
            "refine": refine_trace,
        },
    )


def _nelder_mead_box(f, x0, f0, domain, opts: EstimateOptions):
    """Nelder-Mead restricted to a box by clipping every proposal.

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 1/2, 1/2).  Returns (x_best, f_best, iterations, converged, trace).
    """
    dim = domain.dim
    clip = domain.project
    tol = opts.diameter_tol * domain.diameter

    verts = [np.asarray(x0, dtype=float)]
    fvals = [f0]
    for k in range(dim):
        step = opts.init_step * domain.widths[k]
        leg = verts[0].copy()
        # step inward when the start sits against the upper face
        leg[k] = leg[k] + step if leg[k] + step <= domain.upper[k] else leg[k] - step
        leg = clip(leg)
        verts.append(leg)
        fvals.append(f(leg))

    trace = []
    iterations = 0
    converged = False
    while iterations < opts.max_iterations:
        order = sorted(range(dim + 1), key=lambda i: fvals[i])
        verts = [verts[i] for i in order]
        fvals = [fvals[i] for i in order]
        diameter = max(
            float(np.linalg.norm(a - b))
            for a, b in itertools.combinations(verts, 2)
        )
        trace.append((fvals[0], diameter))
        if diameter < tol:
            converged = True
            break
        iterations += 1

        centroid = np.mean(verts[:-1], axis=0)
        worst = verts[-1]
        refl = clip(centroid + (centroid - worst))
        f_refl = f(refl)
        if f_refl < fvals[0]:
            expd = clip(centroid + 2.0 * (centroid - worst))
            f_expd = f(expd)
            if f_expd < f_refl:
                verts[-1], fvals[-1] = expd, f_expd
            else:
                verts[-1], fvals[-1] = refl, f_refl
        elif f_refl < fvals[-2]:
            verts[-1], fvals[-1] = refl, f_refl
        else:
            if f_refl < fvals[-1]:
                contr = clip(centroid + 0.5 * (refl - centroid))
            else:
                contr = clip(centroid + 0.5 * (worst - centroid))
            f_contr = f(contr)
            if f_contr < min(f_refl, fvals[-1]):
                verts[-1], fvals[-1] = contr, f_contr
            else:
                for i in range(1, dim + 1):
                    verts[i] = clip(verts[0] + 0.5 * (verts[i] - verts[0]))
                    fvals[i] = f(verts[i])

    order = sorted(range(dim + 1), key=lambda i: fvals[i])
    best = order[0]
    return verts[best], fvals[best], iterations, converged, trace


# ---------------------------------------------------------------------------
# curvature matrix and limit sample
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FisherMatrix:
    theta: np.ndarray
    matrix: np.ndarray
    det: float


def _require_interior(model: ModelSpec, theta) -> np.ndarray:
    th = model.check_theta(theta)
    if not model.domain.is_interior(th, margin=INTERIOR_MARGIN):
        raise DomainError(
            f"theta {th.tolist()} must lie in the interior of the box "
            f"(margin {INTERIOR_MARGIN:g})"
        )
    return th


def _kernel_smoothed_dtheta(
    model: ModelSpec,
    theta: np.ndarray,
    spec: KernelSpec,
    grid: GridSpec,
    weights: DriftWeights,
) -> tuple[DetPath, np.ndarray]:
    """g_u(t_i) = sum_{j<i} w[i-j] d/dtheta_u [b(X0_j(theta), theta)]: the
    kernel-smoothed drift derivative along the noiseless flow.  Identical to
    the first sensitivity by construction, but computed as written."""
    base = solve_x0(model, theta, spec, grid, weights=weights)
    sens = solve_y0(model, theta, spec, grid, base=base, weights=weights)
    n = grid.steps
    dbu = np.empty((n, model.d, model.d_theta))
    for j in range(n):
        xj = base.values[j]
        dbu[j] = model.drift_grad_x(xj, theta) @ sens.values[j] + model.drift_grad_theta(
            xj, theta
        )
    g = np.zeros((n + 1, model.d, model.d_theta))
    rev = weights.reversed_lag
    for i in range(1, n + 1):
        g[i] = np.tensordot(rev[n - i :], dbu[:i], axes=1)
    return base, g


def fisher_matrix(
    model: ModelSpec,
    theta,
    spec: KernelSpec,
    grid: GridSpec,
    weights: DriftWeights | None = None,
) -> FisherMatrix:
    """Curvature matrix 2 int g_u(t)^T g_v(t) dt of the noiseless contrast.

    Symmetrised after assembly; positive semidefinite by construction.
    """
    th = _require_interior(model, theta)
    if weights is None:
        weights = drift_weights(spec, grid)
    _, g = _kernel_smoothed_dtheta(model, th, spec, grid, weights)
    tau = trapezoid_weights(grid)
    mat = 2.0 * np.einsum("t,tdu,tdv->uv", tau, g, g)
    mat = 0.5 * (mat + mat.T)
    return FisherMatrix(theta=th, matrix=mat, det=float(np.linalg.det(mat)))


@dataclass(frozen=True)
class LimitSample:
    theta_star: np.ndarray
    qdot_drift: np.ndarray   # linearised-state contribution
    qdot_noise: np.ndarray   # direct noise contribution
    value: np.ndarray        # -J^{-1} (qdot_drift + qdot_noise)


def limit_variable(
    model: ModelSpec,
    theta_star,
    spec: KernelSpec,
    grid: GridSpec,
    noise: NoiseStream,
    weights: DriftWeights | None = None,
) -> LimitSample:
    """One draw of the small-noise limit of eps^{-1} (theta_hat - theta*).

    Built from the same increments as the coupled noisy simulation: with
    eta_u the kernel-smoothed drift derivative at theta*,

        qd_u = -2 int (int K grad_x b Z0)^T eta_u dt
        qn_u = -2 int (int (K/h) a(X0) dB)^T eta_u dt
        value = -J(theta*)^{-1} (qd + qn).
    """
    th = _require_interior(model, theta_star)
    if weights is None:
        weights = drift_weights(spec, grid)
    base, g = _kernel_smoothed_dtheta(model, th, spec, grid, weights)
    tau = trapezoid_weights(grid)
    fisher = 2.0 * np.einsum("t,tdu,tdv->uv", tau, g, g)
    fisher = 0.5 * (fisher + fisher.T)
    det = float(np.linalg.det(fisher))
    if abs(det) < FISHER_DET_FLOOR:
        raise SingularMatrixError(
            f"curvature matrix is numerically singular (det = {det:.3e})"
        )

    expansion = simulate_z0(model, th, spec, grid, noise, base=base, weights=weights)
    n = grid.steps
    rev = weights.reversed_lag
    fvals = np.empty((n, model.d))
    for j in range(n):
        fvals[j] = model.drift_grad_x(base.values[j], th) @ expansion.values[j]
    smoothed_z = np.zeros((n + 1, model.d))
    for i in range(1, n + 1):
        smoothed_z[i] = rev[n - i :] @ fvals[:i]

    forcing = kernel_noise_convolution(model, base, spec, grid, noise, weights=weights)

    qdot_drift = -2.0 * np.einsum("t,td,tdu->u", tau, smoothed_z, g)
    qdot_noise = -2.0 * np.einsum("t,td,tdu->u", tau, forcing, g)
    value = -np.linalg.solve(fisher, qdot_drift + qdot_noise)
    return LimitSample(
        theta_star=th, qdot_drift=qdot_drift, qdot_noise=qdot_noise, value=value
    )


# ---------------------------------------------------------------------------
# identifiability scan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RayFit:
    direction: np.ndarray
    exponent: float
    envelope_const: float


@dataclass(frozen=True)
class IdentReport:
    """Local identifiability geometry around theta*.

    ``separation`` holds int |b(X0(theta)) - b(X0(theta*))|^2 dt per scan
    point, ``contrast_floor`` the noiseless contrast at the same points.
    Exponents are least-squares slopes in log radius; the constants are
    envelope constants, i.e. the largest value for which
    quantity >= const * radius**exponent holds at every scan point, so the
    dominance inequality is tight at one grid point and satisfied at all.
    """

    theta_star: np.ndarray
    directions: np.ndarray          # (n_rays, d_theta), unit vectors
    radii: np.ndarray               # (n_radii,)
    separation: np.ndarray          # (n_rays, n_radii)
    contrast_floor: np.ndarray      # (n_rays, n_radii)
    rho_hat: float                  # pooled exponent of `separation`
    c_hat: float
    rho_prime_hat: float            # pooled exponent of `contrast_floor`
    c_prime_hat: float
    per_ray: tuple                  # RayFit per direction (separation fits)


def _default_directions(d_theta: int) -> np.ndarray:
    dirs = []
    for k in range(d_theta):
        e = np.zeros(d_theta)
        e[k] = 1.0
        dirs.append(e.copy())
        dirs.append(-e)
    if d_theta > 1:
        for signs in itertools.product((1.0, -1.0), repeat=d_theta):
            v = np.array(signs) / math.sqrt(d_theta)
            dirs.append(v)
    return np.array(dirs)


def identifiability_scan(
    model: ModelSpec,
    theta_star,
    spec: KernelSpec,
    grid: GridSpec,
    radii: Sequence[float],
    directions: np.ndarray | None = None,
) -> IdentReport:
    """Probe the growth of drift separation and contrast away from theta*.

    Scans theta* + r * v over the given radii and rays, fits pooled log-log
    exponents, and extracts envelope constants making the lower bounds exact
    on the grid.  Rays must stay inside the parameter box.
    """
    th = _require_interior(model, theta_star)
    rad = np.asarray(list(radii), dtype=float)
    if rad.ndim != 1 or rad.size < 3:
        raise DomainError("need at least 3 scan radii")
    if np.any(rad <= 0.0) or np.any(np.diff(rad) <= 0.0):
        raise DomainError("radii must be positive and strictly increasing")
    dirs = _default_directions(model.d_theta) if directions is None else np.asarray(
        directions, dtype=float
    )
    if dirs.ndim != 2 or dirs.shape[1] != model.d_theta:
        raise DomainError("directions must have shape (n_rays, d_theta)")
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("zero-length scan direction")
    dirs = dirs / norms[:, None]

    weights = drift_weights(spec, grid)
    base = solve_x0(model, th, spec, grid, weights=weights)
    n = grid.steps
    bstar = np.empty((n + 1, model.d))
    for t in range(n + 1):
        bstar[t] = model.drift(base.values[t], th)
    tau = trapezoid_weights(grid)

    sep = np.empty((dirs.shape[0], rad.size))
    floor = np.empty_like(sep)
    for a, v in enumerate(dirs):
        for b, r in enumerate(rad):
            theta = th + r * v
            if not model.domain.contains(theta):
                raise DomainError(
                    f"scan point {theta.tolist()} leaves the parameter box; "
                    "shrink the radii or the ray set"
                )
            path = solve_x0(model, theta, spec, grid, weights=weights)
            bvals = np.empty((n + 1, model.d))
            for t in range(n + 1):
                bvals[t] = model.drift(path.values[t], theta)
            dbv = bvals - bstar
            dxv = path.values - base.values
            sep[a, b] = float(tau @ np.einsum("td,td->t", dbv, dbv))
            floor[a, b] = float(tau @ np.einsum("td,td->t", dxv, dxv))

    if np.any(sep == 0.0) or np.any(floor == 0.0):
        raise DegenerateFitError(
            "drift separation vanished at a scan point off theta*; "
            "the family is not identifiable along some ray"
        )

    log_r = np.log(rad)
    pooled_x = np.tile(log_r, dirs.shape[0])

    def pooled_fit(values: np.ndarray) -> tuple[float, float]:
        slope = float(np.polyfit(pooled_x, np.log(values.ravel()), 1)[0])
        envelope = float(np.min(values / np.power(rad, slope)[None, :]))
        return slope, envelope

    rho_hat, c_hat = pooled_fit(sep)
    rho_prime, c_prime = pooled_fit(floor)
    per_ray = []
    for a, v in enumerate(dirs):
        s = float(np.polyfit(log_r, np.log(sep[a]), 1)[0])
        per_ray.append(
            RayFit(
                direction=v,
                exponent=s,
                envelope_const=float(np.min(sep[a] / np.power(rad, s))),
            )
        )
    return IdentReport(
        theta_star=th,
        directions=dirs,
        radii=rad,
        separation=sep,
        contrast_floor=floor,
        rho_hat=rho_hat,
        c_hat=c_hat,
        rho_prime_hat=rho_prime,
        c_prime_hat=c_prime,
        per_ray=tuple(per_ray),
    )
