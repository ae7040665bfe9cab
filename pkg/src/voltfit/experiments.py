"""Monte Carlo experiment drivers behind the command-line interface.

Every driver takes an ExperimentConfig, runs a replication study, writes
delimited tables plus a manifest and a rendered figure into the output
directory, and returns a report object the caller (CLI or test) can assert
on.  Replicates are keyed by (epsilon index, replicate id): the noise stream
is a pure function of (seed, replicate id), tasks are merged in key order,
and aggregates are computed from the merged tables, so the worker count
cannot change any output byte.

Per-replicate failures are quarantined: the replicate lands in errors.csv
with its error type and the run carries on, failing only when the failure
fraction exceeds the configured budget.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .deterministic import self_convergence, solve_x0
from .errors import DegenerateFitError, DomainError
from .estimators import EstimateOptions, estimate, identifiability_scan, limit_variable
from .kernels import (
    GridSpec,
    drift_weights,
    kernel_l1,
    mittag_leffler,
    resolvent_convolution_check,
)
from .models import bounded_nonlinear, constant_drift, fractional_linear
from .reporting import (
    ladder_figure,
    rate_figure,
    scan_figure,
    scatter_figure,
    write_csv,
    write_keyvalue,
    write_manifest,
)
from .stochastic import make_noise, simulate_xeps


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float        # in log space: log err ~ intercept + slope * log eps
    residuals: np.ndarray
    slope_stderr: float


def fit_rate(pairs) -> RateFit:
    """Least-squares power-law fit through (scale, error) pairs.

    Needs at least three pairs, all strictly positive; raises DomainError
    otherwise (a vanished error column means there is no rate to fit).
    """
    arr = np.asarray(list(pairs), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise DomainError("fit_rate needs at least 3 (scale, error) pairs")
    if np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
        raise DomainError("fit_rate requires strictly positive finite values")
    x = np.log(arr[:, 0])
    y = np.log(arr[:, 1])
    n = x.size
    xc = x - x.mean()
    slope = float(np.dot(xc, y) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = max(n - 2, 1)
    stderr = float(math.sqrt(float(resid @ resid) / dof / float(xc @ xc)))
    return RateFit(slope=slope, intercept=intercept, residuals=resid, slope_stderr=stderr)


# ---------------------------------------------------------------------------
# task plumbing
# ---------------------------------------------------------------------------


def _run_tasks(worker, tasks, workers: int):
    """Run tasks (tuples of picklable args) serially or in a process pool.

    Results come back in task order whatever the completion order, which is
    what keeps parallel runs byte-identical to serial ones.
    """
    if workers <= 1:
        return [worker(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, *t) for t in tasks]
        return [f.result() for f in futures]


def _estimate_options(cfg: ExperimentConfig) -> EstimateOptions:
    return EstimateOptions(grid_points=cfg.theta_grid_points)


def _consistency_replicate(cfg: ExperimentConfig, eps_idx: int, rep: int):
    """One (epsilon, replicate) cell: simulate at theta*, re-estimate."""
    try:
        spec = cfg.build_spec()
        grid = cfg.build_grid()
        model = cfg.build_model()
        theta_star = np.asarray(cfg.theta_star, dtype=float)
        eps = float(cfg.epsilons[eps_idx])
        noise = make_noise(cfg.seed, rep, grid, model.r)
        path = simulate_xeps(model, theta_star, eps, spec, grid, noise)
        result = estimate(path, model, spec, grid, options=_estimate_options(cfg))
        err = float(np.linalg.norm(result.theta_hat - theta_star))
        return (
            eps_idx,
            rep,
            "ok",
            err,
            result.theta_hat.tolist(),
            result.q_min,
            result.evaluations,
            result.converged,
            result.boundary_hit,
        )
    except Exception as exc:  # quarantined into errors.csv by the driver
        return (eps_idx, rep, type(exc).__name__, str(exc))


@dataclass(frozen=True)
class RateReport:
    """Aggregated replication study of estimator error against epsilon."""

    epsilons: tuple
    replications: int
    mean_errors: np.ndarray
    rms_errors: np.ndarray
    std_errors: np.ndarray     # standard error of each mean
    slope: float
    intercept: float
    slope_stderr: float
    raw_rows: tuple
    raw_path: str | None
    failures: tuple
    failed: bool
    degenerate: bool


def run_mc_consistency(cfg: ExperimentConfig, out_dir: str | None = None) -> RateReport:
    """Replicated simulate-and-estimate study of |theta_hat - theta*|.

    Writes raw.csv (one row per replicate), aggregate.csv, errors.csv, a
    manifest and the log-log rate figure, then fits the error decay rate.
    """
    cfg.validate()
    out = out_dir or cfg.out_dir
    tasks = [
        (cfg, e, r)
        for e in range(len(cfg.epsilons))
        for r in range(cfg.replications)
    ]
    results = _run_tasks(_consistency_replicate, tasks, cfg.workers)
    results.sort(key=lambda row: (row[0], row[1]))

    ok_rows = []
    failures = []
    for row in results:
        if row[2] == "ok":
            ok_rows.append(row)
        else:
            failures.append((cfg.epsilons[row[0]], row[1], row[2], row[3]))

    total = len(tasks)
    failed = len(failures) > cfg.failure_budget * total

    d_theta = len(cfg.theta_star)
    header = (
        ["eps_index", "epsilon", "replicate", "abs_error"]
        + [f"theta_hat_{k + 1}" for k in range(d_theta)]
        + ["q_min", "evaluations", "converged", "boundary_hit"]
    )
    raw_table = [
        [e, cfg.epsilons[e], r, err] + list(th) + [q, ev, conv, bh]
        for (e, r, _tag, err, th, q, ev, conv, bh) in ok_rows
    ]
    raw_path = write_csv(os.path.join(out, "raw.csv"), header, raw_table)
    write_csv(
        os.path.join(out, "errors.csv"),
        ["epsilon", "replicate", "error_type", "message"],
        failures,
    )

    means, rmss, ses = [], [], []
    for e in range(len(cfg.epsilons)):
        errs = np.array([row[3] for row in ok_rows if row[0] == e])
        if errs.size == 0:
            means.append(math.nan)
            rmss.append(math.nan)
            ses.append(math.nan)
            continue
        means.append(float(errs.mean()))
        rmss.append(float(np.sqrt(np.mean(errs ** 2))))
        ses.append(float(errs.std(ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else 0.0)
    means = np.array(means)
    rmss = np.array(rmss)
    ses = np.array(ses)

    degenerate = bool(
        len(cfg.epsilons) < 3 or np.any(~np.isfinite(means)) or np.any(means <= 0.0)
    )
    if degenerate:
        slope, intercept, stderr = math.nan, math.nan, math.nan
    else:
        fit = fit_rate(zip(cfg.epsilons, means))
        slope, intercept, stderr = fit.slope, fit.intercept, fit.slope_stderr

    write_csv(
        os.path.join(out, "aggregate.csv"),
        ["epsilon", "mean_abs_error", "rms_error", "std_error", "replicates_ok"],
        [
            [eps, means[e], rmss[e], ses[e], sum(1 for r in ok_rows if r[0] == e)]
            for e, eps in enumerate(cfg.epsilons)
        ],
    )
    write_manifest(
        out,
        cfg,
        "mc-rate",
        replications=cfg.replications,
        epsilons=" ".join("%.17g" % e for e in cfg.epsilons),
        slope="nan" if degenerate else slope,
        failures=len(failures),
        run_failed=failed,
    )
    if not degenerate:
        rate_figure(
            os.path.join(out, "rate.png"),
            cfg.epsilons,
            means,
            slope,
            intercept,
            ylabel="mean |theta_hat - theta*|",
            title="estimator consistency rate",
            std_errors=ses,
        )
    return RateReport(
        epsilons=tuple(cfg.epsilons),
        replications=cfg.replications,
        mean_errors=means,
        rms_errors=rmss,
        std_errors=ses,
        slope=slope,
        intercept=intercept,
        slope_stderr=stderr,
        raw_rows=tuple(tuple(r) for r in raw_table),
        raw_path=raw_path,
        failures=tuple(failures),
        failed=failed,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# coupled limit study
# ---------------------------------------------------------------------------


def _normality_replicate(cfg: ExperimentConfig, rep: int):
    """One replicate of the coupled study: a limit draw plus the scaled
    estimation error at every epsilon, all from one noise stream."""
    try:
        spec = cfg.build_spec()
        grid = cfg.build_grid()
        model = cfg.build_model()
        theta_star = np.asarray(cfg.theta_star, dtype=float)
        noise = make_noise(cfg.seed, rep, grid, model.r)
        limit = limit_variable(model, theta_star, spec, grid, noise)
        cells = []
        for eps in cfg.epsilons:
            path = simulate_xeps(model, theta_star, float(eps), spec, grid, noise)
            result = estimate(path, model, spec, grid, options=_estimate_options(cfg))
            scaled = (result.theta_hat - theta_star) / float(eps)
            gap = float(np.linalg.norm(scaled - limit.value))
            cells.append((scaled.tolist(), gap))
        return (rep, "ok", limit.value.tolist(), cells)
    except Exception as exc:
        return (rep, type(exc).__name__, str(exc), None)


@dataclass(frozen=True)
class NormalityReport:
    """Coupling of eps^{-1}(theta_hat - theta*) to its limit draw."""

    epsilons: tuple
    replications: int
    mean_gaps: np.ndarray          # mean |scaled error - limit| per epsilon
    decay_slope: float
    decay_stderr: float
    scaled_mean: np.ndarray        # moments at the smallest epsilon
    scaled_cov: np.ndarray
    limit_mean: np.ndarray
    limit_cov: np.ndarray
    samples: int
    failures: tuple
    failed: bool
    degenerate: bool


def run_normality(cfg: ExperimentConfig, out_dir: str | None = None) -> NormalityReport:
    """Couple the scaled estimation error to its small-noise limit draw.

    Per replicate, one noise stream feeds both the limit sample and the
    simulations across the whole epsilon ladder; the gap between scaled
    error and limit then measures the expansion remainder plus optimizer
    tolerance.  Moments at the smallest epsilon are tabulated against the
    limit-sample moments for the normality comparison.
    """
    cfg.validate()
    out = out_dir or cfg.out_dir
    tasks = [(cfg, r) for r in range(cfg.replications)]
    results = _run_tasks(_normality_replicate, tasks, cfg.workers)
    results.sort(key=lambda row: row[0])

    ok = [r for r in results if r[1] == "ok"]
    failures = [(r[0], r[1], r[2]) for r in results if r[1] != "ok"]
    total = len(tasks)
    failed = len(failures) > cfg.failure_budget * total
    if not ok:
        raise DegenerateFitError("every replicate of the coupled study failed")

    d_theta = len(cfg.theta_star)
    n_eps = len(cfg.epsilons)
    limits = np.array([r[2] for r in ok])                      # (R, d_theta)
    scaled = np.array(
        [[cell[0] for cell in r[3]] for r in ok]
    )                                                          # (R, n_eps, d_theta)
    gaps = np.array([[cell[1] for cell in r[3]] for r in ok])  # (R, n_eps)

    header = (
        ["replicate"]
        + [f"limit_{k + 1}" for k in range(d_theta)]
        + [
            f"{name}_{e + 1}"
            for e in range(n_eps)
            for name in (
                [f"scaled_err_{k + 1}_eps" for k in range(d_theta)] + ["gap_eps"]
            )
        ]
    )
    rows = []
    for i, r in enumerate(ok):
        row = [r[0]] + list(limits[i])
        for e in range(n_eps):
            row.extend(scaled[i, e])
            row.append(gaps[i, e])
        rows.append(row)
    write_csv(os.path.join(out, "raw.csv"), header, rows)
    write_csv(
        os.path.join(out, "errors.csv"),
        ["replicate", "error_type", "message"],
        failures,
    )

    mean_gaps = gaps.mean(axis=0)
    degenerate = bool(
        len(cfg.epsilons) < 3
        or np.any(mean_gaps <= 0.0)
        or not np.all(np.isfinite(mean_gaps))
    )
    if degenerate:
        slope, stderr = math.nan, math.nan
    else:
        fit = fit_rate(zip(cfg.epsilons, mean_gaps))
        slope, stderr = fit.slope, fit.slope_stderr

    small = int(np.argmin(np.asarray(cfg.epsilons)))
    sm = scaled[:, small, :]
    scaled_mean = sm.mean(axis=0)
    limit_mean = limits.mean(axis=0)
    if sm.shape[0] > 1:
        scaled_cov = np.atleast_2d(np.cov(sm, rowvar=False))
        limit_cov = np.atleast_2d(np.cov(limits, rowvar=False))
    else:
        scaled_cov = np.zeros((d_theta, d_theta))
        limit_cov = np.zeros((d_theta, d_theta))

    dist_rows = []
    for u in range(d_theta):
        for v in range(d_theta):
            dist_rows.append(
                [u + 1, v + 1, scaled_cov[u, v], limit_cov[u, v]]
            )
    write_csv(
        os.path.join(out, "distribution.csv"),
        ["row", "col", "scaled_error_cov", "limit_cov"],
        dist_rows,
    )
    write_keyvalue(
        os.path.join(out, "report.txt"),
        {
            "replications_ok": len(ok),
            "decay_slope": slope,
            "decay_slope_stderr": stderr,
            "smallest_epsilon": cfg.epsilons[small],
            "scaled_mean": " ".join("%.17g" % v for v in scaled_mean),
            "limit_mean": " ".join("%.17g" % v for v in limit_mean),
            "degenerate": degenerate,
        },
    )
    write_manifest(
        out,
        cfg,
        "normality",
        replications=cfg.replications,
        epsilons=" ".join("%.17g" % e for e in cfg.epsilons),
        failures=len(failures),
        run_failed=failed,
    )
    if not degenerate:
        rate_figure(
            os.path.join(out, "coupling.png"),
            cfg.epsilons,
            mean_gaps,
            slope,
            fit.intercept,
            ylabel="mean |scaled error - limit|",
            title="coupling to the small-noise limit",
        )
        scatter_figure(
            os.path.join(out, "limit_scatter.png"),
            sm[:, 0],
            limits[:, 0],
            title=f"scaled error vs limit draw (eps = {cfg.epsilons[small]:g})",
        )
    return NormalityReport(
        epsilons=tuple(cfg.epsilons),
        replications=cfg.replications,
        mean_gaps=mean_gaps,
        decay_slope=slope,
        decay_stderr=stderr,
        scaled_mean=scaled_mean,
        scaled_cov=scaled_cov,
        limit_mean=limit_mean,
        limit_cov=limit_cov,
        samples=len(ok),
        failures=tuple(failures),
        failed=failed,
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# kernel and solver audits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelCheckReport:
    ladder: tuple
    telescope_ulps: tuple         # worst telescoping error per ladder entry, in ulps
    own_grid_max: tuple           # max |entry - 1| over each grid's own nodes
    matched_max: tuple            # max |entry - 1| at the coarsest grid's nodes
    strictly_decreasing: bool


def run_kernel_check(cfg: ExperimentConfig, out_dir: str | None = None) -> KernelCheckReport:
    """Audit the weight table and the discrete companion-kernel identity.

    The product-integration entries are grid-size invariant at fixed node
    index (power-law homogeneity), so the convergence column compares the
    ladder at the *coarsest grid's physical times*; the own-grid column is
    reported for the absolute tolerance check.
    """
    cfg.validate()
    out = out_dir or cfg.out_dir
    spec = cfg.build_spec()
    ladder = tuple(int(n) for n in cfg.kernel_ladder)
    if len(ladder) < 2 or any(b % ladder[0] for b in ladder):
        raise DomainError("kernel ladder entries must be multiples of the first")

    tel_ulps = []
    own_max = []
    matched_max = []
    eps64 = np.finfo(float).eps
    for n in ladder:
        grid = GridSpec(cfg.horizon, n)
        w = drift_weights(spec, grid)
        # telescoping audit at ~64 node indices (exact summation isolates
        # the weights themselves from accumulation order)
        probes = sorted(set(np.linspace(1, n, 64, dtype=int).tolist()))
        worst = 0.0
        for i in probes:
            t_i = i * grid.h
            closed = kernel_l1(spec, t_i)
            got = math.fsum(w.lag[1 : i + 1].tolist())
            worst = max(worst, abs(got - closed) / (eps64 * closed))
        tel_ulps.append(worst)

        entries = resolvent_convolution_check(spec, grid)
        errs = np.abs(entries - 1.0)
        own_max.append(float(errs.max()))
        stride = n // ladder[0]
        matched_max.append(float(errs[stride - 1 :: stride].max()))

    decreasing = all(a > b for a, b in zip(matched_max, matched_max[1:]))
    write_csv(
        os.path.join(out, "kernel_check.csv"),
        ["steps", "telescope_max_ulp", "conv_own_grid_max_err", "conv_matched_max_err"],
        [
            [n, tel_ulps[k], own_max[k], matched_max[k]]
            for k, n in enumerate(ladder)
        ],
    )
    write_manifest(
        out,
        cfg,
        "kernel-check",
        ladder=" ".join(str(n) for n in ladder),
        strictly_decreasing=decreasing,
    )
    ladder_figure(
        os.path.join(out, "kernel_check.png"),
        ladder,
        matched_max,
        ylabel="max |(L*K)_h - 1| at matched times",
        title="companion-kernel identity under refinement",
    )
    return KernelCheckReport(
        ladder=ladder,
        telescope_ulps=tuple(tel_ulps),
        own_grid_max=tuple(own_max),
        matched_max=tuple(matched_max),
        strictly_decreasing=decreasing,
    )


@dataclass(frozen=True)
class SolverConvergenceReport:
    ladder: tuple
    constant_drift_error: float       # sup error at the finest ladder entry
    analytic_sup_errors: tuple        # fractional relaxation vs series solution
    analytic_order: float
    self_sup_errors: tuple            # bounded-nonlinear successive refinement
    self_order: float
    strictly_decreasing: bool


def run_solver_convergence(
    cfg: ExperimentConfig, out_dir: str | None = None
) -> SolverConvergenceReport:
    """Convergence audit of the noiseless solver.

    Three probes: a constant drift (the scheme integrates it exactly), the
    linear relaxation drift against its series solution, and a nonlinear
    drift compared against its own refinement.
    """
    cfg.validate()
    out = out_dir or cfg.out_dir
    spec = cfg.build_spec()
    ladder = tuple(int(n) for n in cfg.solver_ladder)

    # constant drift: exact at any resolution
    cmodel = constant_drift(0.0, [0.5], [1.5], x0=[0.0])
    cgrid = GridSpec(cfg.horizon, ladder[-1])
    cpath = solve_x0(cmodel, [1.0], spec, cgrid)
    closed = kernel_l1(spec, cgrid.nodes())
    cd_err = float(np.max(np.abs(cpath.values[:, 0] - closed)))

    # linear relaxation vs series solution
    lmodel = fractional_linear(0.0, [0.5], [1.5], x0=1.0, offset=0.0)
    analytic_errors = []
    for n in ladder:
        grid = GridSpec(cfg.horizon, n)
        path = solve_x0(lmodel, [1.0], spec, grid)
        nodes = grid.nodes()
        exact = np.array(
            [mittag_leffler(spec.beta, -(t ** spec.beta)) for t in nodes]
        )
        analytic_errors.append(float(np.max(np.abs(path.values[:, 0] - exact))))
    hs = [cfg.horizon / n for n in ladder]
    a_fit = fit_rate(zip(hs, analytic_errors))

    # nonlinear drift vs its own refinement
    bmodel = bounded_nonlinear(0.0, [0.2, -1.0], [2.0, 1.5], x0=0.0)
    sc = self_convergence(bmodel, [1.0, 0.5], spec, cfg.horizon, ladder)

    decreasing = all(a > b for a, b in zip(analytic_errors, analytic_errors[1:]))
    write_csv(
        os.path.join(out, "solver_convergence.csv"),
        ["steps", "h", "analytic_sup_error", "self_sup_error"],
        [
            [n, hs[k], analytic_errors[k], sc.sup_errors[k - 1] if k else ""]
            for k, n in enumerate(ladder)
        ],
    )
    write_keyvalue(
        os.path.join(out, "report.txt"),
        {
            "constant_drift_sup_error": cd_err,
            "analytic_fitted_order": a_fit.slope,
            "self_convergence_order": sc.fitted_order,
            "strictly_decreasing": decreasing,
        },
    )
    write_manifest(out, cfg, "solver-convergence", ladder=" ".join(map(str, ladder)))
    ladder_figure(
        os.path.join(out, "solver_convergence.png"),
        ladder,
        analytic_errors,
        ylabel="sup |X_h - series solution|",
        title=f"noiseless solver convergence (fitted order {a_fit.slope:.3f})",
    )
    return SolverConvergenceReport(
        ladder=ladder,
        constant_drift_error=cd_err,
        analytic_sup_errors=tuple(analytic_errors),
        analytic_order=a_fit.slope,
        self_sup_errors=sc.sup_errors,
        self_order=sc.fitted_order,
        strictly_decreasing=decreasing,
    )


def run_ident_scan(cfg: ExperimentConfig, out_dir: str | None = None):
    """Identifiability scan of the configured model around theta*."""
    cfg.validate()
    out = out_dir or cfg.out_dir
    spec = cfg.build_spec()
    grid = cfg.build_grid()
    model = cfg.build_model()
    report = identifiability_scan(model, list(cfg.theta_star), spec, grid, cfg.scan_radii)
    rows = []
    for a in range(report.directions.shape[0]):
        for b, r in enumerate(report.radii):
            rows.append(
                [a]
                + list(report.directions[a])
                + [r, report.separation[a, b], report.contrast_floor[a, b]]
            )
    write_csv(
        os.path.join(out, "scan.csv"),
        ["ray"]
        + [f"dir_{k + 1}" for k in range(model.d_theta)]
        + ["radius", "drift_separation", "contrast"],
        rows,
    )
    write_keyvalue(
        os.path.join(out, "report.txt"),
        {
            "rho_hat": report.rho_hat,
            "c_hat": report.c_hat,
            "rho_prime_hat": report.rho_prime_hat,
            "c_prime_hat": report.c_prime_hat,
            "rays": report.directions.shape[0],
        },
    )
    write_manifest(out, cfg, "ident-scan")
    scan_figure(
        os.path.join(out, "scan.png"),
        report.radii,
        report.separation,
        report.contrast_floor,
        report.rho_hat,
        report.rho_prime_hat,
        title="identifiability scan",
    )
    return report
