"""Command-line interface.

Exit codes: 0 on success, 1 on validation/usage errors (bad flags, bad
config, domain errors), 2 when a run completes but trips an experiment
threshold (too many quarantined replicates).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ExperimentConfig, apply_overrides, load_config
from .deterministic import export_csv, solve_x0
from .errors import VoltfitError
from .estimators import estimate as run_estimate
from .estimators import EstimateOptions
from .experiments import (
    run_ident_scan,
    run_kernel_check,
    run_mc_consistency,
    run_normality,
    run_solver_convergence,
)
from .kernels import GridSpec
from .reporting import path_figure, write_keyvalue, write_manifest
from .stochastic import make_noise, simulate_xeps

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_THRESHOLD = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; 2 is the threshold code here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--alpha", type=float, help="kernel roughness in (0, 1/2)")
    p.add_argument("--T", type=float, dest="horizon", help="time horizon")
    p.add_argument("--n", type=int, help="grid steps")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--workers", type=int, help="parallel worker processes")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="voltfit",
        description="Drift estimation for rough Volterra dynamics in the small-noise regime",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one noisy path at theta*")
    p.add_argument("--epsilon", type=float, help="noise level in [0, 1]")
    p.add_argument("--replicate", type=int, help="replicate id (keys the noise)")
    _add_common(p)

    p = sub.add_parser("solve-det", help="solve the noiseless flow at theta*")
    _add_common(p)

    p = sub.add_parser("estimate", help="simulate (or load) a path and re-estimate theta")
    p.add_argument("--epsilon", type=float, help="noise level in [0, 1]")
    p.add_argument("--replicate", type=int, help="replicate id (keys the noise)")
    p.add_argument("--obs", help="path CSV to estimate from (default: simulate internally)")
    _add_common(p)

    p = sub.add_parser("mc-rate", help="replicated consistency-rate study")
    _add_common(p)

    p = sub.add_parser("normality", help="coupled limit-distribution study")
    _add_common(p)

    p = sub.add_parser("kernel-check", help="weight and companion-kernel audits")
    _add_common(p)

    p = sub.add_parser("solver-convergence", help="noiseless solver convergence audit")
    _add_common(p)

    p = sub.add_parser("ident-scan", help="identifiability scan around theta*")
    _add_common(p)

    return parser


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {
        name: getattr(args, name, None)
        for name in ("seed", "alpha", "horizon", "n", "out_dir", "workers",
                     "epsilon", "replicate")
    }
    return apply_overrides(cfg, **overrides).validate()


def _load_observation(path: str):
    """Read a path CSV (t, x_1..x_d) back into grid + values."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    t = np.asarray(data[names[0]], dtype=float)
    values = np.column_stack([data[c] for c in names[1:]]).astype(float)
    grid = GridSpec(horizon=float(t[-1]), steps=len(t) - 1)

    class _Obs:
        pass

    obs = _Obs()
    obs.grid = grid
    obs.values = values
    return obs, grid


def _cmd_simulate(cfg: ExperimentConfig) -> int:
    spec, grid, model = cfg.build_spec(), cfg.build_grid(), cfg.build_model()
    noise = make_noise(cfg.seed, cfg.replicate, grid, model.r)
    path = simulate_xeps(model, list(cfg.theta_star), cfg.epsilon, spec, grid, noise)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "path.csv"), "w", encoding="utf-8", newline="\n") as fh:
        export_csv(path, fh)
    write_manifest(out, cfg, "simulate", epsilon=cfg.epsilon, replicate=cfg.replicate)
    path_figure(
        os.path.join(out, "path.png"),
        grid.nodes(),
        path.values,
        title=f"simulated path (eps = {cfg.epsilon:g})",
    )
    print(os.path.join(out, "path.csv"))
    return EXIT_OK


def _cmd_solve_det(cfg: ExperimentConfig) -> int:
    spec, grid, model = cfg.build_spec(), cfg.build_grid(), cfg.build_model()
    path = solve_x0(model, list(cfg.theta_star), spec, grid)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "path.csv"), "w", encoding="utf-8", newline="\n") as fh:
        export_csv(path, fh)
    write_manifest(out, cfg, "solve-det")
    path_figure(os.path.join(out, "path.png"), grid.nodes(), path.values,
                title="noiseless flow")
    print(os.path.join(out, "path.csv"))
    return EXIT_OK


def _cmd_estimate(cfg: ExperimentConfig, obs_path: str | None) -> int:
    spec, model = cfg.build_spec(), cfg.build_model()
    if obs_path is None:
        grid = cfg.build_grid()
        noise = make_noise(cfg.seed, cfg.replicate, grid, model.r)
        obs = simulate_xeps(model, list(cfg.theta_star), cfg.epsilon, spec, grid, noise)
    else:
        obs, grid = _load_observation(obs_path)
    result = run_estimate(
        obs, model, spec, grid, options=EstimateOptions(grid_points=cfg.theta_grid_points)
    )
    out = cfg.out_dir
    report = {
        "theta_hat": " ".join("%.17g" % v for v in result.theta_hat),
        "q_min": result.q_min,
        "evaluations": result.evaluations,
        "converged": result.converged,
        "boundary_hit": result.boundary_hit,
        "coarse_theta": " ".join("%.17g" % v for v in result.stage_trace["coarse_theta"]),
        "coarse_q": result.stage_trace["coarse_q"],
        "iterations": result.stage_trace["iterations"],
    }
    write_keyvalue(os.path.join(out, "estimate.txt"), report)
    write_manifest(out, cfg, "estimate", epsilon=cfg.epsilon, replicate=cfg.replicate,
                   obs=obs_path or "internal")
    for key, value in report.items():
        print(f"{key} = {value}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "simulate":
            return _cmd_simulate(cfg)
        if args.command == "solve-det":
            return _cmd_solve_det(cfg)
        if args.command == "estimate":
            return _cmd_estimate(cfg, args.obs)
        if args.command == "mc-rate":
            report = run_mc_consistency(cfg)
            print(f"slope = {report.slope!r}  failures = {len(report.failures)}")
            return EXIT_THRESHOLD if report.failed else EXIT_OK
        if args.command == "normality":
            report = run_normality(cfg)
            print(f"decay_slope = {report.decay_slope!r}  failures = {len(report.failures)}")
            return EXIT_THRESHOLD if report.failed else EXIT_OK
        if args.command == "kernel-check":
            report = run_kernel_check(cfg)
            print(
                "matched_max = "
                + " ".join("%.3e" % v for v in report.matched_max)
                + f"  strictly_decreasing = {report.strictly_decreasing}"
            )
            return EXIT_OK
        if args.command == "solver-convergence":
            report = run_solver_convergence(cfg)
            print(f"analytic_order = {report.analytic_order:.4f}")
            return EXIT_OK
        if args.command == "ident-scan":
            report = run_ident_scan(cfg)
            print(f"rho_hat = {report.rho_hat:.4f}  rho_prime_hat = {report.rho_prime_hat:.4f}")
            return EXIT_OK
        raise AssertionError(f"unhandled command {args.command!r}")
    except VoltfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
