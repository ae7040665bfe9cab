"""Delimited output, run manifests, and the figures drawn next to them.

Reproducibility contract: identical config and seed must give bit-identical
delimited files, so floats are always written through one formatter
(17 significant digits, enough to round-trip a double) and nothing
time-dependent goes into a manifest.  Figures are a rendering of the same
numbers for humans; they sit beside the delimited files and carry no data
of their own.
"""

from __future__ import annotations

import os
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .config import ExperimentConfig
from .kernels import GAMMA_IMPL


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(v) for v in row) + "\n")
    return path


def write_keyvalue(path: str, mapping: Mapping[str, object]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in mapping:
            fh.write(f"{key} = {format_cell(mapping[key])}\n")
    return path


def write_manifest(out_dir: str, config: ExperimentConfig, command: str, **extra) -> str:
    """Record what produced the directory: config hash, seed, kernel, grid,
    model family, artifact version, gamma implementation."""
    entries = {
        "artifact": "voltfit",
        "version": __version__,
        "command": command,
        "config_hash": config.content_hash(),
        "seed": config.seed,
        "alpha": config.alpha,
        "horizon": config.horizon,
        "steps": config.n,
        "family": config.family,
        "sigma": config.sigma,
        "theta_star": " ".join(format_cell(v) for v in config.theta_star),
        "gamma_impl": GAMMA_IMPL,
        "workers": config.workers,
    }
    entries.update(extra)
    return write_keyvalue(os.path.join(out_dir, "manifest.txt"), entries)


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def _finish(fig, path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def rate_figure(
    path: str,
    epsilons: Sequence[float],
    errors: Sequence[float],
    slope: float,
    intercept: float,
    ylabel: str,
    title: str,
    std_errors: Sequence[float] | None = None,
) -> str:
    """Log-log error-vs-epsilon plot with the fitted power law overlaid."""
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    if std_errors is not None:
        ax.errorbar(eps, err, yerr=std_errors, fmt="o", capsize=3, label="measured")
    else:
        ax.plot(eps, err, "o", label="measured")
    xs = np.linspace(eps.min(), eps.max(), 50)
    ax.plot(
        xs,
        np.exp(intercept) * xs ** slope,
        "--",
        label=f"fit: slope {slope:.3f}",
    )
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("epsilon")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def ladder_figure(
    path: str,
    steps: Sequence[int],
    errors: Sequence[float],
    ylabel: str,
    title: str,
) -> str:
    """Log-log error-vs-resolution plot for grid ladders."""
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    ax.plot(steps, errors, "o-")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("grid steps")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)


def path_figure(path: str, nodes: np.ndarray, values: np.ndarray, title: str) -> str:
    fig, ax = plt.subplots(figsize=(5.8, 3.8))
    for k in range(values.shape[1]):
        ax.plot(nodes, values[:, k], lw=1.0, label=f"x_{k + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.set_title(title)
    if values.shape[1] > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)


def scan_figure(
    path: str,
    radii: np.ndarray,
    separation: np.ndarray,
    contrast_floor: np.ndarray,
    rho_hat: float,
    rho_prime_hat: float,
    title: str,
) -> str:
    """Per-ray growth of drift separation and contrast with radius."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.8), sharex=True)
    for row in separation:
        ax1.plot(radii, row, "o-", alpha=0.6, lw=0.9)
    ax1.set_title(f"drift separation (pooled slope {rho_hat:.3f})")
    for row in contrast_floor:
        ax2.plot(radii, row, "o-", alpha=0.6, lw=0.9)
    ax2.set_title(f"noiseless contrast (pooled slope {rho_prime_hat:.3f})")
    for ax in (ax1, ax2):
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("radius")
        ax.grid(True, which="both", alpha=0.3)
    fig.suptitle(title)
    fig.tight_layout()
    return _finish(fig, path)


def scatter_figure(
    path: str,
    coupled: np.ndarray,
    limits: np.ndarray,
    title: str,
) -> str:
    """Scaled estimator error against its coupled limit draw, per replicate."""
    fig, ax = plt.subplots(figsize=(4.6, 4.4))
    lo = float(min(coupled.min(), limits.min()))
    hi = float(max(coupled.max(), limits.max()))
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    ax.plot([lo - pad, hi + pad], [lo - pad, hi + pad], "k--", lw=0.8, alpha=0.6)
    ax.plot(limits, coupled, ".", ms=4, alpha=0.6)
    ax.set_xlabel("limit draw")
    ax.set_ylabel("scaled estimator error")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _finish(fig, path)
