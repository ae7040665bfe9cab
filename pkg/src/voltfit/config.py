"""Run configuration: INI file parsing, CLI overrides, content hashing.

A config file is flat key-value text with one section per concern::

    [model]
    family = fractional-linear
    sigma = 0.3
    x0 = 1.0
    theta_star = 1.0
    lower = 0.2
    upper = 2.0

    [kernel]
    alpha = 0.25

    [grid]
    T = 1.0
    n = 256

    [experiment]
    epsilons = 0.2, 0.1, 0.05, 0.025
    replications = 200
    seed = 20260401
    workers = 1

    [output]
    dir = out

Every field has a default, so the CLI runs without a file; flags override
file values, which override defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, replace

from .errors import DomainError
from .kernels import GridSpec, KernelSpec
from .models import ModelSpec, build_model

_LIST_FIELDS = {
    "x0",
    "theta_star",
    "lower",
    "upper",
    "epsilons",
    "scan_radii",
    "kernel_ladder",
    "solver_ladder",
}


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    family: str = "fractional-linear"
    sigma: float = 0.3
    x0: tuple = (1.0,)
    theta_star: tuple = (1.0,)
    lower: tuple = (0.2,)
    upper: tuple = (2.0,)
    offset: float = 0.0
    # kernel / grid
    alpha: float = 0.25
    horizon: float = 1.0
    n: int = 256
    # experiment
    epsilons: tuple = (0.2, 0.1, 0.05, 0.025)
    replications: int = 200
    seed: int = 20260401
    epsilon: float = 0.1       # single-path commands
    replicate: int = 0
    theta_grid_points: int = 11
    workers: int = 1
    failure_budget: float = 0.01
    # kernel / solver checks
    kernel_ladder: tuple = (1024, 4096, 16384)
    solver_ladder: tuple = (256, 512, 1024, 2048, 4096)
    # identifiability scan
    scan_radii: tuple = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)
    # output
    out_dir: str = "out"

    def build_spec(self) -> KernelSpec:
        return KernelSpec(alpha=self.alpha)

    def build_grid(self, n: int | None = None) -> GridSpec:
        return GridSpec(horizon=self.horizon, steps=self.n if n is None else n)

    def build_model(self) -> ModelSpec:
        kwargs = {}
        if self.family == "fractional-linear":
            kwargs["offset"] = self.offset
        x0 = self.x0 if len(self.x0) > 1 else self.x0[0]
        return build_model(
            self.family, self.sigma, x0, list(self.lower), list(self.upper), **kwargs
        )

    def content_hash(self) -> str:
        """Hash of the statistical content of a run.

        Where results land (out_dir) and how many processes computed them
        (workers) cannot change a single output number, so they are left out:
        reruns of one experiment hash alike wherever and however they ran.
        """
        payload = asdict(self)
        payload.pop("out_dir")
        payload.pop("workers")
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode("utf-8")
        ).hexdigest()

    def validate(self) -> "ExperimentConfig":
        if len(self.lower) != len(self.upper) or len(self.lower) != len(self.theta_star):
            raise DomainError("theta_star, lower and upper must have equal length")
        if self.replications < 1:
            raise DomainError("replications must be positive")
        if self.workers < 1:
            raise DomainError("workers must be positive")
        if any(e <= 0 for e in self.epsilons):
            raise DomainError("epsilons must be positive")
        if not 0.0 <= self.failure_budget < 1.0:
            raise DomainError("failure_budget must lie in [0, 1)")
        # constructor-level validation of the numeric core
        self.build_spec()
        self.build_grid()
        model = self.build_model()
        model.check_theta(list(self.theta_star))
        return self


_SECTION_FIELDS = {
    "model": ("family", "sigma", "x0", "theta_star", "lower", "upper", "offset"),
    "kernel": ("alpha",),
    "grid": ("T", "n"),
    "experiment": (
        "epsilons",
        "replications",
        "seed",
        "epsilon",
        "replicate",
        "theta_grid_points",
        "workers",
        "failure_budget",
        "kernel_ladder",
        "solver_ladder",
        "scan_radii",
    ),
    "output": ("dir",),
}

_RENAMES = {"T": "horizon", "dir": "out_dir"}

_INT_FIELDS = {
    "n",
    "replications",
    "seed",
    "replicate",
    "theta_grid_points",
    "workers",
}
_INT_LIST_FIELDS = {"kernel_ladder", "solver_ladder"}
_STR_FIELDS = {"family", "out_dir"}


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name in _STR_FIELDS:
        return raw
    try:
        if name in _INT_LIST_FIELDS:
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        if name in _LIST_FIELDS:
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
        if name in _INT_FIELDS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise DomainError(f"cannot parse config value {name} = {raw!r}") from None


def load_config(path: str | None) -> ExperimentConfig:
    """Read a config file (or return pure defaults when path is None)."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case: [grid] T is uppercase
    read = parser.read(path)
    if not read:
        raise DomainError(f"config file not found or unreadable: {path}")
    updates = {}
    for section, keys in _SECTION_FIELDS.items():
        if not parser.has_section(section):
            continue
        for key in parser.options(section):
            if key not in keys:
                raise DomainError(f"unknown config key [{section}] {key}")
            name = _RENAMES.get(key, key)
            updates[name] = _parse_value(name, parser.get(section, key))
    for section in parser.sections():
        if section not in _SECTION_FIELDS:
            raise DomainError(f"unknown config section [{section}]")
    return replace(cfg, **updates)


def apply_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply non-None keyword overrides (CLI flags) on top of a config."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    bad = set(updates) - set(cfg.__dataclass_fields__)
    if bad:
        raise DomainError(f"unknown override fields: {sorted(bad)}")
    return replace(cfg, **updates)
