"""Parameter estimation for rough Volterra dynamics in the small-noise regime.

The package is organised bottom-up:

- :mod:`voltfit.kernels` -- the singular power-law kernel, its companion
  kernel, closed-form integrals, the Mittag-Leffler series and the
  product-integration weight table;
- :mod:`voltfit.models` -- drift/diffusion containers and built-in families;
- :mod:`voltfit.deterministic` -- the noiseless flow and its sensitivities;
- :mod:`voltfit.stochastic` -- noise streams and small-noise simulation;
- :mod:`voltfit.estimators` -- the trajectory-fitting estimator, curvature
  matrix, limit sample and identifiability scan;
- :mod:`voltfit.experiments` / :mod:`voltfit.cli` -- replication studies and
  the command-line front end.
"""

__version__ = "0.1.0"

from .errors import (
    CapabilityError,
    DegenerateFitError,
    DivergenceError,
    DomainError,
    GridMismatchError,
    OverflowGuardError,
    ResourceLimitError,
    SingularMatrixError,
    VoltfitError,
)
from .kernels import (
    DriftWeights,
    GridSpec,
    KernelSpec,
    drift_weights,
    kernel_eval,
    kernel_l1,
    kernel_l2sq,
    mittag_leffler,
    resolvent_convolution_check,
    resolvent_eval,
    resolvent_l1,
)
from .models import (
    LipschitzReport,
    ModelSpec,
    ParamDomain,
    bounded_nonlinear,
    build_model,
    check_derivative_oracles,
    constant_drift,
    eval_diffusion,
    eval_drift,
    eval_drift_grad_theta,
    eval_drift_grad_x,
    eval_drift_hess,
    fractional_linear,
    lipschitz_probe,
)
from .deterministic import (
    ConvergenceReport,
    DetPath,
    SecondSensitivityPath,
    SensitivityPath,
    export_csv,
    self_convergence,
    solve_second_sensitivity,
    solve_x0,
    solve_y0,
)
from .stochastic import (
    ExpansionPath,
    NoiseStream,
    StochPath,
    discrete_noise_variance,
    expansion_residual,
    kernel_noise_convolution,
    make_noise,
    simulate_xeps,
    simulate_z0,
)
from .estimators import (
    ContrastValue,
    EstimateOptions,
    EstimationResult,
    FisherMatrix,
    IdentReport,
    LimitSample,
    RayFit,
    contrast,
    contrast_gradient,
    estimate,
    fisher_matrix,
    identifiability_scan,
    limit_variable,
    trapezoid_weights,
)
from .config import ExperimentConfig, apply_overrides, load_config
from .experiments import (
    KernelCheckReport,
    NormalityReport,
    RateFit,
    RateReport,
    SolverConvergenceReport,
    fit_rate,
    run_ident_scan,
    run_kernel_check,
    run_mc_consistency,
    run_normality,
    run_solver_convergence,
)

__all__ = [name for name in dir() if not name.startswith("_")]
