"""Noise- and jump-robust estimation of integrated volatility functionals.

Given regularly sampled, noisy observations of a multivariate price
process, this package estimates pathwise integrals ``S(g) = int g(c_s) ds``
of smooth functionals of the spot covariance matrix ``c_s``, with

* pre-averaging to suppress observation noise,
* threshold truncation to remove price jumps,
* an explicit second-order de-biasing term,
* a plug-in asymptotic variance and feasible confidence intervals, and
* a simulation lab and Monte Carlo harness to validate all of the above.

Typical flow: ``simulate`` (or ``load_csv``) -> ``validate_tuning`` +
``discrete_weights`` -> ``estimate`` -> :class:`EstimateReport`.  The
``volfunc`` console script exposes the same pipeline for batch use.
"""
from __future__ import annotations

from .cli_harness import (
    HarnessConfig,
    MCSummary,
    main,
    named_kernel,
    run_montecarlo,
    summarize_rows,
)
from .errors import (
    GuardViolation,
    InsufficientDataError,
    NumericalError,
    ValidationError,
)
from .functional_calculus import (
    Functional,
    Tensor4,
    builtin,
    builtin_names,
    fd_verify,
    sigma_tensor,
    theta_tensor,
    xi_tensor,
)
from .integrated_inference import (
    SCHEMA_VERSION,
    EstimateReport,
    InferenceOptions,
    avar,
    bias_term,
    confidence_interval,
    estimate,
    estimate_from_spot,
    normal_quantile,
)
from .kernel_moments import (
    Kernel,
    KernelMoments,
    continuous_moments,
    default_kernel,
    discrete_weights,
)
from .preaveraging_spot import (
    SpotSeries,
    TuningParams,
    bar_increment,
    component_alphas_from_pilot,
    hat_increment,
    pilot_scale,
    psd_project,
    spot_cov,
    spot_noise,
    spot_series,
    validate_tuning,
)
from .sampling_core import (
    ObservationSet,
    PathBundle,
    RegularGrid,
    increments,
    load_csv,
    save_csv,
)
from .simulation_lab import (
    SCENARIO_KINDS,
    ScenarioConfig,
    channel_rng,
    save_bundle,
    simulate,
    simulate_regression,
    true_functional,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "GuardViolation",
    "InsufficientDataError",
    "NumericalError",
    "ValidationError",
    # kernel moments
    "Kernel",
    "KernelMoments",
    "continuous_moments",
    "default_kernel",
    "discrete_weights",
    # sampling
    "RegularGrid",
    "ObservationSet",
    "PathBundle",
    "increments",
    "load_csv",
    "save_csv",
    # spot estimation
    "TuningParams",
    "SpotSeries",
    "validate_tuning",
    "bar_increment",
    "hat_increment",
    "spot_cov",
    "spot_noise",
    "spot_series",
    "pilot_scale",
    "component_alphas_from_pilot",
    "psd_project",
    # functional calculus
    "Functional",
    "Tensor4",
    "builtin",
    "builtin_names",
    "fd_verify",
    "sigma_tensor",
    "theta_tensor",
    "xi_tensor",
    # inference
    "SCHEMA_VERSION",
    "InferenceOptions",
    "EstimateReport",
    "normal_quantile",
    "bias_term",
    "avar",
    "confidence_interval",
    "estimate",
    "estimate_from_spot",
    # simulation lab
    "SCENARIO_KINDS",
    "ScenarioConfig",
    "channel_rng",
    "simulate",
    "simulate_regression",
    "true_functional",
    "save_bundle",
    # harness
    "HarnessConfig",
    "MCSummary",
    "named_kernel",
    "run_montecarlo",
    "summarize_rows",
    "main",
]
