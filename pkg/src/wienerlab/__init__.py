"""Numerical laboratory for the causal transport of Gaussian measure.

The package simulates the entropic drift process carrying the Wiener measure
onto a target measure p = f * gamma_d, tracks the derivative of the induced
transport map along each path, and checks the resulting contraction
constants, functional inequalities, Stein kernels, and the comparison with
optimal transport at desk scale.
"""

from wienerlab.bounds import (
    BoundProfile,
    gronwall_integral,
    gronwall_quadrature,
    mixture_constant,
    mixture_profile,
    profile_for_measure,
    rescaled_constants,
    theta_dominance_check,
    theta_profile,
    verify_ensemble,
)
from wienerlab.inequalities import (
    Divergence,
    InequalityReport,
    InequalityRow,
    TestFunction,
    TestFunctionFamily,
    default_family,
    isoperimetric_check_1d,
    log_sobolev_divergence,
    poincare_divergence,
    psi_sobolev_check,
    q_poincare_check,
)
from wienerlab.follmer import (
    EnsembleResult,
    TimeGrid,
    Trajectory,
    barycenter_martingale_check,
    endpoint_distribution_check,
    entropy_identity_check,
    geometric_grid,
    integrate_increments,
    localization_diagnostics,
    path_seed,
    relative_entropy,
    simulate_ensemble,
    simulate_path,
    uniform_grid,
)
from wienerlab.malliavin import (
    FlowEnsemble,
    JacobianFlow,
    MomentEstimate,
    ensemble_flow,
    jacobian_flow,
    malliavin_norm,
    moment_estimate,
    propagator,
)
from wienerlab.measures import (
    MixtureSpec,
    TargetMeasure,
    make_gaussian,
    make_gaussian_mixture,
    make_standard_gaussian,
    make_truncated_gaussian,
    make_uniform_ball,
    make_uniform_cube,
    make_uniform_interval,
)
from wienerlab.posterior import (
    Method,
    PosteriorDegenerateError,
    PosteriorMoments,
    batched_moments,
    drift,
    drift_jacobian,
    heat_semigroup,
    log_heat_semigroup,
    posterior_moments,
    posterior_normal_columns,
    sample_posterior,
)

__version__ = "0.1.0"

__all__ = [
    "BoundProfile",
    "Divergence",
    "EnsembleResult",
    "FlowEnsemble",
    "InequalityReport",
    "InequalityRow",
    "JacobianFlow",
    "Method",
    "MixtureSpec",
    "MomentEstimate",
    "PosteriorDegenerateError",
    "PosteriorMoments",
    "TargetMeasure",
    "TestFunction",
    "TestFunctionFamily",
    "TimeGrid",
    "Trajectory",
    "barycenter_martingale_check",
    "batched_moments",
    "default_family",
    "drift",
    "drift_jacobian",
    "endpoint_distribution_check",
    "ensemble_flow",
    "entropy_identity_check",
    "geometric_grid",
    "gronwall_integral",
    "gronwall_quadrature",
    "heat_semigroup",
    "integrate_increments",
    "isoperimetric_check_1d",
    "jacobian_flow",
    "localization_diagnostics",
    "log_heat_semigroup",
    "log_sobolev_divergence",
    "make_gaussian",
    "make_gaussian_mixture",
    "make_standard_gaussian",
    "make_truncated_gaussian",
    "make_uniform_ball",
    "make_uniform_cube",
    "make_uniform_interval",
    "malliavin_norm",
    "mixture_constant",
    "mixture_profile",
    "moment_estimate",
    "path_seed",
    "poincare_divergence",
    "posterior_moments",
    "posterior_normal_columns",
    "profile_for_measure",
    "propagator",
    "psi_sobolev_check",
    "q_poincare_check",
    "rescaled_constants",
    "sample_posterior",
    "simulate_ensemble",
    "simulate_path",
    "theta_dominance_check",
    "theta_profile",
    "uniform_grid",
    "verify_ensemble",
    "__version__",
]
