"""Model-free stabilization of linear (and locally, nonlinear) systems:
zeroth-order policy gradient inside an adaptive discount-annealing loop,
with a model-based oracle layer for verification.
"""

__version__ = "0.1.0"

from .anneal import (
    AnnealingConfig,
    AnnealingStallError,
    AnnealingTrace,
    DegenerateEstimateError,
    InnerMode,
    IterationRecord,
    make_environment,
    run_annealing,
    update_rate_noisy,
    update_rate_nonlinear,
    update_rate_sampled,
)
from .estimate import (
    CostEstimate,
    EstimationFailure,
    GradientEstimate,
    estimate_cost,
    sample_sphere_perturbation,
    two_point_gradient,
)
from .oracle import (
    LqrCostSpec,
    LtiSystem,
    LyapunovSolution,
    Policy,
    UnstableClosedLoopError,
    exact_cost,
    exact_cost_noisy,
    is_gamma_stable,
    margin_alpha_exact,
    optimal_lqr,
    oracle_gradient,
    solve_discounted_lyapunov,
    spectral_radius,
)
from .sim import (
    CartpoleParams,
    InitialStateDist,
    NoiseDist,
    NonlinearSystem,
    RolloutConfig,
    cartpole_linearization,
    cartpole_step,
    cartpole_system,
    derive_rng,
    rollout_cost_linear,
    rollout_cost_noisy,
    rollout_cost_nonlinear,
    sample_initial_state,
)

__all__ = [
    "__version__",
    "AnnealingConfig",
    "AnnealingStallError",
    "AnnealingTrace",
    "DegenerateEstimateError",
    "InnerMode",
    "IterationRecord",
    "make_environment",
    "run_annealing",
    "update_rate_noisy",
    "update_rate_nonlinear",
    "update_rate_sampled",
    "CostEstimate",
    "EstimationFailure",
    "GradientEstimate",
    "estimate_cost",
    "sample_sphere_perturbation",
    "two_point_gradient",
    "LqrCostSpec",
    "LtiSystem",
    "LyapunovSolution",
    "Policy",
    "UnstableClosedLoopError",
    "exact_cost",
    "exact_cost_noisy",
    "is_gamma_stable",
    "margin_alpha_exact",
    "optimal_lqr",
    "oracle_gradient",
    "solve_discounted_lyapunov",
    "spectral_radius",
    "CartpoleParams",
    "InitialStateDist",
    "NoiseDist",
    "NonlinearSystem",
    "RolloutConfig",
    "cartpole_linearization",
    "cartpole_step",
    "cartpole_system",
    "derive_rng",
    "rollout_cost_linear",
    "rollout_cost_noisy",
    "rollout_cost_nonlinear",
    "sample_initial_state",
]
