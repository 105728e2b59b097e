"""Feedback-policy extraction from partial observations of linear-Gaussian
controlled hidden Markov models.

The package covers the full pipeline: model types and serialization,
closed-loop simulation with seeded noise banks, Bayesian smoothing with a
dense joint-Gaussian oracle, the two backward extraction recursions, a
risk-sensitive demonstrator, and the Monte-Carlo sweep harness with its
CLI.
"""

from ._backend import BACKEND
from .errors import (
    ApcdError,
    ConfigError,
    DegenerateInnovationError,
    DegeneratePropagationError,
    IndefiniteQError,
    NumericalError,
    RiskBreakdownError,
    SimulationDivergedError,
    SingularEmissionError,
)
from .extraction import (
    MixturePolicy,
    extract_natural,
    extract_vanilla,
    load_policy,
    save_policy,
)
from .harness import (
    SweepConfig,
    SweepResult,
    desk_config,
    evaluate_objective,
    full_scale_config,
    required_permutations,
    run_sweep,
)
from .lqer import LqerCost, lqer_synthesize, lqr_synthesize
from .model import (
    ChmmModel,
    Dims,
    EmissionStep,
    GaussianPrior,
    LinearPolicy,
    TransitionStep,
    build_model,
    load_model,
    save_model,
    validate_model,
)
from .simulator import (
    BenchmarkSpec,
    NoiseBank,
    build_tracking_model,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate,
)
from .smoothing import (
    joint_gaussian_oracle,
    kalman_filter,
    rts_smoother,
    smooth_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "ApcdError",
    "BACKEND",
    "BenchmarkSpec",
    "ChmmModel",
    "ConfigError",
    "DegenerateInnovationError",
    "DegeneratePropagationError",
    "Dims",
    "EmissionStep",
    "GaussianPrior",
    "IndefiniteQError",
    "LinearPolicy",
    "LqerCost",
    "MixturePolicy",
    "NoiseBank",
    "NumericalError",
    "RiskBreakdownError",
    "SimulationDivergedError",
    "SingularEmissionError",
    "SweepConfig",
    "SweepResult",
    "TransitionStep",
    "build_model",
    "build_tracking_model",
    "desk_config",
    "evaluate_objective",
    "extract_natural",
    "extract_vanilla",
    "generate_dataset",
    "joint_gaussian_oracle",
    "kalman_filter",
    "load_dataset",
    "load_model",
    "load_policy",
    "lqer_synthesize",
    "lqr_synthesize",
    "full_scale_config",
    "required_permutations",
    "rts_smoother",
    "run_sweep",
    "save_dataset",
    "save_model",
    "save_policy",
    "simulate",
    "smooth_sequence",
    "validate_model",
]
