"""
infobound: information-theoretic lower bounds on online prediction error
"""
from .errors import (
    ConfigurationError,
    EstimatorError,
    GenerationError,
    InfoBoundError,
    OracleError,
    PredictorError,
    UnstableModelError,
)
from .harness import achievability_diagnostics, bound_report, generalization_experiment, run_scenario
from .maxent import empirical_lp_norm, entropy_to_lp_bound, lp_constant, maxent_entropy
from .schemas import (
    AchievabilityDiagnostics,
    BayesLinearModel,
    BoundReport,
    EntropyEstimate,
    LinearGaussianModel,
    MaxEntDistribution,
    PredictionTrace,
    ScenarioConfig,
    Trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "AchievabilityDiagnostics",
    "BayesLinearModel",
    "BoundReport",
    "ConfigurationError",
    "EntropyEstimate",
    "EstimatorError",
    "GenerationError",
    "InfoBoundError",
    "LinearGaussianModel",
    "MaxEntDistribution",
    "OracleError",
    "PredictionTrace",
    "PredictorError",
    "ScenarioConfig",
    "Trajectory",
    "UnstableModelError",
    "achievability_diagnostics",
    "bound_report",
    "empirical_lp_norm",
    "entropy_to_lp_bound",
    "generalization_experiment",
    "lp_constant",
    "maxent_entropy",
    "run_scenario",
]
