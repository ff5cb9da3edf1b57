"""Exception hierarchy shared by the library and the CLI."""


class InfoBoundError(Exception):
    """Base class for every error raised by infobound."""
    pass


class ConfigurationError(InfoBoundError, ValueError):
    """Raised when a scenario, model or predictor is configured inconsistently."""
    pass


class UnstableModelError(ConfigurationError):
    """Raised when a process requires a stable recursion and is not stable."""
    pass


class GenerationError(InfoBoundError):
    """Raised when a synthetic process cannot be simulated."""
    pass


class EstimatorError(InfoBoundError, ValueError):
    """Raised when an estimator precondition is violated."""
    pass


class OracleError(InfoBoundError, ValueError):
    """Raised when a closed-form quantity cannot be computed."""
    pass


class PredictorError(InfoBoundError):
    """Raised when a predictor emits a non-finite value or diverges."""
    pass
