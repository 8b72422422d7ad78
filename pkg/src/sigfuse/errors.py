"""Exception hierarchy shared across the pipeline."""


class SigfuseError(Exception):
    """Base class for all pipeline errors."""


class InvalidImageError(SigfuseError, ValueError):
    """Raster is empty, malformed or too small for the requested operation."""


class ConfigError(SigfuseError, ValueError):
    """A configuration value violates its declared constraints."""


class ShapeError(SigfuseError, ValueError):
    """Vector or matrix dimensions do not agree."""


class InsufficientEnrollmentError(SigfuseError, ValueError):
    pass


class NumericalError(SigfuseError, ArithmeticError):
    """A matrix that must be positive definite is not."""


class TrainingError(SigfuseError, ValueError):
    pass


class ProtocolError(SigfuseError, ValueError):
    """Evaluation protocol preconditions are not met."""
