"""
Exception hierarchy for the SIM simulator.

Every error raised on purpose by this package derives from SimError so the
command-line front end can map it to an exit code.
"""


class SimError(Exception):
    """Base class for all simulator errors."""


class ValidationError(SimError, ValueError):
    """An argument or configuration value is outside its allowed range."""

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class GeometryError(ValidationError):
    """Grids or points are placed in an impossible configuration."""


class SingularityError(GeometryError):
    """A source and a target point coincide."""


class StructuralError(SimError, ValueError):
    """Matrix or vector dimensions do not line up."""


class UnderdeterminedError(SimError):
    """The pilot sensing matrix does not have full column rank."""


class PrecoderError(SimError):
    """The channel is rank deficient, so zero-forcing has no solution."""


class OptimizationError(SimError):
    """The fitting loss became non-finite."""

    def __init__(self, message, iteration=None, restart=None):
        self.iteration = iteration
        self.restart = restart
        super().__init__(message)


class TrainingError(SimError):
    """The training loss became NaN."""

    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message)


class ConfigurationError(SimError):
    """A model or scenario is internally inconsistent."""
