"""Exception hierarchy shared by every pipeline stage."""


class DedTwinError(Exception):
    """Base class for all package errors."""


class ParameterError(DedTwinError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(DedTwinError, ValueError):
    """Array dimensions do not agree."""


class StateError(DedTwinError, RuntimeError):
    """An object is used before it is ready (unfitted model, inactive node)."""


class ConfigurationError(DedTwinError, ValueError):
    """A configuration cannot be run, e.g. it violates a stability bound."""


class ConditioningError(DedTwinError, ArithmeticError):
    """A kernel matrix could not be factorized even after jitter escalation."""


class DegenerateInputError(DedTwinError, ValueError):
    """Input carries no information for the requested operation (zero variance)."""


class TrainingDivergenceError(DedTwinError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MissingArtifactError(DedTwinError, FileNotFoundError):
    """An upstream pipeline artifact is not where a command expects it."""
