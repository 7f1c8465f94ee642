"""Exception hierarchy shared by every gaussreg module."""


class GaussRegError(Exception):
    """Base class for all library errors."""


class DimensionError(GaussRegError, ValueError):
    """Operand shapes do not conform for the requested operation."""


class DomainError(GaussRegError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NonFiniteError(GaussRegError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class BackwardError(GaussRegError, RuntimeError):
    """Misuse of the reverse pass (non-scalar loss, double backward, ...)."""


class DataError(GaussRegError, ValueError):
    """Malformed or inconsistent input data."""


class NotFittedError(GaussRegError, RuntimeError):
    """A transform was used before being fitted."""


class ModelFormatError(GaussRegError, ValueError):
    """A model file is corrupt, truncated, or of an unsupported version."""


class TrainingAbort(GaussRegError, RuntimeError):
    """Training hit a non-finite loss and was stopped."""

    def __init__(self, message, batch_index=None, param_norms=None):
        super().__init__(message)
        self.batch_index = batch_index
        self.param_norms = param_norms or []
