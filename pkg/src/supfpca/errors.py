"""Exception hierarchy shared by all modules."""


class SupFPCAError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(SupFPCAError, ValueError):
    """Bad shapes, lengths, or parameter values."""


class DomainError(SupFPCAError, ValueError):
    """A time or covariate value lies outside a basis domain."""


class NumericalError(SupFPCAError, ArithmeticError):
    """Factorization failure or non-finite intermediate."""

    def __init__(self, message, sample_id=None, condition=None):
        super().__init__(message)
        self.sample_id = sample_id
        self.condition = condition


class DataError(SupFPCAError, ValueError):
    """Malformed input data (CSV rows, inconsistent covariates)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InitError(SupFPCAError, RuntimeError):
    """Initialization could not produce a usable starting point."""
