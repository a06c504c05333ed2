"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: config problems exit 2, data/schema
problems exit 3, numerical failures exit 4.
"""


class CopulaStreamError(Exception):
    """Base class for all package-specific errors."""


class DomainError(CopulaStreamError, ValueError):
    """An argument value is outside its admissible domain."""


class MisuseError(CopulaStreamError, TypeError):
    """An operation was called on an object of the wrong kind."""


class NotFittedError(CopulaStreamError, RuntimeError):
    """A model or marginal was used before it saw any data."""


class SchemaError(CopulaStreamError, ValueError):
    """Column schema is missing, malformed, or inconsistent with the data."""


class ConfigError(CopulaStreamError, ValueError):
    """A run configuration violates a precondition (e.g. batch size <= p)."""


class DataError(CopulaStreamError, ValueError):
    """Input data could not be parsed. Carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(CopulaStreamError, ArithmeticError):
    """A linear-algebra step failed (singular or indefinite matrix)."""

    def __init__(self, message, detail=None):
        if detail is not None:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.detail = detail


class OracleInfeasibleError(CopulaStreamError, RuntimeError):
    """Rejection sampling cannot reach the requested accepted-draw count."""
