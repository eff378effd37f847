"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: config problems exit 2, data
problems exit 3, violated internal invariants exit 4.
"""


class TlflrError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class DimensionError(TlflrError):
    """Operands live on different grids or have inconsistent shapes."""


class DomainError(TlflrError):
    """An argument violates a documented precondition."""


class ValidationError(TlflrError):
    """Input values are malformed (non-finite, asymmetric, ...)."""


class IllConditionedError(TlflrError):
    """The requested fit is numerically degenerate (eigenvalue or score
    column too small for the data)."""


class InvariantError(TlflrError):
    """An internal postcondition failed; indicates a bug, not bad input."""

    exit_code = 4


class ParseError(TlflrError):
    """A data file could not be parsed; message carries row/column."""


class ConfigError(TlflrError):
    """Invalid run configuration (flags or config file)."""

    exit_code = 2
