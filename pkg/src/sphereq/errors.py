"""Exception hierarchy shared by every sphereq module.

Each error carries an ``exit_code`` so the command-line front end can map
failures onto its documented process exit status without a lookup table.
"""

from typing import Any, Optional


class SphereQError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class ConfigError(SphereQError, ValueError):
    """Invalid scheme, codebook or run configuration."""

    exit_code = 2


class DimensionError(ConfigError):
    """Input length does not match the configured dimension."""


class DataError(SphereQError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class FormatError(DataError):
    """A serialized artifact does not parse or does not match its header."""


class NumericalError(SphereQError, ArithmeticError):
    """A numerical procedure failed."""

    exit_code = 4


class ConvergenceError(NumericalError):
    """An iterative solver did not converge.

    Attributes:
        last_iterate: The final iterate reached before giving up.
    """

    def __init__(self, message: str, last_iterate: Optional[Any] = None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SearchError(NumericalError):
    """The per-vector scale search produced no usable minimizer."""


class DegenerateAlignmentError(NumericalError):
    """Alignment is too small for unbiased rescaling."""


class InsufficientSamplesError(ConfigError):
    """Fewer training samples than centroids were requested."""


class DomainError(ConfigError):
    """A codebook does not fit inside a lookup-table domain."""


class StaleLUTError(ConfigError):
    """A lookup table is bound to a different codebook."""
