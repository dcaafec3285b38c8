"""Exception hierarchy shared across the package.

Every error raised deliberately by this package derives from
:class:`RiskPremiaError`, so callers (and the command line driver) can
distinguish expected failure modes from genuine bugs.
"""

from __future__ import annotations


class RiskPremiaError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(RiskPremiaError):
    """An input file could not be parsed (bad dates, ragged rows, ...)."""


class AlignmentError(RiskPremiaError):
    """Two data sets could not be aligned on a common sample period."""


class InsufficientDataError(RiskPremiaError):
    """A sample is too short for the requested computation."""


class SingularMatrixError(RiskPremiaError):
    """A matrix that must be inverted is numerically singular.

    Parameters
    ----------
    message : str
        Human readable description naming the offending matrix.
    condition : float, optional
        Reciprocal condition number estimate, stored on the exception so
        callers can report it.
    """

    def __init__(self, message: str, condition: float | None = None):
        if condition is not None:
            message = f"{message} (reciprocal condition {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class IdentificationError(RiskPremiaError):
    """A model is under-identified (for example more proxies than factors)."""


class ParameterError(RiskPremiaError):
    """A configuration value or simulation parameter is out of range."""
