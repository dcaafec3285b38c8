"""Small input-validation helpers used by the public entry points."""

from __future__ import annotations

import numpy as np

from .errors import AlignmentError


def as_float_matrix(values, name: str) -> np.ndarray:
    """Return ``values`` as a 2-d float array, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_float_vector(values, name: str) -> np.ndarray:
    """Return ``values`` as a 1-d float array, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_same_periods(returns, factors) -> None:
    """Raise :class:`AlignmentError` unless the two panels share periods."""
    if list(returns.periods) != list(factors.periods):
        raise AlignmentError(
            "returns and factors cover different periods; "
            "call align() before estimating"
        )
