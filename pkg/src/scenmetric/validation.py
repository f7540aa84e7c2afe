"""Input validation helpers shared across the package."""
from __future__ import annotations

import numpy as np

__all__ = [
    "as_float_array",
    "check_embeddings",
    "check_finite",
    "check_in_unit_interval",
    "check_nonnegative",
]


def as_float_array(values, name, dtype=np.float64, ndim=None):
    """Coerce ``values`` to a contiguous float array, raising on failure."""
    arr = np.ascontiguousarray(values, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def check_nonnegative(value, name):
    if value < 0:
        raise ValueError(f"{name} must be nonnegative, got {value}")


def check_in_unit_interval(value, name):
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def check_embeddings(X, min_rows=1):
    """Validate an embedding matrix: 2-D, finite, at least ``min_rows`` rows."""
    arr = as_float_array(X, "embeddings", ndim=2)
    check_finite(arr, "embeddings")
    if arr.shape[0] < min_rows:
        raise ValueError(f"embeddings need at least {min_rows} rows, got {arr.shape[0]}")
    return arr
