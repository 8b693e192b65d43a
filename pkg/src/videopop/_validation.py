"""Small input-validation helpers shared by the estimators."""

import numpy as np

from .errors import DataError


def as_float_matrix(x, name="X"):
    """Coerce to a C-contiguous 2-D float64 array, rejecting non-finite values."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def as_float_vector(x, name="values"):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def check_finite(arr, name="array"):
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")


def check_n_columns(arr, expected, name="X"):
    if arr.shape[1] != expected:
        raise ValueError(
            f"{name} has {arr.shape[1]} columns, expected {expected}"
        )


def check_same_length(a, b, name_a="y", name_b="yhat"):
    if len(a) != len(b):
        raise ValueError(
            f"{name_a} and {name_b} must have the same length "
            f"({len(a)} != {len(b)})"
        )
