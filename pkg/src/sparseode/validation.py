"""Input validation helpers used across the estimator API."""

import numpy as np

from .errors import DataError, DimensionError, DomainError, SpecificationError


def as_float_vector(x, name="x", length=None):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a 1-d array, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.shape[0]}")
    return arr


def as_float_matrix(x, name="x", shape=None):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if shape is not None:
        rows, cols = shape
        if rows is not None and arr.shape[0] != rows:
            raise DimensionError(f"{name} must have {rows} rows, got {arr.shape[0]}")
        if cols is not None and arr.shape[1] != cols:
            raise DimensionError(f"{name} must have {cols} columns, got {arr.shape[1]}")
    return arr


def as_exponent_matrix(x, name="A"):
    """Coerce to a non-negative integer matrix, rejecting real-valued exponents."""
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=float))
        if not np.allclose(arr, rounded, rtol=0, atol=0):
            raise SpecificationError(f"{name} must contain integers only")
        arr = rounded
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise SpecificationError(f"{name} must be non-negative")
    return arr


def check_state(x, d, name="x"):
    arr = as_float_vector(x, name=name, length=d)
    if np.any(arr < 0):
        raise DomainError(f"{name} has negative coordinates; fields are defined on x >= 0")
    return arr


def check_times(times, name="times", min_points=1):
    arr = as_float_vector(times, name=name)
    if arr.shape[0] < min_points:
        raise DataError(f"{name} needs at least {min_points} points, got {arr.shape[0]}")
    if arr.shape[0] > 1 and np.any(np.diff(arr) <= 0):
        raise DataError(f"{name} must be strictly increasing")
    return arr


def check_weights(w, shape, name="weights"):
    arr = as_float_matrix(w, name=name, shape=shape)
    if np.any(arr < 0):
        raise DataError(f"{name} must be non-negative")
    return arr
