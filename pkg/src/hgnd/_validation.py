"""Input validation helpers used by the public API and the estimators."""

from __future__ import annotations

import numbers

import numpy as np


def as_point(p, name: str = "point") -> np.ndarray:
    """Coerce to a finite float64 vector of shape (3,)."""
    arr = np.asarray(p, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have exactly 3 components, got shape {np.shape(p)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components: {arr}")
    return arr


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to a finite float64 array of shape (n, 3)."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float64 matrix (descriptor rows)."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(name: str, value) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_unit_interval(name: str, value, *, closed_low: bool = False) -> float:
    value = float(value)
    low_ok = value >= 0 if closed_low else value > 0
    if not low_ok or value > 1:
        bracket = "[0, 1]" if closed_low else "(0, 1]"
        raise ValueError(f"{name} must lie in {bracket}, got {value!r}")
    return value
