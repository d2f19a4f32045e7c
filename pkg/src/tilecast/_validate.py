"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_non_negative(value: float, name: str) -> float:
    if value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")
    return value


def check_unit_interval(value: float, name: str, open_low: bool = False) -> float:
    low_ok = value > 0 if open_low else value >= 0
    if not (low_ok and value <= 1):
        bounds = "(0, 1]" if open_low else "[0, 1]"
        raise ValueError(f"{name} must lie in {bounds}, got {value}")
    return value


def check_simplex(values, name: str, tol: float = 1e-9):
    arr = np.asarray(values, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError(f"{name} components must be non-negative, got {arr.tolist()}")
    if abs(float(arr.sum()) - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1 within {tol}, got sum {arr.sum()!r}")
    return arr


def check_array_shape(arr, shape, name: str):
    arr = np.asarray(arr)
    if arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    return arr
