"""Small argument checks shared by the estimators and the pipeline."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError, DataError


def check_unit_interval(value, name: str = "threshold") -> float:
    """``value`` as a float in [0, 1]; ValueError otherwise."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValueError(f"{name} must be a number, got {value!r}")
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return v


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name: str) -> float:
    """Open interval (0, 1), for split fractions."""
    v = float(value)
    if not 0.0 < v < 1.0:
        raise ConfigError(f"{name} must lie strictly between 0 and 1, got {v}")
    return v


def check_finite_array(a, name: str = "array", ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def check_windows(windows) -> list:
    """Non-empty list of windows sharing one channel count."""
    windows = list(windows)
    if not windows:
        raise DataError("no windows given")
    n = windows[0].n_channels
    if any(w.n_channels != n for w in windows):
        raise DataError("windows disagree on channel count")
    return windows


def check_aligned(a, b, what: str = "items") -> None:
    if len(a) != len(b):
        raise DataError(f"{what}: {len(a)} vs {len(b)}")
