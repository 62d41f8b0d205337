"""Input validation helpers shared by the public API."""
from __future__ import annotations

import numbers

import numpy as np


class HstabError(Exception):
    """Base class for errors raised by this package."""


class CalibrationError(HstabError):
    """A derivative formula or a numerical calibration is inconsistent."""


class ConvergenceError(HstabError):
    """An iterative method failed to reach its tolerance."""


class BubbleCollisionError(HstabError):
    """A fitted configuration left the weak-interaction regime.

    The partial fit is attached as ``result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class GridFormatError(HstabError, ValueError):
    """A grid-function file is malformed."""


def check_points(a) -> np.ndarray:
    """Return ``a`` as a float array of points with an odd last axis."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0 or a.shape[-1] % 2 != 1:
        raise ValueError(f"points must have 2n+1 coordinates on the last axis, got shape {a.shape}")
    return a


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite real, got {value!r}")
    return float(value)


def check_exponent_pair(alpha, beta, total, rtol=1e-12):
    if alpha <= 0 or beta <= 0:
        raise ValueError("exponents must be positive")
    if abs(alpha + beta - total) > rtol * total:
        raise ValueError(f"exponents must sum to {total}, got {alpha} + {beta}")


def check_same_grid(u, v):
    if u.grid is not v.grid and not u.grid.same_as(v.grid):
        raise ValueError("grid functions live on different grids")


def check_random_state(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
