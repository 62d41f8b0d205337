"""Finite-difference oracles along left-invariant flows.

These are deliberately independent of the closed-form derivative formulas in
:mod:`hstab.bubbles`; they only need point evaluations of a function.  The
integral curve of the left-invariant field ``X_j`` through ``a`` is
``s -> a o (s e_j)``, so ``X_j^2 f(a)`` is an ordinary second derivative along
that curve.
"""
import numpy as np

from .group import compose, dilate

# central stencils, offsets 1..4
_D2 = np.array([8 / 5, -1 / 5, 8 / 315, -1 / 560])
_D2_0 = -205 / 72
_D1 = np.array([4 / 5, -1 / 5, 4 / 105, -1 / 280])


def _shift(points, j, s):
    e = np.zeros(points.shape[-1])
    e[j] = 1.0
    return compose(points, np.asarray(s)[..., None] * e)


def horizontal_second_derivatives(func, points, step):
    """Return ``X_j^2 f`` for every horizontal direction, shape ``(..., 2n)``.

    ``step`` is a scalar or per-point array of FD step sizes; an 8th order
    central stencil is used.
    """
    points = np.asarray(points, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), points.shape[:-1])
    n2 = points.shape[-1] - 1
    f0 = func(points)
    out = np.empty(points.shape[:-1] + (n2,))
    for j in range(n2):
        acc = _D2_0 * f0
        for k, c in enumerate(_D2, start=1):
            acc = acc + c * (func(_shift(points, j, k * step)) + func(_shift(points, j, -k * step)))
        out[..., j] = acc / step**2
    return out


def sublaplacian_fd(func, points, step):
    """Sub-Laplacian ``sum_j X_j^2 f`` by finite differences along the flows."""
    return horizontal_second_derivatives(func, points, step).sum(axis=-1)


def horizontal_gradient_fd(func, points, step):
    """Horizontal gradient ``(X_1 f, ..., X_2n f)`` by 8th order central differences."""
    points = np.asarray(points, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), points.shape[:-1])
    n2 = points.shape[-1] - 1
    out = np.empty(points.shape[:-1] + (n2,))
    for j in range(n2):
        acc = 0.0
        for k, c in enumerate(_D1, start=1):
            acc = acc + c * (func(_shift(points, j, k * step)) - func(_shift(points, j, -k * step)))
        out[..., j] = acc / step
    return out


def dilation_derivative_fd(func, points, step=1e-3):
    """``T f`` where ``T`` generates the dilations: d/ds f(delta_{e^s} a) at s=0."""
    points = np.asarray(points, dtype=float)
    acc = 0.0
    for k, c in enumerate(_D1, start=1):
        acc = acc + c * (func(dilate(np.exp(k * step), points)) - func(dilate(np.exp(-k * step), points)))
    return acc / step


def central_difference(func, h):
    """First derivative at 0 of a scalar-parameter family, second order."""
    return (func(h) - func(-h)) / (2 * h)
