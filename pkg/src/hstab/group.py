"""Heisenberg group arithmetic.

Points of H^n are stored as flat real arrays ``(x_1..x_n, y_1..y_n, t)`` of
length ``2n+1``.  Every operation broadcasts over leading axes, so an array of
shape ``(..., 2n+1)`` is a batch of points.

The group law is fixed once here and everything else derives from it::

    compose(a, b) = a o b = (z_a + z_b, t_a + t_b + 2 Im(z_a . conj(z_b)))

so left translation by ``a`` is ``b -> compose(a, b)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_points, check_positive


@dataclass(frozen=True)
class Dimension:
    """Dimension data for H^n: homogeneous dimension and critical exponents."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")

    @property
    def Q(self) -> int:
        return 2 * self.n + 2

    @property
    def p(self) -> float:
        return (self.Q + 2) / (self.Q - 2)

    @property
    def sobolev_exponent(self) -> float:
        return 2 * self.Q / (self.Q - 2)

    @property
    def size(self) -> int:
        """Number of real coordinates of a point."""
        return 2 * self.n + 1


@dataclass(frozen=True)
class HPoint:
    """A single point (z, t) of H^n."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.size % 2 != 1:
            raise ValueError("a point of H^n has 2n+1 coordinates")
        if not np.all(np.isfinite(c)):
            raise ValueError("point coordinates must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def from_parts(cls, x, y, t) -> "HPoint":
        return cls(np.concatenate([np.atleast_1d(x), np.atleast_1d(y), [t]]).astype(float))

    @classmethod
    def origin(cls, n: int) -> "HPoint":
        return cls(np.zeros(2 * n + 1))

    @classmethod
    def on_axis(cls, n: int, t: float) -> "HPoint":
        c = np.zeros(2 * n + 1)
        c[-1] = t
        return cls(c)

    @property
    def n(self) -> int:
        return (self.coords.size - 1) // 2

    @property
    def x(self):
        return self.coords[: self.n]

    @property
    def y(self):
        return self.coords[self.n : 2 * self.n]

    @property
    def t(self) -> float:
        return float(self.coords[-1])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)

    def __eq__(self, other):
        return isinstance(other, HPoint) and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.coords.tobytes())


def _split(a):
    n = (a.shape[-1] - 1) // 2
    return a[..., :n], a[..., n : 2 * n], a[..., -1], n


def compose(a, b) -> np.ndarray:
    """Group product ``a o b``.

    Raises ValueError if the two arguments live in different dimensions.
    """
    a = check_points(a)
    b = check_points(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]} coordinates")
    xa, ya, ta, _ = _split(a)
    xb, yb, tb, _ = _split(b)
    twist = 2.0 * np.sum(ya * xb - xa * yb, axis=-1)
    return np.concatenate([xa + xb, ya + yb, (ta + tb + twist)[..., None]], axis=-1)


def inverse(a) -> np.ndarray:
    return -check_points(a)


def dilate(mu, a) -> np.ndarray:
    """Anisotropic dilation ``(x, y, t) -> (mu x, mu y, mu^2 t)``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("dilation factor must be positive")
    a = check_points(a)
    out = a * mu[..., None]
    out[..., -1] *= mu
    return out


def zabs2(a) -> np.ndarray:
    """|z|^2 of each point."""
    a = np.asarray(a, dtype=float)
    return np.sum(a[..., :-1] ** 2, axis=-1)


def hnorm(a) -> np.ndarray:
    """Homogeneous norm ``(|z|^4 + t^2)^(1/4)``."""
    a = check_points(a)
    return (zabs2(a) ** 2 + a[..., -1] ** 2) ** 0.25


def dist(a, b) -> np.ndarray:
    """Left-invariant distance ``|b^{-1} o a|``."""
    return hnorm(compose(inverse(b), a))


@dataclass(frozen=True)
class Gauge:
    """Scaling/translation pair acting on functions by
    ``(g u)(xi) = lam^((Q-2)/2) u(delta_lam(center^{-1} o xi))``."""

    lam: float
    center: HPoint = field(default=None)

    def __post_init__(self):
        check_positive(self.lam, "lam")
        object.__setattr__(self, "lam", float(self.lam))
        if self.center is None:
            raise ValueError("gauge needs a center point")
        if not isinstance(self.center, HPoint):
            object.__setattr__(self, "center", HPoint(self.center))

    @classmethod
    def identity(cls, n: int) -> "Gauge":
        return cls(1.0, HPoint.origin(n))

    @classmethod
    def on_axis(cls, n: int, lam: float, t: float) -> "Gauge":
        return cls(lam, HPoint.on_axis(n, t))

    @property
    def n(self) -> int:
        return self.center.n

    @property
    def xi(self) -> np.ndarray:
        return self.center.coords

    def is_axial(self) -> bool:
        """True when the center lies on the t-axis (z = 0)."""
        return bool(np.all(self.center.coords[:-1] == 0.0))

    def allclose(self, other: "Gauge", rtol=1e-12, atol=1e-12) -> bool:
        return bool(
            np.isclose(self.lam, other.lam, rtol=rtol, atol=atol)
            and np.allclose(self.xi, other.xi, rtol=rtol, atol=atol)
        )


def gauge_apply(g: Gauge, a) -> np.ndarray:
    """Inner point map of the gauge, ``delta_lam(center^{-1} o a)``."""
    return dilate(g.lam, compose(inverse(g.xi), a))


def gauge_compose(g1: Gauge, g2: Gauge) -> Gauge:
    """Operator product ``g1 g2``.

    Its point map applies ``g1``'s map first:
    ``gauge_apply(gauge_compose(g1, g2), a) == gauge_apply(g2, gauge_apply(g1, a))``.
    """
    xi = compose(g1.xi, dilate(1.0 / g1.lam, g2.xi))
    return Gauge(g1.lam * g2.lam, HPoint(xi))


def gauge_inverse(g: Gauge) -> Gauge:
    return Gauge(1.0 / g.lam, HPoint(dilate(g.lam, inverse(g.xi))))


def relative_gauge(gi: Gauge, gj: Gauge) -> Gauge:
    """``gi^{-1} gj`` in closed form: scale ``lam_j/lam_i``, center
    ``delta_{lam_i}(xi_i^{-1} o xi_j)``."""
    return Gauge(gj.lam / gi.lam, HPoint(dilate(gi.lam, compose(inverse(gi.xi), gj.xi))))
