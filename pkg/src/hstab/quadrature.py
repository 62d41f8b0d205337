"""Tensor Gauss-Legendre quadrature for axisymmetric integrands on H^n.

A function ``u(|z|, t)`` integrates against Haar measure as

    int u dxi = omega_{2n-1} int_0^inf int_R u(r, t) r^(2n-1) dt dr,

with ``omega_{2n-1} = 2 pi^n / Gamma(n)`` the area of the unit sphere in
R^{2n}.  Bubbles concentrate at scale ``1/lam`` in ``r`` and ``1/lam^2`` in
``t`` and decay algebraically, so panels are graded geometrically away from
``r = 0`` and from every bubble center.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from .group import Dimension


def sphere_area(n: int) -> float:
    """Area of the unit sphere in R^{2n}."""
    return 2.0 * np.pi**n / gamma(n)


def geometric_breaks(lo: float, hi: float, ratio: float = 2.0) -> np.ndarray:
    """Points ``lo, lo*ratio, ...`` ending exactly at ``hi``."""
    k = max(1, int(np.ceil(np.log(hi / lo) / np.log(ratio))))
    return np.geomspace(lo, hi, k + 1)


def _dedupe(b, rtol=1e-9):
    b = np.unique(b)
    if b.size < 2:
        return b
    scale = np.maximum(np.abs(b[1:]), np.abs(b[:-1]))
    keep = np.r_[True, np.diff(b) > rtol * scale]
    return b[keep]


@dataclass(frozen=True)
class PanelRule:
    """Composite Gauss-Legendre nodes and weights over consecutive panels."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_breaks(cls, breaks, order: int) -> "PanelRule":
        x, w = np.polynomial.legendre.leggauss(order)
        a, b = breaks[:-1, None], breaks[1:, None]
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b) + half * x).ravel()
        weights = (half * w).ravel()
        return cls(nodes, weights)


@dataclass(frozen=True)
class AxiQuadrature:
    """Product rule on ``[0, r_max] x [t_min, t_max]`` adapted to bubbles.

    Parameters
    ----------
    dim : Dimension
    bubbles : sequence of (lam, tc)
        Scales and axis positions of the bubbles the integrand contains.
    ratio : float
        Geometric growth of panel widths.
    reach : float
        Outer radius in units of the widest core; the t-extent is its square.
    inner : float
        Innermost panel width in units of the narrowest core.
    """

    dim: Dimension
    r_breaks: np.ndarray
    t_breaks: np.ndarray

    @classmethod
    def for_bubbles(cls, dim, bubbles, ratio: float = 2.0, reach: float = 1e4, inner: float = 1e-3):
        dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
        lams = np.array([b[0] for b in bubbles], dtype=float)
        tcs = np.array([b[1] for b in bubbles], dtype=float)
        w_min, w_max = 1.0 / lams.max(), 1.0 / lams.min()
        r_max = reach * w_max
        r_b = np.r_[0.0, geometric_breaks(inner * w_min, r_max, ratio)]
        t_ext = r_max**2 + np.abs(tcs).max()
        t_b = [np.array([-t_ext, t_ext])]
        for lam, tc in zip(lams, tcs):
            g = geometric_breaks(inner / lam**2, r_max**2, ratio)
            t_b.append(tc + np.r_[-g[::-1], 0.0, g])
        t_b = np.concatenate(t_b)
        t_b = _dedupe(np.clip(t_b, -t_ext, t_ext))
        return cls(dim, r_b, t_b)

    def rules(self, order: int):
        return PanelRule.from_breaks(self.r_breaks, order), PanelRule.from_breaks(self.t_breaks, order)

    def _integrate(self, func, order, chunk=64):
        """Return the integral and the part of it coming from the outer shell
        ``r > r_max/10`` or ``|t - t_mid| > t_half/100`` (a truncation proxy)."""
        rr, tr = self.rules(order)
        n = self.dim.n
        wr = sphere_area(n) * rr.weights * rr.nodes ** (2 * n - 1)
        r_cut = self.r_breaks[-1] / 10.0
        t_mid = 0.5 * (self.t_breaks[0] + self.t_breaks[-1])
        t_in = np.abs(tr.nodes - t_mid) <= 0.005 * (self.t_breaks[-1] - self.t_breaks[0])
        total = inner = 0.0
        for s in range(0, rr.nodes.size, chunk):
            r = rr.nodes[s : s + chunk, None]
            vals = func(r, tr.nodes[None, :])
            total += float(wr[s : s + chunk] @ (vals @ tr.weights))
            r_in = rr.nodes[s : s + chunk] <= r_cut
            inner += float(wr[s : s + chunk][r_in] @ (vals[r_in][:, t_in] @ tr.weights[t_in]))
        return total, total - inner

    def integrate(self, func, order: int = 16, full_output: bool = False):
        """Integrate ``func(r, t)`` (broadcasting) against Haar measure.

        Returns the value, or ``(value, err)`` when ``full_output`` is set.
        ``err`` adds the difference to a lower-order rule and the content of
        the outermost shell (a bound on the neglected algebraic tail).
        """
        val, shell = self._integrate(func, order)
        if not full_output:
            return val
        low, _ = self._integrate(func, max(4, order - 6))
        return val, abs(val - low) + abs(shell)

    @property
    def size(self) -> int:
        return (self.r_breaks.size - 1) * (self.t_breaks.size - 1)


def integrate_rt(func, dim, bubbles, order: int = 16, full_output: bool = False, **kw):
    """Shorthand for ``AxiQuadrature.for_bubbles(dim, bubbles, **kw).integrate``."""
    return AxiQuadrature.for_bubbles(dim, bubbles, **kw).integrate(func, order=order, full_output=full_output)
