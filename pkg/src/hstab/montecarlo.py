"""Importance sampling on H^n with dilation-adapted proposals.

Haar measure in homogeneous polar coordinates is ``s^(Q-1) ds dsigma``; a
sample of the normalized ``sigma`` is obtained by drawing uniformly in the
unit ball and pushing the point to the unit sphere by a dilation.  Combining
that with a one-dimensional law for ``s = |zeta|`` gives proposals whose
density has a closed form, which is all importance sampling needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import beta as beta_fn

from ._validation import check_random_state
from .group import compose, dilate, hnorm, inverse
from .quadrature import sphere_area


def unit_ball_volume(n: int) -> float:
    """Haar volume of ``{|xi| < 1}``."""
    return 0.5 * sphere_area(n) * beta_fn(n / 2.0, 1.5)


def sample_unit_sphere(n: int, size: int, rng) -> np.ndarray:
    """Points with ``|omega| = 1`` distributed as the normalized polar measure."""
    out = np.empty((0, 2 * n + 1))
    while out.shape[0] < size:
        m = max(64, int(1.3 * (size - out.shape[0]) * 2 ** (2 * n + 1) / unit_ball_volume(n)))
        x = rng.uniform(-1.0, 1.0, (m, 2 * n + 1))
        s = hnorm(x)
        keep = (s < 1.0) & (s > 1e-12)
        x, s = x[keep], s[keep]
        out = np.concatenate([out, dilate(1.0 / s, x)])
    return out[:size]


@dataclass(frozen=True)
class RadialLaw:
    """Piecewise power-law density for ``s = |zeta|``.

    The density is proportional to ``s^powers[k]`` on ``[breaks[k], breaks[k+1]]``
    and continuous across the interior breaks.  ``breaks`` starts at 0 and ends
    at ``inf``; the first power must exceed -1 and the last must be below -1.
    """

    breaks: tuple
    powers: tuple

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        a = np.asarray(self.powers, dtype=float)
        if b[0] != 0 or not np.isinf(b[-1]) or len(a) != len(b) - 1:
            raise ValueError("breaks must run from 0 to inf with one power per piece")
        if a[0] <= -1 or a[-1] >= -1:
            raise ValueError("density must be integrable at 0 and at infinity")
        # continuity constants c_k so that density = c_k s^a_k
        c = np.ones(len(a))
        for k in range(1, len(a)):
            c[k] = c[k - 1] * b[k] ** (a[k - 1] - a[k])
        mass = np.array([self._piece_mass(c[k], a[k], b[k], b[k + 1]) for k in range(len(a))])
        object.__setattr__(self, "_c", c / mass.sum())
        object.__setattr__(self, "_mass", mass / mass.sum())

    @staticmethod
    def _piece_mass(c, a, lo, hi):
        if np.isclose(a, -1.0):
            return c * np.log(hi / lo)
        hi_term = 0.0 if np.isinf(hi) else hi ** (a + 1)
        return c * (hi_term - lo ** (a + 1)) / (a + 1)

    @classmethod
    def core_tail(cls, inner: float, tail: float, log_span: float | None = None) -> "RadialLaw":
        """``s^inner`` on ``[0, 1]``, optionally ``1/s`` on ``[1, log_span]``,
        then ``s^-tail``."""
        if log_span is None or log_span <= 1.0:
            return cls((0.0, 1.0, np.inf), (inner, -tail))
        return cls((0.0, 1.0, float(log_span), np.inf), (inner, -1.0, -tail))

    def pdf(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        b = np.asarray(self.breaks)
        k = np.clip(np.searchsorted(b, s, side="right") - 1, 0, len(self.powers) - 1)
        a = np.asarray(self.powers)[k]
        return self._c[k] * s**a

    def sample(self, size: int, rng) -> np.ndarray:
        b = np.asarray(self.breaks)
        a = np.asarray(self.powers)
        k = rng.choice(len(a), size=size, p=self._mass)
        u = rng.uniform(size=size)
        lo, hi, ak = b[k], b[k + 1], a[k]
        out = np.empty(size)
        logp = np.isclose(ak, -1.0)
        out[logp] = lo[logp] * (hi[logp] / lo[logp]) ** u[logp]
        pw = ~logp
        e = ak[pw] + 1.0
        lo_e = lo[pw] ** e
        hi_e = np.where(np.isinf(hi[pw]), 0.0, hi[pw] ** e)
        out[pw] = (lo_e + u[pw] * (hi_e - lo_e)) ** (1.0 / e)
        return out


@dataclass(frozen=True)
class Component:
    """Proposal ``xi = center o delta_scale(zeta)`` with ``|zeta|`` from ``law``."""

    center: np.ndarray
    scale: float
    law: RadialLaw

    def sample(self, size: int, rng) -> np.ndarray:
        n = (np.asarray(self.center).size - 1) // 2
        omega = sample_unit_sphere(n, size, rng)
        s = self.law.sample(size, rng)
        return compose(self.center, dilate(self.scale * s, omega))

    def pdf(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        n = (xi.shape[-1] - 1) // 2
        q = 2 * n + 2
        s = hnorm(compose(inverse(self.center), xi)) / self.scale
        with np.errstate(divide="ignore"):
            phi = self.law.pdf(s) / (q * unit_ball_volume(n) * s ** (q - 1))
        return phi / self.scale**q


@dataclass(frozen=True)
class Mixture:
    """Finite mixture of proposal components."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w / w.sum())

    def sample(self, size: int, rng) -> np.ndarray:
        counts = rng.multinomial(size, self.weights)
        parts = [c.sample(k, rng) for c, k in zip(self.components, counts) if k > 0]
        # shuffle so that paired draws from two mixtures stay independent
        return rng.permutation(np.concatenate(parts))

    def pdf(self, xi) -> np.ndarray:
        return sum(w * c.pdf(xi) for c, w in zip(self.components, self.weights))


def importance_mean(values, density):
    """Sample mean of ``values / density`` and its standard error."""
    r = np.asarray(values) / np.asarray(density)
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(r.size))


def mc_integrate(func, proposal: Mixture, size: int, seed=0, batch: int = 200_000):
    """Monte Carlo estimate of ``int func dxi`` with standard error."""
    rng = check_random_state(seed)
    s1 = s2 = 0.0
    done = 0
    while done < size:
        k = min(batch, size - done)
        xi = proposal.sample(k, rng)
        r = func(xi) / proposal.pdf(xi)
        s1 += r.sum()
        s2 += (r * r).sum()
        done += k
    mean = s1 / size
    var = max(s2 / size - mean * mean, 0.0)
    return float(mean), float(np.sqrt(var / (size - 1)))


def bubble_proposal(n: int, bubbles, tail: float = 3.0, log_span=None, weights=None) -> Mixture:
    """Mixture with one component per ``(lam, center_point)`` bubble core."""
    comps = []
    for lam, center in bubbles:
        c = np.zeros(2 * n + 1) if center is None else np.asarray(center, dtype=float)
        comps.append(Component(c, 1.0 / lam, RadialLaw.core_tail(2 * n + 1, tail, log_span)))
    w = np.ones(len(comps)) if weights is None else weights
    return Mixture(tuple(comps), np.asarray(w, dtype=float))
