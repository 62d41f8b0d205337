"""The Jerison-Lee bubble, its gauge family, derivative modes and nonlinearities.

With ``rho4(z, t) = (1 + |z|^2)^2 + t^2`` the bubble is
``U = c0 * rho4^(-n/2)``; ``(Q-2)/4 = n/2`` throughout.  All closed forms in
this module are expressed through ``rho4`` and its horizontal derivatives

    X_j rho4     = 4 x_j (1+|z|^2) + 4 y_j t
    X_{n+j} rho4 = 4 y_j (1+|z|^2) - 4 x_j t

from which ``|X rho4|^2 = 16 |z|^2 rho4`` and
``Delta rho4 = 8n + 8(n+2)|z|^2`` follow.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import CalibrationError, check_points, check_random_state
from .derivatives import sublaplacian_fd
from .group import (
    Dimension,
    Gauge,
    HPoint,
    compose,
    dilate,
    gauge_apply,
    hnorm,
    inverse,
    zabs2,
)


@dataclass(frozen=True)
class Constants:
    """Dimension plus the calibrated bubble normalization ``c0``."""

    dim: Dimension
    c0: float

    @property
    def n(self) -> int:
        return self.dim.n

    @property
    def p(self) -> float:
        return self.dim.p

    def with_c0(self, c0: float) -> "Constants":
        return Constants(self.dim, float(c0))


def _as_dim(dim) -> Dimension:
    return dim if isinstance(dim, Dimension) else Dimension(int(dim))


def rho4(a) -> np.ndarray:
    """``(1 + |z|^2)^2 + t^2``."""
    a = np.asarray(a, dtype=float)
    return (1.0 + zabs2(a)) ** 2 + a[..., -1] ** 2


def _profile(a, n):
    """Unnormalized bubble ``rho4^(-n/2)``."""
    return rho4(a) ** (-0.5 * n)


def sample_points(n: int, size: int, seed=0, scale_range=(1e-2, 30.0)) -> np.ndarray:
    """Random points with homogeneous norm log-uniform in ``scale_range``.

    Directions are uniform on the Euclidean sphere in R^{2n+1} and then pushed
    to the requested norm by a dilation, so the sample covers the core and
    the tail of a bubble evenly.
    """
    rng = check_random_state(seed)
    d = rng.standard_normal((size, 2 * n + 1))
    d /= hnorm(d)[:, None] ** np.r_[np.ones(2 * n), 2.0]
    s = np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), size))
    return dilate(s, d)


def _fd_step(psi, lam=1.0):
    return 0.01 * (1.0 + hnorm(psi)) / lam


def calibrate_c0(dim, n_points: int = 200, seed: int = 12345, spread_tol: float = 1e-6) -> Constants:
    """Calibrate the bubble normalization so that ``Delta U + U^p = 0``.

    The ratio ``-Delta w / w^p`` for the unnormalized profile ``w`` is
    computed by finite differences along the horizontal flows at
    ``n_points`` points.  It must be constant; ``c0`` then solves
    ``c0^(p-1) = ratio``.

    Raises
    ------
    CalibrationError
        If the relative spread of the ratio exceeds ``spread_tol``.
    """
    dim = _as_dim(dim)
    n = dim.n
    pts = sample_points(n, n_points, seed=seed, scale_range=(1e-2, 10.0))

    def w(a):
        return _profile(a, n)

    ratio = -sublaplacian_fd(w, pts, _fd_step(pts)) / w(pts) ** dim.p
    center = float(np.median(ratio))
    spread = float(np.max(np.abs(ratio - center)) / abs(center))
    if not np.isfinite(spread) or spread > spread_tol or center <= 0:
        raise CalibrationError(f"sub-Laplacian ratio is not constant: relative spread {spread:.3e}")
    return Constants(dim, center ** (1.0 / (dim.p - 1.0)))


def exact_constants(dim) -> Constants:
    """Constants with the closed-form normalization ``c0 = (2n)^n``."""
    dim = _as_dim(dim)
    return Constants(dim, float((2 * dim.n) ** dim.n))


# -- evaluation ------------------------------------------------------------


def eval_U(constants: Constants, a) -> np.ndarray:
    """Bubble ``U(a) = c0 / rho4(a)^(n/2)``."""
    a = check_points(a)
    return constants.c0 * _profile(a, constants.n)


def eval_gauge_U(constants: Constants, g: Gauge, a) -> np.ndarray:
    """Gauged bubble ``lam^n U(delta_lam(xi^{-1} o a))``."""
    return g.lam**constants.n * eval_U(constants, gauge_apply(g, a))


def gauge_U_closed_form(constants: Constants, g: Gauge, a) -> np.ndarray:
    """Gauged bubble written out in coordinates (used as a cross-check)."""
    a = check_points(a)
    n, lam = constants.n, g.lam
    z, t = a[..., :-1], a[..., -1]
    z0, t0 = g.xi[:-1], g.xi[-1]
    x, y = z[..., :n], z[..., n:]
    x0, y0 = z0[:n], z0[n:]
    im = np.sum(x * y0 - y * x0, axis=-1)  # Im(conj(z) . z0)
    dz2 = np.sum((z - z0) ** 2, axis=-1)
    den = (1 + lam**2 * dz2) ** 2 + lam**4 * (t - t0 - 2 * im) ** 2
    return constants.c0 * lam**n / den ** (n / 2)


def _grad_rho4(a):
    """Horizontal gradient of rho4, shape ``(..., 2n)``."""
    n = (a.shape[-1] - 1) // 2
    x, y, t = a[..., :n], a[..., n:-1], a[..., -1:]
    s = 1.0 + zabs2(a)[..., None]
    return np.concatenate([4 * x * s + 4 * y * t, 4 * y * s - 4 * x * t], axis=-1)


def _sublap_rho4(a):
    n = (a.shape[-1] - 1) // 2
    return 8.0 * n + 8.0 * (n + 2) * zabs2(a)


def eval_XU(constants: Constants, g: Gauge, a) -> np.ndarray:
    """Horizontal gradient ``(X_1, ..., X_2n)`` of the gauged bubble."""
    a = check_points(a)
    n, lam = constants.n, g.lam
    psi = gauge_apply(g, a)
    r4 = rho4(psi)
    grad = -0.5 * n * (constants.c0 * r4 ** (-0.5 * n - 1))[..., None] * _grad_rho4(psi)
    return lam ** (n + 1) * grad


def eval_TU(constants: Constants, a) -> np.ndarray:
    """Dilation derivative ``T U = d/ds U(delta_{e^s} a)`` at ``s = 0``."""
    a = check_points(a)
    z2 = zabs2(a)
    t = a[..., -1]
    return -2.0 * constants.n * (z2 * (1 + z2) + t**2) / rho4(a) * eval_U(constants, a)


def sublaplacian_U(constants: Constants, g: Gauge, a) -> np.ndarray:
    """Sub-Laplacian of the gauged bubble by the chain rule through rho4.

    Uses ``Delta(h(rho4)) = h'(rho4) Delta rho4 + h''(rho4) |X rho4|^2`` with
    the gradient computed by :func:`eval_XU`'s formula.
    """
    a = check_points(a)
    n, lam = constants.n, g.lam
    psi = gauge_apply(g, a)
    r4 = rho4(psi)
    gr2 = np.sum(_grad_rho4(psi) ** 2, axis=-1)
    h1 = -0.5 * n * r4 ** (-0.5 * n - 1)
    h2 = 0.5 * n * (0.5 * n + 1) * r4 ** (-0.5 * n - 2)
    return constants.c0 * lam ** (n + 2) * (h1 * _sublap_rho4(psi) + h2 * gr2)


def pde_residual(constants: Constants, g: Gauge, a, sublap: str = "fd") -> np.ndarray:
    """Relative residual ``|Delta gU + (gU)^p| / (gU)^p`` at the points ``a``.

    ``sublap`` selects the finite-difference oracle (``"fd"``) or the
    chain-rule formula (``"analytic"``).
    """
    a = check_points(a)
    u = eval_gauge_U(constants, g, a)
    if sublap == "fd":
        lap = sublaplacian_fd(lambda b: eval_gauge_U(constants, g, b), a, _fd_step(gauge_apply(g, a), g.lam))
    elif sublap == "analytic":
        lap = sublaplacian_U(constants, g, a)
    else:
        raise ValueError(f"unknown sublap mode {sublap!r}")
    up = u**constants.p
    return np.abs(lap + up) / up


# -- derivative modes -------------------------------------------------------


def _zmodes_unit(constants: Constants, b) -> np.ndarray:
    """All 2n+2 modes of the untransported bubble at points ``b``."""
    n = constants.n
    u = eval_U(constants, b)
    r4 = rho4(b)
    z2 = zabs2(b)
    x, y, t = b[..., :n], b[..., n:-1], b[..., -1:]
    s = 1.0 + z2[..., None]
    k = (2 * n * u / r4)[..., None]
    zx = k * (x * s - y * t)
    zy = k * (y * s + x * t)
    zt = (n * u * b[..., -1] / r4)[..., None]
    zl = (n * u - 2 * n * u * (z2 * (1 + z2) + b[..., -1] ** 2) / r4)[..., None]
    return np.concatenate([zx, zy, zt, zl], axis=-1)


def zmodes(constants: Constants, g: Gauge, a) -> np.ndarray:
    """All derivative modes of the gauged bubble, shape ``(..., 2n+2)``.

    Column ``a-1`` holds ``Z^a``: columns ``0..2n`` are the translation modes
    ``d/d eta_a (g o g_{1,eta}) U`` at ``eta = 0``, the last column is the
    dilation mode ``d/d mu (g o g_{mu,0}) U`` at ``mu = 1``.
    """
    a = check_points(a)
    return g.lam**constants.n * _zmodes_unit(constants, gauge_apply(g, a))


def eval_Z(constants: Constants, a_index: int, g: Gauge, point) -> np.ndarray:
    """Single mode ``Z^a`` with 1-based index ``a`` in ``1..2n+2``."""
    m = 2 * constants.n + 2
    if int(a_index) != a_index or not 1 <= a_index <= m:
        raise ValueError(f"mode index must be in 1..{m}, got {a_index!r}")
    return zmodes(constants, g, point)[..., int(a_index) - 1]


def mode_residual(constants: Constants, a_index: int, g: Gauge, a) -> np.ndarray:
    """``|Delta Z^a + p (gU)^(p-1) Z^a| / (gU)^p`` at the points ``a``.

    The sub-Laplacian is taken by finite differences, so this checks the
    closed-form modes against the linearized equation independently.
    """
    a = check_points(a)
    u = eval_gauge_U(constants, g, a)
    z = eval_Z(constants, a_index, g, a)
    lap = sublaplacian_fd(lambda b: eval_Z(constants, a_index, g, b), a, _fd_step(gauge_apply(g, a), g.lam))
    up = u**constants.p
    return np.abs(lap + constants.p * u ** (constants.p - 1) * z) / up


# -- interaction parameter ---------------------------------------------------


def eps_pair(gi: Gauge, gj: Gauge) -> float:
    """Interaction parameter: the smallest of the two scale ratios and
    ``1 / (lam_i lam_j d(xi_i, xi_j)^2)``."""
    d = float(hnorm(compose(inverse(gi.xi), gj.xi)))
    sep = np.inf if d == 0.0 else 1.0 / (gi.lam * gj.lam * d * d)
    return float(min(gi.lam / gj.lam, gj.lam / gi.lam, sep))


def config_eps(config: "BubbleConfig") -> np.ndarray:
    return config.eps_matrix


# -- pointwise nonlinearities -------------------------------------------------


def f_from_values(values, p: float) -> np.ndarray:
    """``(sum_i v_i)^p - sum_i v_i^p`` for nonnegative ``values[i]``.

    Values are stacked along axis 0.  The largest term is factored out so the
    leading cancellation is done by ``expm1``/``log1p``.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] < 2:
        return np.zeros(v.shape[1:])
    big = v.max(axis=0)
    rest = v.sum(axis=0) - big
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(big > 0, rest / np.where(big > 0, big, 1.0), 0.0)
        head = big**p * np.expm1(p * np.log1p(x))
    # subtract the powers of the non-maximal terms
    others = (v**p).sum(axis=0) - big**p
    return np.maximum(head - others, 0.0)


def n_from_values(sigma, rho, p: float) -> np.ndarray:
    """``|s+r|^(p-1)(s+r) - s^p - p s^(p-1) r`` evaluated without cancellation."""
    sigma = np.asarray(sigma, dtype=float)
    rho = np.asarray(rho, dtype=float)
    sigma, rho = np.broadcast_arrays(sigma, rho)
    out = np.empty(sigma.shape)
    pos = sigma > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(pos, rho / np.where(pos, sigma, 1.0), 0.0)
        mild = pos & (x > -0.5)
        g = np.where(mild, np.expm1(p * np.log1p(np.where(mild, x, 0.0))) - p * x, 0.0)
        rough = np.abs(1 + x) ** (p - 1) * (1 + x) - 1 - p * x
    out[:] = np.where(mild, sigma**p * g, sigma**p * rough)
    zero = ~pos
    out[zero] = np.abs(rho[zero]) ** (p - 1) * rho[zero]
    return out


# -- configurations -----------------------------------------------------------


@dataclass(frozen=True)
class BubbleConfig:
    """Ordered family of gauged bubbles with their pairwise interaction.

    Parameters
    ----------
    constants : Constants
    gauges : sequence of Gauge
    """

    constants: Constants
    gauges: tuple
    eps_matrix: np.ndarray = field(init=False, repr=False, compare=False)
    eps: float = field(init=False)

    def __post_init__(self):
        gauges = tuple(self.gauges)
        if not gauges:
            raise ValueError("a configuration needs at least one bubble")
        for g in gauges:
            if g.n != self.constants.n:
                raise ValueError("gauge dimension does not match constants")
        object.__setattr__(self, "gauges", gauges)
        m = len(gauges)
        e = np.full((m, m), np.nan)
        for i in range(m):
            for j in range(i + 1, m):
                e[i, j] = e[j, i] = eps_pair(gauges[i], gauges[j])
        e.setflags(write=False)
        object.__setattr__(self, "eps_matrix", e)
        object.__setattr__(self, "eps", float(np.nanmax(e)) if m > 1 else 0.0)

    @classmethod
    def on_axis(cls, constants: Constants, lams, centers) -> "BubbleConfig":
        n = constants.n
        return cls(constants, tuple(Gauge.on_axis(n, lam, t) for lam, t in zip(lams, centers)))

    @property
    def dim(self) -> Dimension:
        return self.constants.dim

    @property
    def m(self) -> int:
        return len(self.gauges)

    def weakly_interacting(self, delta: float) -> bool:
        return self.eps <= delta

    def is_axial(self) -> bool:
        return all(g.is_axial() for g in self.gauges)

    @property
    def lams(self) -> np.ndarray:
        return np.array([g.lam for g in self.gauges])

    @property
    def centers_t(self) -> np.ndarray:
        return np.array([g.xi[-1] for g in self.gauges])

    # full-coordinate evaluation
    def bubble_values(self, a) -> np.ndarray:
        return np.stack([eval_gauge_U(self.constants, g, a) for g in self.gauges])

    def sigma(self, a) -> np.ndarray:
        return self.bubble_values(a).sum(axis=0)

    def f(self, a) -> np.ndarray:
        return f_from_values(self.bubble_values(a), self.constants.p)

    def N(self, rho, a) -> np.ndarray:
        return n_from_values(self.sigma(a), rho, self.constants.p)

    # axisymmetric evaluation
    def _require_axial(self):
        if not self.is_axial():
            raise ValueError("configuration has bubbles off the t-axis")

    def bubble_values_rt(self, r, t) -> np.ndarray:
        self._require_axial()
        c = self.constants
        return np.stack([bubble_rt(c, g.lam, g.xi[-1], r, t) for g in self.gauges])

    def sigma_rt(self, r, t) -> np.ndarray:
        return self.bubble_values_rt(r, t).sum(axis=0)

    def f_rt(self, r, t) -> np.ndarray:
        return f_from_values(self.bubble_values_rt(r, t), self.constants.p)

    def modes_rt(self, r, t) -> list:
        """Axisymmetric modes ``(Z^{2n+1}, Z^{2n+2})`` of each bubble."""
        self._require_axial()
        c = self.constants
        return [zmodes_rt(c, g.lam, g.xi[-1], r, t) for g in self.gauges]


def eval_f(config: BubbleConfig, a) -> np.ndarray:
    """Pointwise interaction term ``sigma^p - sum_i U_i^p``."""
    return config.f(a)


def eval_N(config: BubbleConfig, rho_val, a) -> np.ndarray:
    """Pointwise nonlinear remainder of ``|sigma + rho|^(p-1)(sigma + rho)``."""
    return config.N(rho_val, a)


# -- axisymmetric closed forms -------------------------------------------------


def _rho4_rt(lam, tc, r, t):
    return (1.0 + (lam * r) ** 2) ** 2 + lam**4 * (t - tc) ** 2


def bubble_rt(constants: Constants, lam: float, tc: float, r, t) -> np.ndarray:
    """Gauged bubble with center ``(0, tc)`` as a function of ``(|z|, t)``."""
    n = constants.n
    return constants.c0 * lam**n * _rho4_rt(lam, tc, np.asarray(r, float), np.asarray(t, float)) ** (-0.5 * n)


def zmodes_rt(constants: Constants, lam: float, tc: float, r, t):
    """``(Z^{2n+1}, Z^{2n+2})`` of the gauged bubble centered on the t-axis."""
    n = constants.n
    r = np.asarray(r, float)
    t = np.asarray(t, float)
    rs, ts = lam * r, lam**2 * (t - tc)
    r4 = (1 + rs**2) ** 2 + ts**2
    u = constants.c0 * r4 ** (-0.5 * n)
    zt = n * u * ts / r4
    zl = n * u - 2 * n * u * (rs**2 * (1 + rs**2) + ts**2) / r4
    return lam**n * zt, lam**n * zl


def TU_rt(constants: Constants, r, t) -> np.ndarray:
    """Dilation derivative of the unit bubble as a function of ``(|z|, t)``."""
    r = np.asarray(r, float)
    t = np.asarray(t, float)
    r4 = (1 + r**2) ** 2 + t**2
    u = constants.c0 * r4 ** (-0.5 * constants.n)
    return -2.0 * constants.n * (r**2 * (1 + r**2) + t**2) / r4 * u


def point_rt(n: int, r, t) -> np.ndarray:
    """Embed ``(r, t)`` pairs as points ``(r, 0, ..., t)`` of H^n."""
    r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
    out = np.zeros(r.shape + (2 * n + 1,))
    out[..., 0] = r
    out[..., -1] = t
    return out


__all__ = [
    "BubbleConfig",
    "Constants",
    "HPoint",
    "TU_rt",
    "bubble_rt",
    "calibrate_c0",
    "config_eps",
    "eps_pair",
    "eval_N",
    "eval_TU",
    "eval_U",
    "eval_XU",
    "eval_Z",
    "mode_residual",
    "eval_f",
    "eval_gauge_U",
    "exact_constants",
    "f_from_values",
    "gauge_U_closed_form",
    "n_from_values",
    "pde_residual",
    "point_rt",
    "rho4",
    "sample_points",
    "sublaplacian_U",
    "zmodes",
    "zmodes_rt",
]
