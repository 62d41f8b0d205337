"""Best bubble-sum approximation in the ``D1`` norm on an axisymmetric grid.

Each bubble is parameterized by ``(log lam, t_c)`` with its center on the
t-axis.  The objective ``G = ||u - sigma||_{D1}^2`` is minimized by
Gauss-Newton in the grid's energy inner product; the parameter derivatives of
``sigma`` are the sampled dilation and vertical-translation modes, so a fixed
point is exactly a remainder orthogonal to those modes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import BubbleCollisionError, ConvergenceError
from .bubbles import BubbleConfig, Constants, exact_constants, n_from_values, zmodes_rt
from .grid import AxiGrid, GridFn, apply_sublap, sample
from .group import Gauge
from .solver import DEFAULT, SolverConfig, dminus1_norm, stiffness_solve

COLLISION_EPS = 0.5


@dataclass
class FitResult:
    """Outcome of :func:`fit_bubbles`.

    ``residuals`` are ``(rho, Z)_{D1} / ||Z||_{D1}`` for the dilation and
    vertical modes of each fitted bubble, in that order.
    """

    gauges: tuple
    distance: float
    residuals: np.ndarray
    tolerance: float
    eps: float
    trace: list
    iterations: int
    converged: bool
    deficit: float | None = None
    constants: Constants | None = field(default=None, repr=False)

    @property
    def lams(self) -> np.ndarray:
        return np.array([g.lam for g in self.gauges])

    @property
    def centers_t(self) -> np.ndarray:
        return np.array([g.xi[-1] for g in self.gauges])

    @property
    def config(self) -> BubbleConfig:
        return BubbleConfig(self.constants, self.gauges)

    def to_dict(self) -> dict:
        return {
            "m": len(self.gauges),
            "lams": [float(x) for x in self.lams],
            "centers_t": [float(x) for x in self.centers_t],
            "distance": float(self.distance),
            "residuals": [float(x) for x in self.residuals],
            "tolerance": float(self.tolerance),
            "eps": float(self.eps),
            "deficit": None if self.deficit is None else float(self.deficit),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "trace": [float(x) for x in self.trace],
        }


def _unpack(theta, n):
    lams = np.exp(theta[0::2])
    tcs = theta[1::2]
    return tuple(Gauge.on_axis(n, lam, tc) for lam, tc in zip(lams, tcs))


def _model(constants, theta, R, T):
    """Bubble sum and its Jacobian in ``(log lam_k, t_k)``."""
    m = theta.size // 2
    sigma = np.zeros(R.size)
    J = np.empty((R.size, 2 * m))
    for k in range(m):
        lam, tc = math.exp(theta[2 * k]), theta[2 * k + 1]
        zt, zl = zmodes_rt(constants, lam, tc, R, T)
        u = constants.c0 * lam**constants.n * ((1 + (lam * R) ** 2) ** 2 + lam**4 * (T - tc) ** 2) ** (-0.5 * constants.n)
        sigma += u.ravel()
        J[:, 2 * k] = zl.ravel()
        J[:, 2 * k + 1] = lam**2 * zt.ravel()
    return sigma, J


def _residuals(A, rho, J):
    AJ = A @ J
    norms = np.sqrt(np.einsum("ij,ij->j", J, AJ))
    return (AJ.T @ rho) / norms


def fit_bubbles(u: GridFn, m: int, init, tol: float | None = None, max_iter: int = 100, constants: Constants | None = None, collision_eps: float = COLLISION_EPS, ridge: float = 1e-10) -> FitResult:
    """Fit ``m`` bubbles on the t-axis to ``u`` in the ``D1`` norm.

    Parameters
    ----------
    u : GridFn
    m : int
        Number of bubbles; ``m = 0`` returns the trivial fit.
    init : sequence of (lam, t_c) or Gauge
        Starting configuration, one entry per bubble.
    tol : float, optional
        Stop once every normalized orthogonality residual is below ``tol``.
        Defaults to ``1e-6 ||u||_{D1}``.
    max_iter : int
    constants : Constants, optional
        Defaults to the exact normalization for the grid dimension.
    collision_eps : float
        Largest interaction parameter accepted for an iterate.
    ridge : float
        Relative diagonal regularization of the normal equations.

    Raises
    ------
    BubbleCollisionError
        If an iterate's interaction parameter exceeds ``collision_eps``.
    ConvergenceError
        If the residuals are still above ``tol`` after ``max_iter`` steps or
        the line search cannot reduce the objective.
    """
    grid = u.grid
    c = constants or exact_constants(grid.dim)
    A = grid.stiffness
    y = u.flat
    unorm = math.sqrt(max(y @ (A @ y), 0.0))
    tol = 1e-6 * unorm if tol is None else tol
    if m == 0:
        return FitResult((), unorm, np.zeros(0), tol, 0.0, [unorm**2], 0, True, constants=c)
    init = list(init)
    if len(init) != m:
        raise ValueError(f"need {m} initial bubbles, got {len(init)}")
    theta = np.empty(2 * m)
    for k, g in enumerate(init):
        lam, tc = (g.lam, g.xi[-1]) if isinstance(g, Gauge) else g
        if lam <= 0:
            raise ValueError("initial scales must be positive")
        theta[2 * k], theta[2 * k + 1] = math.log(lam), tc
    R, T = grid.mesh()

    def state(th):
        s, J = _model(c, th, R, T)
        r = y - s
        return r, J, float(r @ (A @ r))

    r, J, G = state(theta)
    trace = [G]
    it = 0
    res = _residuals(A, r, J)
    converged = bool(np.all(np.abs(res) <= tol))
    while not converged and it < max_iter:
        it += 1
        AJ = A @ J
        H = J.T @ AJ
        H[np.diag_indices_from(H)] += ridge * np.trace(H) / H.shape[0]
        step = np.linalg.solve(H, AJ.T @ r)
        t = 1.0
        for _ in range(40):
            trial = theta + t * step
            r2, J2, G2 = state(trial)
            if G2 <= G:
                break
            t *= 0.5
        else:
            raise ConvergenceError("line search could not reduce the fit objective")
        theta, r, J, G = trial, r2, J2, G2
        trace.append(G)
        gauges = _unpack(theta, c.n)
        eps = BubbleConfig(c, gauges).eps
        res = _residuals(A, r, J)
        converged = bool(np.all(np.abs(res) <= tol))
        if eps > collision_eps:
            partial = FitResult(gauges, math.sqrt(max(G, 0.0)), res, tol, eps, trace, it, False, constants=c)
            raise BubbleCollisionError(f"fitted bubbles collide (eps = {eps:.3f} > {collision_eps})", partial)
    gauges = _unpack(theta, c.n)
    result = FitResult(gauges, math.sqrt(max(G, 0.0)), res, tol, BubbleConfig(c, gauges).eps, trace, it, converged, constants=c)
    if not converged:
        raise ConvergenceError(f"fit did not reach tolerance in {max_iter} iterations (max residual {np.abs(res).max():.2e})")
    return result


def deficit(u: GridFn, background: BubbleConfig | None = None, cfg: SolverConfig = DEFAULT, check: bool = False) -> float:
    """``||L u + |u|^(p-1) u||_{D-1}`` of a grid function.

    Without ``background`` the sub-Laplacian is applied on the grid.  With a
    ``background`` bubble sum ``sigma``, ``u`` is split as ``sigma + rho`` and
    ``L sigma = -sum U_i^p`` is used exactly, so only ``rho`` is
    differentiated numerically; this removes the discretization floor that
    dominates the grid version when ``u`` is close to a bubble sum.
    """
    grid = u.grid
    p = grid.dim.p
    if background is None:
        h = apply_sublap(grid, u, boundary="dirichlet") + u.abs() ** (p - 1) * u
        return dminus1_norm(grid, h, cfg, check=check)
    R, T = grid.mesh()
    vals = background.bubble_values_rt(R, T).reshape(background.m, -1)
    sigma = vals.sum(axis=0)
    rho = u.flat - sigma
    f = sigma**p - (vals**p).sum(axis=0)
    rhs = p * sigma ** (p - 1) * rho + f + n_from_values(sigma, rho, p)
    w = stiffness_solve(grid, grid.mass * rhs, cfg) - rho
    return float(math.sqrt(max(w @ (grid.stiffness @ w), 0.0)))


def regime_function(gamma: float, n: int) -> float:
    """Dimension-dependent right side of the stability estimate."""
    if n == 1:
        return gamma
    if n == 2:
        return gamma * math.sqrt(abs(math.log(gamma)))
    return gamma ** ((n + 2) / (2 * n))


def stability_quotient(u: GridFn, m: int, init, method: str = "background", cfg: SolverConfig = DEFAULT, **fit_kw):
    """Fit, then compare the distance with the deficit.

    ``method="background"`` evaluates the deficit around the fitted bubble
    sum (see :func:`deficit`); ``"grid"`` uses the plain grid operator.

    Returns
    -------
    (distance, deficit, quotient) with ``quotient = distance / regime_function(deficit)``.
    """
    fit = fit_bubbles(u, m, init, **fit_kw)
    if method == "background":
        gamma = deficit(u, fit.config if m else None, cfg)
    elif method == "grid":
        gamma = deficit(u, None, cfg)
    else:
        raise ValueError(f"unknown deficit method {method!r}")
    fit.deficit = gamma
    return fit.distance, gamma, fit.distance / regime_function(gamma, u.grid.dim.n)


class BubbleDecomposition(BaseEstimator):
    """Estimator wrapper around :func:`fit_bubbles`.

    Parameters
    ----------
    n_bubbles : int
    init : sequence of (lam, t_c)
        Required starting configuration.
    tol : float, optional
    max_iter : int
    collision_eps : float

    Attributes
    ----------
    gauges_ : tuple of Gauge
    distance_ : float
    residuals_ : ndarray
    result_ : FitResult
    """

    def __init__(self, n_bubbles: int = 1, init=None, tol=None, max_iter: int = 100, collision_eps: float = COLLISION_EPS):
        self.n_bubbles = n_bubbles
        self.init = init
        self.tol = tol
        self.max_iter = max_iter
        self.collision_eps = collision_eps

    def fit(self, X: GridFn, y=None):
        if self.n_bubbles and self.init is None:
            raise ValueError("an initial configuration is required")
        res = fit_bubbles(X, self.n_bubbles, self.init or [], tol=self.tol, max_iter=self.max_iter, collision_eps=self.collision_eps)
        self.result_ = res
        self.gauges_ = res.gauges
        self.distance_ = res.distance
        self.residuals_ = res.residuals
        self.grid_ = X.grid
        return self

    def _check(self):
        if not hasattr(self, "result_"):
            raise AttributeError("estimator is not fitted")

    def predict(self, grid: AxiGrid | None = None) -> GridFn:
        """Fitted bubble sum sampled on ``grid`` (default: the training grid)."""
        self._check()
        grid = grid or self.grid_
        if not self.gauges_:
            return GridFn(grid, np.zeros(grid.shape), "sigma")
        return sample(grid, self.result_.config.sigma_rt, "sigma")

    def transform(self, X: GridFn) -> GridFn:
        """Remainder ``X - sigma`` after subtracting the fitted bubbles."""
        self._check()
        return X - self.predict(X.grid)

    def score(self, X: GridFn, y=None) -> float:
        r = self.transform(X).flat
        return -math.sqrt(max(r @ (X.grid.stiffness @ r), 0.0))
