"""Poisson solves, dual norms and the projected linearized problem.

All operators act on flattened grid vectors.  With stiffness ``A`` and mass
``M`` from :class:`hstab.grid.AxiGrid`:

* ``(-Delta)^{-1} f`` is ``A^{-1} M f``;
* ``||f||_{D^-1}^2 = f . M . A^{-1} M f``;
* ``K x = p A^{-1} M (sigma^(p-1) x)`` is self-adjoint in the ``A`` inner
  product;
* ``P`` is the ``A``-orthogonal projection onto the complement of the
  sampled derivative modes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import CalibrationError, ConvergenceError, check_random_state
from .bubbles import BubbleConfig, eval_U, n_from_values
from .grid import AxiGrid, GridFn, _decay_check
from .group import Dimension, HPoint, dist
from .montecarlo import Component, Mixture, RadialLaw, mc_integrate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the linear solves.

    Parameters
    ----------
    cg_tolerance : float
        Relative residual target, in ``(0, 1e-4]``.
    max_iterations : int
    preconditioner : {"diagonal", "none"}
        Used by the conjugate-gradient path.
    method : {"direct", "cg"}
        ``"direct"`` factors ``A`` once per grid and reuses the factors.
    inner : {"bordered", "gmres"}
        How ``(I - P K) x = y`` is solved on the mode complement.
    """

    cg_tolerance: float = 1e-10
    max_iterations: int = 5000
    preconditioner: str = "diagonal"
    method: str = "direct"
    inner: str = "bordered"
    fixed_point_tol: float = 1e-8
    max_fixed_point: int = 60

    def __post_init__(self):
        if not 0 < self.cg_tolerance <= 1e-4:
            raise ValueError("cg_tolerance must lie in (0, 1e-4]")
        if self.preconditioner not in ("diagonal", "none"):
            raise ValueError("preconditioner must be 'diagonal' or 'none'")
        if self.method not in ("direct", "cg"):
            raise ValueError("method must be 'direct' or 'cg'")
        if self.inner not in ("bordered", "gmres"):
            raise ValueError("inner must be 'bordered' or 'gmres'")


DEFAULT = SolverConfig()


def _lu(grid: AxiGrid):
    lu = grid._cache.get("lu")
    if lu is None:
        lu = spla.splu(grid.stiffness, permc_spec="COLAMD")
        grid._cache["lu"] = lu
    return lu


def stiffness_solve(grid: AxiGrid, rhs: np.ndarray, cfg: SolverConfig = DEFAULT) -> np.ndarray:
    """Solve ``A x = rhs`` for one or more right-hand sides (columns)."""
    if cfg.method == "direct":
        return _lu(grid).solve(np.asarray(rhs, dtype=float))
    A = grid.stiffness
    pre = None
    if cfg.preconditioner == "diagonal":
        d = A.diagonal()
        pre = spla.LinearOperator(A.shape, matvec=lambda x: x / d)
    rhs = np.asarray(rhs, dtype=float)
    cols = rhs[:, None] if rhs.ndim == 1 else rhs
    out = np.empty_like(cols)
    for k in range(cols.shape[1]):
        b = cols[:, k]
        if not np.any(b):
            out[:, k] = 0.0
            continue
        x, info = spla.cg(A, b, rtol=cfg.cg_tolerance, atol=0.0, maxiter=cfg.max_iterations, M=pre)
        if info != 0:
            raise ConvergenceError(f"conjugate gradients stopped after {cfg.max_iterations} iterations")
        out[:, k] = x
    return out[:, 0] if rhs.ndim == 1 else out


def solve_poisson(grid: AxiGrid, f: GridFn, cfg: SolverConfig = DEFAULT) -> GridFn:
    """Solve ``-L w = f`` with zero values outside the box."""
    w = stiffness_solve(grid, grid.mass * f.flat, cfg)
    return GridFn(grid, w, "omega")


def dminus1_norm(grid: AxiGrid, f: GridFn, cfg: SolverConfig = DEFAULT, check: bool = True) -> float:
    """Dual norm ``sqrt(int f w)`` where ``-L w = f``."""
    if check:
        _decay_check(f, "right-hand side")
    w = solve_poisson(grid, f, cfg)
    return float(np.sqrt(max(np.dot(grid.mass * f.flat, w.flat), 0.0)))


def green_constant(n: int) -> float:
    """Reference value ``2^(n-4) Gamma(n/2)^2 / pi^(n+1)`` for the vector
    fields ``X_j = d_xj + 2 y_j d_t``."""
    from scipy.special import gamma

    return 2.0 ** (n - 4) * gamma(n / 2) ** 2 / np.pi ** (n + 1)


def green_calibrate(grid_or_dim, cfg: SolverConfig = DEFAULT, samples: int = 200_000, n_probes: int = 10, seed=0, full_output: bool = False, constants=None):
    """Calibrate ``c_Q`` in ``U(eta) = c_Q int |eta^{-1} o xi|^{2-Q} U^p(xi) dxi``.

    The convolution is estimated by Monte Carlo at ``n_probes`` points; the
    proposal mixes a component singular at the probe (radial density ``s``
    near 0) with one following the bubble tail.

    Raises
    ------
    CalibrationError
        If the ratios at the probes spread by more than 5%.
    """
    from .bubbles import exact_constants

    if isinstance(grid_or_dim, AxiGrid):
        dim = grid_or_dim.dim
    elif isinstance(grid_or_dim, Dimension):
        dim = grid_or_dim
    else:
        dim = Dimension(int(grid_or_dim))
    n, Q, p = dim.n, dim.Q, dim.p
    c = constants or exact_constants(dim)
    rng = check_random_state(seed)
    origin = Component(np.zeros(2 * n + 1), 1.0, RadialLaw.core_tail(2 * n + 1, 3.0))
    ratios, errs = [], []
    for k in range(n_probes):
        d = rng.standard_normal(2 * n + 1)
        eta = np.array(d * np.r_[np.ones(2 * n), 1.0] * 0.6 * (k + 1) / n_probes)
        sing = Component(eta, 1.0, RadialLaw.core_tail(1.0, 3.0))
        prop = Mixture((sing, origin), np.array([0.5, 0.5]))

        def kern(xi, eta=eta):
            with np.errstate(divide="ignore"):
                return dist(xi, eta) ** (2 - Q) * eval_U(c, xi) ** p

        val, err = mc_integrate(kern, prop, samples, seed=rng)
        u = float(eval_U(c, eta))
        ratios.append(u / val)
        errs.append(err / val * u / val)
    ratios = np.array(ratios)
    cq = float(np.mean(ratios))
    spread = float((ratios.max() - ratios.min()) / cq)
    if spread > 0.05:
        raise CalibrationError(f"Green ratios spread by {spread:.3f}")
    if full_output:
        return cq, {"ratios": ratios, "spread": spread, "std_errors": np.array(errs)}
    return cq


# -- derivative-mode basis ------------------------------------------------------


@dataclass
class ModeBasis:
    """``A``-orthonormal basis of the sampled axisymmetric derivative modes.

    Columns of ``E`` (shape ``(grid.size, k)``) satisfy ``E.T A E = I``.
    """

    grid: AxiGrid
    E: np.ndarray
    raw: np.ndarray = field(repr=False)
    labels: list

    @classmethod
    def from_config(cls, config: BubbleConfig, grid: AxiGrid) -> "ModeBasis":
        R, T = grid.mesh()
        cols, labels = [], []
        n = config.constants.n
        for i, (zt, zl) in enumerate(config.modes_rt(R, T)):
            cols += [zt.ravel(), zl.ravel()]
            labels += [(i, 2 * n + 1), (i, 2 * n + 2)]
        return cls.from_vectors(grid, np.column_stack(cols), labels)

    @classmethod
    def from_vectors(cls, grid: AxiGrid, V: np.ndarray, labels=None) -> "ModeBasis":
        A = grid.stiffness
        V = np.asarray(V, dtype=float)
        AV = A @ V
        G = V.T @ AV
        # orthonormalize with the inverse Cholesky factor, then polish once
        L = np.linalg.cholesky(G)
        E = np.linalg.solve(L, V.T).T
        G2 = E.T @ (A @ E)
        E = E @ np.linalg.inv(np.linalg.cholesky(G2)).T
        return cls(grid, E, V, list(labels or range(V.shape[1])))

    @property
    def k(self) -> int:
        return self.E.shape[1]

    def gram(self) -> np.ndarray:
        return self.E.T @ (self.grid.stiffness @ self.E)

    def coefficients(self, x: np.ndarray) -> np.ndarray:
        return self.E.T @ (self.grid.stiffness @ x)

    def project(self, x: np.ndarray) -> np.ndarray:
        """``A``-orthogonal projection off the span of the modes."""
        return x - self.E @ self.coefficients(x)


def project_off(grid: AxiGrid, u: GridFn, basis: ModeBasis) -> GridFn:
    """Remove the ``D1``-orthogonal expansion of ``u`` over the basis."""
    return GridFn(grid, basis.project(u.flat), u.tag)


# -- the linearized operator ------------------------------------------------------


class LinearizedProblem:
    """Operators of the linearization around a bubble sum on a grid.

    Parameters
    ----------
    config : BubbleConfig
        Axial configuration defining ``sigma``.
    grid : AxiGrid
    cfg : SolverConfig
    """

    def __init__(self, config: BubbleConfig, grid: AxiGrid, cfg: SolverConfig = DEFAULT):
        if not config.is_axial():
            raise ValueError("configuration must lie on the t-axis")
        self.config, self.grid, self.cfg = config, grid, cfg
        self.p = config.constants.p
        R, T = grid.mesh()
        self.bubbles = config.bubble_values_rt(R, T).reshape(config.m, -1)
        self.sigma = self.bubbles.sum(axis=0)
        self.f = config.f_rt(R, T).ravel()
        self.weight = self.p * self.sigma ** (self.p - 1)
        self.basis = ModeBasis.from_config(config, grid)
        self._bordered = None
        self._shifted = None

    @property
    def A(self):
        return self.grid.stiffness

    @property
    def M(self) -> np.ndarray:
        return self.grid.mass

    def inv_lap(self, g: np.ndarray) -> np.ndarray:
        """``(-L)^{-1}`` of a pointwise density ``g``."""
        return stiffness_solve(self.grid, self.M * g, self.cfg)

    def K(self, x: np.ndarray) -> np.ndarray:
        return self.inv_lap(self.weight * x)

    def N(self, rho: np.ndarray) -> np.ndarray:
        return n_from_values(self.sigma, rho, self.p)

    def a_norm(self, x: np.ndarray) -> float:
        return float(np.sqrt(max(x @ (self.A @ x), 0.0)))

    # (I - P K) restricted to the complement of the modes
    def _bordered_lu(self):
        if self._bordered is None:
            A = self.A
            AE = A @ self.basis.E
            core = A - sp.diags(self.M * self.weight)
            k = AE.shape[1]
            big = sp.bmat([[core, sp.csc_matrix(-AE)], [sp.csc_matrix(AE.T), None]], format="csc")
            self._bordered = (spla.splu(big, permc_spec="COLAMD"), k)
        return self._bordered

    def solve_projected(self, y: np.ndarray) -> np.ndarray:
        """Solve ``x - P K x = y`` for ``x`` orthogonal to the modes
        (``y`` must already be orthogonal)."""
        if self.cfg.inner == "bordered":
            lu, k = self._bordered_lu()
            rhs = np.r_[self.A @ y, np.zeros(k)]
            return lu.solve(rhs)[: self.grid.size]
        P = self.basis.project
        op = spla.LinearOperator((self.grid.size,) * 2, matvec=lambda x: x - P(self.K(P(x))))
        x, info = spla.gmres(op, y, rtol=1e-12, atol=0.0, restart=60, maxiter=50)
        if info != 0:
            raise ConvergenceError("projected inner solve stagnated")
        return P(x)

    def solve_unprojected(self, y: np.ndarray) -> np.ndarray:
        """Solve ``x - K x = y`` on the full space."""
        if self._shifted is None:
            core = (self.A - sp.diags(self.M * self.weight)).tocsc()
            self._shifted = spla.splu(core, permc_spec="COLAMD")
        return self._shifted.solve(self.A @ y)


@dataclass
class RhoResult:
    """Outcome of the fixed-point construction of the remainder."""

    rho: GridFn
    iterations: int
    contraction: float
    history: list
    orthogonality: np.ndarray
    linear_part: GridFn
    problem: LinearizedProblem = field(repr=False)

    @property
    def d1_norm(self) -> float:
        return self.problem.a_norm(self.rho.flat)


def solve_rho(config: BubbleConfig, grid: AxiGrid, cfg: SolverConfig = DEFAULT, problem: LinearizedProblem | None = None) -> RhoResult:
    """Fixed-point construction of the remainder orthogonal to all modes.

    Iterates ``rho <- (I - P K)^{-1} P (-L)^{-1} (f + N(rho))`` from zero
    until successive iterates agree to ``cfg.fixed_point_tol`` in ``D1``
    (relative to the first iterate).  The contraction factor is the largest
    observed ratio of successive update norms.

    Raises
    ------
    ConvergenceError
        If the updates stop shrinking (ratio >= 1) or the iteration cap is hit.
    """
    prob = problem or LinearizedProblem(config, grid, cfg)
    P = prob.basis.project
    rho = np.zeros(grid.size)
    history = []
    scale = None
    linear = None
    ratio_max = 0.0
    for it in range(1, cfg.max_fixed_point + 1):
        y = P(prob.inv_lap(prob.f + prob.N(rho)))
        new = prob.solve_projected(y)
        step = prob.a_norm(new - rho)
        if linear is None:
            linear = new.copy()
            scale = max(prob.a_norm(new), np.finfo(float).tiny)
        if history and history[-1] > 0:
            ratio_max = max(ratio_max, step / history[-1])
        history.append(step)
        rho = new
        if step <= cfg.fixed_point_tol * scale:
            break
        if len(history) >= 3 and step >= history[-2] and step > 1e3 * cfg.fixed_point_tol * scale:
            raise ConvergenceError(f"fixed-point updates stopped contracting (ratio {step / history[-2]:.3f})")
    else:
        raise ConvergenceError("fixed-point iteration did not converge")
    orth = prob.basis.raw.T @ (prob.A @ rho)
    norms = np.sqrt(np.einsum("ij,ij->j", prob.basis.raw, prob.A @ prob.basis.raw))
    orth = orth / (norms * max(prob.a_norm(rho), np.finfo(float).tiny))
    return RhoResult(GridFn(grid, rho, "rho"), it, ratio_max, history, orth, GridFn(grid, linear, "rho_linear"), prob)


def projected_linear_solution(problem: LinearizedProblem) -> GridFn:
    """``P (-L)^{-1} f``, the leading-order part of the remainder."""
    return GridFn(problem.grid, problem.basis.project(problem.inv_lap(problem.f)), "P_inv_lap_f")


def coercivity_estimate(config: BubbleConfig, grid: AxiGrid, cfg: SolverConfig = DEFAULT, projected: bool = True, iterations: int = 200, tol: float = 1e-6, seed=0, problem: LinearizedProblem | None = None) -> float:
    """Smallest ``|eigenvalue|`` of ``I - K`` (``A``-self-adjoint), restricted
    to the mode complement when ``projected``, by inverse power iteration.

    Returns the estimate ``mu_min``.
    """
    prob = problem or LinearizedProblem(config, grid, cfg)
    rng = check_random_state(seed)
    R, T = grid.mesh()
    # smooth random start built from bubble-scale Gaussians
    x = np.zeros(grid.size)
    for lam, tc in zip(config.lams, config.centers_t):
        for _ in range(3):
            a, b = rng.uniform(0.5, 2.0, 2)
            x += rng.standard_normal() * np.exp(-((lam * R / a) ** 2) - (lam**2 * (T - tc) / b) ** 2).ravel()
    P = prob.basis.project if projected else (lambda v: v)
    solve = prob.solve_projected if projected else prob.solve_unprojected
    x = P(x)
    x /= prob.a_norm(x)
    mu = np.inf
    for _ in range(iterations):
        y = P(solve(x))
        ny = prob.a_norm(y)
        if not np.isfinite(ny) or ny == 0:
            raise ConvergenceError("inverse iteration broke down")
        new_mu = 1.0 / ny
        x = y / ny
        if abs(new_mu - mu) <= tol * new_mu:
            mu = new_mu
            break
        mu = new_mu
    return float(mu)
