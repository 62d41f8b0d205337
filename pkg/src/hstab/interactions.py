"""Interaction integrals between bubbles and log-log scaling fits.

Deterministic values come from the reduced ``(r, t)`` quadrature for
configurations on the t-axis; Monte Carlo over full coordinates provides
independent estimates.  Asymptotic claims are checked by fitting
``log(value)`` against ``log(eps)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import ConvergenceError, check_exponent_pair, check_random_state
from .bubbles import BubbleConfig, Constants, TU_rt, bubble_rt, eps_pair, eval_gauge_U, eval_U, exact_constants, zmodes_rt
from .group import Dimension, Gauge, compose, dilate, dist
from .montecarlo import Component, Mixture, RadialLaw, bubble_proposal, mc_integrate, sample_unit_sphere, unit_ball_volume
from .quadrature import AxiQuadrature


def _constants(dim, constants=None) -> Constants:
    if constants is not None:
        return constants
    return exact_constants(dim)


# -- scaling reports ----------------------------------------------------------


@dataclass
class ScalingReport:
    """An eps sweep of one quantity with its log-log fit.

    ``kind`` states how the data are compared with ``predicted``:
    ``"equal"`` (slope within ``tolerance``), ``"at_least"``, ``"at_most"``,
    or ``"band"``: ``value / (eps^predicted |log eps|^band_log_power)`` stays
    within a factor ``tolerance`` over the sweep.
    """

    quantity: str
    eps: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    residual: float
    log_power: float = 0.0
    corrected_slope: float = float("nan")
    predicted: float = float("nan")
    tolerance: float = float("nan")
    kind: str = "equal"
    claim: str = ""
    seed: int | None = None
    band_log_power: float = 0.0
    extra: dict = field(default_factory=dict)

    def band_ratio(self) -> float:
        """max/min of the values normalized by the predicted law."""
        norm = self.values / (self.eps**self.predicted * np.abs(np.log(self.eps)) ** self.band_log_power)
        return float(norm.max() / norm.min())

    @property
    def passed(self) -> bool | None:
        if math.isnan(self.predicted):
            return None
        if self.kind == "equal":
            return abs(self.slope - self.predicted) <= self.tolerance
        if self.kind == "at_least":
            return self.slope >= self.predicted - self.tolerance
        if self.kind == "at_most":
            return self.slope <= self.predicted + self.tolerance
        if self.kind == "band":
            return self.band_ratio() <= self.tolerance
        raise ValueError(f"unknown comparison {self.kind!r}")

    @property
    def verdict(self) -> str:
        p = self.passed
        return "n/a" if p is None else ("pass" if p else "fail")

    def csv_rows(self):
        """Rows ``quantity,eps,value,err_estimate,slope,predicted,verdict``."""
        for e, v, d in zip(self.eps, self.values, self.errors):
            yield [self.quantity, repr(float(e)), repr(float(v)), repr(float(d)), repr(float(self.slope)), repr(float(self.predicted)), self.verdict]

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("eps", "values", "errors"):
            d[k] = [float(x) for x in d[k]]
        if self.kind == "band":
            d["band_ratio"] = self.band_ratio()
        d["passed"] = self.passed
        d["verdict"] = self.verdict
        return d


def fit_slope(eps, values, errors=None, quantity: str = "", predicted: float = float("nan"), tolerance: float = float("nan"), kind: str = "equal", log_powers=(0.0, 0.5, 1.0), min_decades: float = 1.5, claim: str = "", seed=None, band_log_power: float = 0.0) -> ScalingReport:
    """Least-squares line through ``(log eps, log value)``.

    The reported ``slope`` is the plain fit.  In addition, ``values`` are
    divided by ``|log eps|^q`` for each ``q`` in ``log_powers`` and the ``q``
    giving the straightest line is stored as ``log_power`` together with the
    slope of the corrected data.

    Raises
    ------
    ValueError
        Fewer than 4 points, nonpositive values, or a span below
        ``min_decades`` decades.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if eps.shape != values.shape or eps.ndim != 1:
        raise ValueError("eps and values must be matching 1-D sequences")
    if eps.size < 4:
        raise ValueError("a slope fit needs at least 4 points")
    if np.any(values <= 0) or np.any(eps <= 0):
        raise ValueError("log-log fit needs positive values")
    if np.log10(eps.max() / eps.min()) < min_decades - 1e-9:
        raise ValueError(f"eps sweep must span at least {min_decades} decades")
    errors = np.zeros_like(values) if errors is None else np.asarray(errors, dtype=float)
    x = np.log(eps)
    (slope, icpt), res, *_ = np.polyfit(x, np.log(values), 1, full=True)
    resid = float(np.sqrt(res[0] / eps.size)) if res.size else 0.0
    best = (np.inf, 0.0, slope)
    for q in log_powers:
        y = np.log(values) - q * np.log(np.abs(x))
        (s, _), r, *_ = np.polyfit(x, y, 1, full=True)
        rq = float(r[0]) if r.size else 0.0
        if rq < best[0] - 1e-12 * max(1.0, abs(best[0]) if np.isfinite(best[0]) else 1.0):
            best = (rq, float(q), float(s))
    return ScalingReport(quantity, eps, values, errors, float(slope), float(icpt), resid, best[1], best[2], float(predicted), float(tolerance), kind, claim, seed, band_log_power)


# -- pair integrals -------------------------------------------------------------


def _quad(constants, bubbles):
    return AxiQuadrature.for_bubbles(constants.dim, bubbles)


def pair_integral(alpha, beta, lam, t0, dim, constants=None, full_output=False, rtol=1e-2):
    """``int U^alpha (g U)^beta`` for ``g`` with scale ``lam`` centered at ``(0, t0)``.

    Parameters
    ----------
    alpha, beta : float
        Positive with ``alpha + beta = 2Q/(Q-2)``.
    lam : float
        Scale of the second bubble, ``0 < lam <= 1``.
    t0 : float
        Axis position of the second bubble.

    Returns
    -------
    value, or ``(value, err)`` with ``full_output``.

    Raises
    ------
    ConvergenceError
        If the quadrature error estimate exceeds ``rtol``.
    """
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    check_exponent_pair(alpha, beta, dim.sobolev_exponent)
    if not 0 < lam <= 1:
        raise ValueError("lam must lie in (0, 1]")
    c = _constants(dim, constants)
    q = _quad(c, [(1.0, 0.0), (lam, t0)])
    val, err = q.integrate(lambda r, t: bubble_rt(c, 1.0, 0.0, r, t) ** alpha * bubble_rt(c, lam, t0, r, t) ** beta, full_output=True)
    if err > rtol * abs(val):
        raise ConvergenceError(f"pair integral error estimate {err / abs(val):.2e} exceeds {rtol}")
    return (val, err) if full_output else val


def pair_integral_gauges(alpha, beta, g1: Gauge, g2: Gauge, constants: Constants, full_output=False):
    """``int (g1 U)^alpha (g2 U)^beta`` for two gauges centered on the t-axis."""
    if not (g1.is_axial() and g2.is_axial()):
        raise ValueError("gauges must be centered on the t-axis")
    c = constants
    b1, b2 = (g1.lam, g1.xi[-1]), (g2.lam, g2.xi[-1])
    return _quad(c, [b1, b2]).integrate(
        lambda r, t: bubble_rt(c, *b1, r, t) ** alpha * bubble_rt(c, *b2, r, t) ** beta, full_output=full_output
    )


def pair_integral_mc(alpha, beta, lam, t0, dim, constants=None, samples=400_000, seed=0):
    """Monte Carlo estimate of :func:`pair_integral` over full coordinates."""
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    c = _constants(dim, constants)
    n = dim.n
    g2 = Gauge.on_axis(n, lam, t0)
    prop = bubble_proposal(n, [(1.0, None), (lam, g2.xi)], tail=3.0)
    return mc_integrate(lambda x: eval_U(c, x) ** alpha * eval_gauge_U(c, g2, x) ** beta, prop, samples, seed=seed)


def unit_power_integral(alpha, dim) -> float:
    """``int (U/c0)^alpha``, the normalization-free power integral."""
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    c = Constants(dim, 1.0)
    return _quad(c, [(1.0, 0.0)]).integrate(lambda r, t: bubble_rt(c, 1.0, 0.0, r, t) ** alpha)


def pair_leading_constant(alpha, beta, lam, t0, dim, constants=None):
    """Quadrature value of ``int U^alpha (gU)^beta`` and its leading-order
    prediction ``c0^(alpha+beta) I_alpha lam^(n beta) / (1 + lam^4 t0^2)^(n beta / 2)``,
    where ``I_alpha = int (U/c0)^alpha``.

    Returns
    -------
    (computed, predicted)
    """
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    if not alpha > beta > 0:
        raise ValueError("the leading term needs alpha > beta > 0")
    c = _constants(dim, constants)
    n = dim.n
    computed = pair_integral(alpha, beta, lam, t0, dim, c)
    ialpha = unit_power_integral(alpha, dim)
    predicted = c.c0 ** (alpha + beta) * ialpha * lam ** (n * beta) / (1.0 + lam**4 * t0**2) ** (n * beta / 2)
    return computed, predicted


def pair_eps(lam, t0, n) -> float:
    return eps_pair(Gauge.identity(n), Gauge.on_axis(n, lam, t0))


def zmode_ratio(lambda_i_over_j, t_sep, dim, constants=None) -> float:
    """``int U_j^(p-1) U_i Z_j / int U_j^p U_i`` with ``Z_j`` the dilation mode
    of the unit bubble ``U_j`` and ``U_i`` of relative scale ``lambda_i_over_j``
    centered at ``(0, t_sep)``."""
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    if not 0 < lambda_i_over_j <= 1:
        raise ValueError("the ratio needs lam_i <= lam_j")
    c = _constants(dim, constants)
    p, lam = dim.p, lambda_i_over_j
    q = _quad(c, [(1.0, 0.0), (lam, t_sep)])

    def uj(r, t):
        return bubble_rt(c, 1.0, 0.0, r, t)

    def ui(r, t):
        return bubble_rt(c, lam, t_sep, r, t)

    num = q.integrate(lambda r, t: uj(r, t) ** (p - 1) * ui(r, t) * zmodes_rt(c, 1.0, 0.0, r, t)[1])
    den = q.integrate(lambda r, t: uj(r, t) ** p * ui(r, t))
    return num / den


def zmode_limit(dim) -> float:
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    Q = dim.Q
    return -((Q - 2) ** 2) / (2 * (Q + 2))


# -- the interaction term f --------------------------------------------------------


def _config_quad(config: BubbleConfig, extra=()):
    return _quad(config.constants, [(g.lam, g.xi[-1]) for g in config.gauges] + list(extra))


def f_lp_norm(config: BubbleConfig, dim=None, full_output=False):
    """``int |f|^(2Q/(Q+2))`` for an axial configuration (the power of the
    ``L^(2Q/(Q+2))`` norm, not its root)."""
    dim = config.dim
    e = 2 * dim.Q / (dim.Q + 2)
    return _config_quad(config).integrate(lambda r, t: np.abs(config.f_rt(r, t)) ** e, full_output=full_output)


def f_lp_norm_mc(config: BubbleConfig, samples=400_000, seed=0):
    """Monte Carlo version of :func:`f_lp_norm` over full coordinates."""
    dim = config.dim
    e = 2 * dim.Q / (dim.Q + 2)
    prop = bubble_proposal(dim.n, [(g.lam, g.xi) for g in config.gauges], tail=3.0)
    return mc_integrate(lambda x: np.abs(config.f(x)) ** e, prop, samples, seed=seed)


def kernel_double_norm(config: BubbleConfig, c_Q: float, dim=None, samples: int = 1_000_000, seed=0, log_span=None, max_rel_error=0.03, batch=100_000):
    """``c_Q int int F(xi) F(eta) |eta^{-1} o xi|^(2-Q)`` with ``F`` the
    product of all bubbles in the configuration.

    For two bubbles this is the squared dual norm of ``U V`` written through
    the fundamental solution.  Points are sampled in full coordinates: the
    outer point from a mixture around the bubble cores, the inner one from a
    mixture of a component singular at the outer point and the core mixture.

    Returns
    -------
    (value, std_error)

    Raises
    ------
    ConvergenceError
        If the relative standard error exceeds ``max_rel_error``.
    """
    dim = config.dim
    n, Q = dim.n, dim.Q
    rng = check_random_state(seed)
    if log_span is None:
        log_span = max(1.0, 1.0 / math.sqrt(max(config.eps, 1e-300)))
    core = RadialLaw.core_tail(2 * n + 1, 3.0, log_span)
    outer = Mixture(tuple(Component(np.asarray(g.xi), 1.0 / g.lam, core) for g in config.gauges), np.ones(config.m))
    sing = RadialLaw.core_tail(1.0, 3.0, log_span)
    norm_const = Q * unit_ball_volume(n)

    def F(x):
        return np.prod(config.bubble_values(x), axis=0)

    s1 = s2 = 0.0
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        eta = outer.sample(k, rng)
        q_eta = outer.pdf(eta)
        use_sing = rng.uniform(size=k) < 0.5
        xs = compose(eta, dilate(sing.sample(k, rng), sample_unit_sphere(n, k, rng)))
        xo = outer.sample(k, rng)
        xi = np.where(use_sing[:, None], xs, xo)
        d = dist(xi, eta)
        with np.errstate(divide="ignore"):
            q_xi = 0.5 * sing.pdf(d) / (norm_const * d ** (Q - 1)) + 0.5 * outer.pdf(xi)
            r = F(eta) * F(xi) * d ** (2.0 - Q) / (q_eta * q_xi)
        s1 += r.sum()
        s2 += (r * r).sum()
        done += k
    mean = s1 / samples
    se = math.sqrt(max(s2 / samples - mean * mean, 0.0) / (samples - 1))
    if mean <= 0 or se > max_rel_error * mean:
        raise ConvergenceError(f"kernel estimate too noisy: relative error {se / max(mean, 1e-300):.3f}")
    return c_Q * mean, c_Q * se


# -- pairing lower bound -------------------------------------------------------------


def _cutoff(s):
    x = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def _cutoff_deriv(s):
    x = np.clip(s - 1.0, 0.0, 1.0)
    return -30.0 * x**2 * (1.0 - x) ** 2


def cutoff_rt(r, t, radius):
    """Smooth radial cutoff: 1 for ``|xi| <= radius``, 0 beyond ``2 radius``."""
    return _cutoff((r**4 + t**2) ** 0.25 / radius)


def pairing_lower_bound(config: BubbleConfig, dim=None, grid=None, full_output=False):
    """Lower bound ``int f eta / ||eta||_D1`` for the dual norm of ``f``.

    ``eta`` is a smooth cutoff centered at the first bubble, equal to one on
    the ball of radius ``1/(4 sqrt(eps))``.  With ``grid`` both factors are
    computed on the grid (so the bound is exact against the grid's dual
    norm); otherwise by quadrature, using ``|X |xi||^2 = |z|^2/|xi|^2``.
    """
    dim = config.dim
    eps = config.eps
    if not eps > 0:
        raise ValueError("need at least two bubbles")
    tc = config.gauges[0].xi[-1]
    radius = 1.0 / (4.0 * math.sqrt(eps))
    if grid is not None:
        from .grid import d1_norm, integrate, sample

        eta = sample(grid, lambda r, t: cutoff_rt(r, t - tc, radius))
        f = sample(grid, config.f_rt)
        pair = integrate(grid, f * eta)
        nrm = d1_norm(grid, eta, check=False)
    else:
        q = _config_quad(config, [(1.0 / radius, tc)])
        pair = q.integrate(lambda r, t: config.f_rt(r, t) * cutoff_rt(r, t - tc, radius))
        qe = _quad(config.constants, [(1.0 / radius, tc)])

        def grad2(r, t):
            s = ((r**4 + (t - tc) ** 2) ** 0.25)
            with np.errstate(divide="ignore", invalid="ignore"):
                g = np.where(s > 0, (_cutoff_deriv(s / radius) / radius) ** 2 * r**2 / s**2, 0.0)
            return g

        nrm = math.sqrt(qe.integrate(grad2))
    lb = pair / nrm
    if full_output:
        return lb, {"pairing": pair, "cutoff_norm": nrm, "radius": radius}
    return lb


# -- expansion of the projected interaction --------------------------------------------


def expansion_check(config: BubbleConfig, dim=None, k: int = 0, full_output=False):
    """Normalized remainder of the expansion of ``int f Z_k`` over the other bubbles.

    Returns ``|int f Z_k - p sum_{i != k} int U_k^(p-1) U_i Z_k| / eps^n``
    where ``Z_k`` is the dilation mode of bubble ``k``.
    """
    dim = config.dim
    if config.m == 1:
        return (0.0, {"lhs": 0.0, "rhs": 0.0}) if full_output else 0.0
    c = config.constants
    p, n = dim.p, dim.n
    gk = config.gauges[k]
    lk, tk = gk.lam, gk.xi[-1]
    q = _config_quad(config)

    def zk(r, t):
        return zmodes_rt(c, lk, tk, r, t)[1]

    lhs = q.integrate(lambda r, t: config.f_rt(r, t) * zk(r, t))
    rhs = 0.0
    for i, g in enumerate(config.gauges):
        if i == k:
            continue
        rhs += p * q.integrate(
            lambda r, t, g=g: bubble_rt(c, lk, tk, r, t) ** (p - 1) * bubble_rt(c, g.lam, g.xi[-1], r, t) * zk(r, t)
        )
    val = abs(lhs - rhs) / config.eps**n
    return (val, {"lhs": lhs, "rhs": rhs}) if full_output else val


def dilation_identity_ratio(dim, constants=None) -> float:
    """``int TU U^(p-1) / int U^p`` with ``TU`` the dilation derivative of ``U``.

    Integrating ``T(U^p)/p`` by parts against Haar measure gives ``-Q/p``.
    """
    dim = dim if isinstance(dim, Dimension) else Dimension(int(dim))
    c = _constants(dim, constants)
    p = dim.p
    q = _quad(c, [(1.0, 0.0)])
    num = q.integrate(lambda r, t: TU_rt(c, r, t) * bubble_rt(c, 1.0, 0.0, r, t) ** (p - 1))
    den = q.integrate(lambda r, t: bubble_rt(c, 1.0, 0.0, r, t) ** p)
    return num / den
