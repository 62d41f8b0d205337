import numpy as np
import pytest

from hstab.bubbles import BubbleConfig, exact_constants
from hstab.grid import GridFn, build_grid
from hstab.group import Gauge, gauge_compose
from hstab.interactions import (
    ScalingReport,
    expansion_check,
    f_lp_norm,
    f_lp_norm_mc,
    fit_slope,
    kernel_double_norm,
    pair_eps,
    pair_integral,
    pair_integral_gauges,
    pair_integral_mc,
    pair_leading_constant,
    pairing_lower_bound,
    unit_power_integral,
    zmode_limit,
    zmode_ratio,
)
from hstab.solver import dminus1_norm, green_constant


def _pair(n, eps):
    return BubbleConfig.on_axis(exact_constants(n), [1.0, 1.0], [0.0, -1.0 / eps])


# -- fit_slope --------------------------------------------------------------------


def test_exact_power_law():
    eps = np.geomspace(1e-3, 1e-1, 6)
    rep = fit_slope(eps, eps**2, predicted=2.0, tolerance=0.01)
    assert rep.slope == pytest.approx(2.0, abs=1e-12)
    assert rep.passed and rep.verdict == "pass"


def test_log_correction_selected():
    eps = np.geomspace(1e-4, 1e-1, 8)
    rep = fit_slope(eps, eps**2 * np.abs(np.log(eps)))
    assert rep.log_power == 1.0
    assert rep.corrected_slope == pytest.approx(2.0, abs=1e-10)
    assert rep.verdict == "n/a"


def test_noisy_power_law(rng):
    eps = np.geomspace(1e-3, 1e-1, 10)
    slopes = [fit_slope(eps, eps**1.5 * (1 + 0.01 * rng.standard_normal(eps.size))).slope for _ in range(50)]
    assert np.all(np.abs(np.array(slopes) / 1.5 - 1) <= 0.02)


def test_fit_slope_preconditions():
    eps = np.geomspace(1e-3, 1e-1, 5)
    with pytest.raises(ValueError):
        fit_slope(eps[:3], eps[:3])
    with pytest.raises(ValueError):
        fit_slope(eps, -eps)
    with pytest.raises(ValueError):
        fit_slope(np.geomspace(1e-2, 1e-1, 5), np.geomspace(1e-2, 1e-1, 5))


def test_report_kinds_and_rows():
    eps = np.geomspace(1e-3, 1e-1, 5)
    vals = eps**2 * np.abs(np.log(eps)) ** 0.5
    assert fit_slope(eps, vals, predicted=2.0, tolerance=2.0, kind="band", band_log_power=0.5).band_ratio() == pytest.approx(1.0)
    assert fit_slope(eps, eps**3, predicted=2.5, tolerance=0.1, kind="at_least").passed
    assert not fit_slope(eps, eps**3, predicted=2.5, tolerance=0.1, kind="at_most").passed
    rep = fit_slope(eps, eps, errors=0.01 * eps, quantity="q", predicted=1.0, tolerance=0.1)
    rows = list(rep.csv_rows())
    assert len(rows) == 5 and rows[0][0] == "q" and rows[0][-1] == "pass"
    assert float(rows[0][1]) == eps[0]
    d = rep.to_dict()
    assert d["passed"] is True and isinstance(d["eps"], list)
    with pytest.raises(ValueError):
        ScalingReport("x", eps, eps, eps, 1.0, 0.0, 0.0, predicted=1.0, kind="weird").passed


# -- pair integrals ------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2])
def test_coincident_pair_is_critical_mass(n):
    c = exact_constants(n)
    s = c.dim.sobolev_exponent
    mass = unit_power_integral(s, n) * c.c0**s
    assert pair_integral(c.p, 1.0, 1.0, 0.0, n) == pytest.approx(mass, rel=1e-8)


def test_pair_integral_rejects_bad_exponents():
    with pytest.raises(ValueError):
        pair_integral(2.0, 1.0, 0.5, 0.0, 1)
    with pytest.raises(ValueError):
        pair_integral(3.0, 1.0, 2.0, 0.0, 1)


def test_pair_integral_monte_carlo_agreement():
    val = pair_integral(3.0, 1.0, 0.05, 0.0, 1)
    mc, se = pair_integral_mc(3.0, 1.0, 0.05, 0.0, 1, samples=400_000, seed=5)
    assert pair_eps(0.05, 0.0, 1) == pytest.approx(0.05)
    assert mc == pytest.approx(val, rel=0.03)
    assert se <= 0.01 * mc


def test_leading_constant_converges():
    ratios = []
    for lam in (1e-1, 1e-2, 1e-3):
        comp, pred = pair_leading_constant(3.0, 1.0, lam, 0.0, 1)
        ratios.append(comp / pred)
    assert abs(ratios[-1] - 1) <= 0.1
    assert abs(ratios[0] - 1) > abs(ratios[1] - 1) > abs(ratios[2] - 1)


def test_leading_constant_separated_bubbles():
    # on the axis the bracket reduces to 1 + lam^4 t0^2
    comp, pred = pair_leading_constant(3.0, 1.0, 1.0, 1e3, 1)
    c = exact_constants(1)
    expect = c.c0**4 * unit_power_integral(3.0, 1) / (1 + 1e6) ** 0.5
    assert pred == pytest.approx(expect, rel=1e-12)
    assert comp / pred == pytest.approx(1.0, rel=0.1)


@pytest.mark.parametrize("n", [1, 2])
def test_common_gauge_invariance(n):
    c = exact_constants(n)
    g1, g2 = Gauge.on_axis(n, 1.0, 0.0), Gauge.on_axis(n, 0.4, 3.0)
    base = pair_integral_gauges(c.p, 1.0, g1, g2, c)
    for h in (Gauge.on_axis(n, 2.5, 0.0), Gauge.on_axis(n, 1.0, -7.0), Gauge.on_axis(n, 0.3, 11.0)):
        moved = pair_integral_gauges(c.p, 1.0, gauge_compose(h, g1), gauge_compose(h, g2), c)
        assert moved == pytest.approx(base, rel=1e-6)


# -- modes -------------------------------------------------------------------------


def test_zmode_limits():
    assert zmode_limit(1) == pytest.approx(-1.0 / 3.0)
    assert zmode_limit(2) == pytest.approx(-1.0)


def test_zmode_ratio_monotone_approach():
    lim = zmode_limit(1)
    errs = [abs(zmode_ratio(1.0, -1.0 / e, 1) / lim - 1) for e in (1e-1, 1e-2, 1e-3)]
    assert errs[0] > errs[1] > errs[2] and errs[2] <= 0.1
    with pytest.raises(ValueError):
        zmode_ratio(2.0, 0.0, 1)


# -- f -----------------------------------------------------------------------------


def test_f_lp_norm_coincident():
    c = exact_constants(3)
    Q = c.dim.Q
    cfg = BubbleConfig.on_axis(c, [1.0, 1.0], [0.0, 0.0])
    s = c.dim.sobolev_exponent
    mass = unit_power_integral(s, 3) * c.c0**s
    expect = (2**c.p - 2) ** (2 * Q / (Q + 2)) * mass
    assert f_lp_norm(cfg) == pytest.approx(expect, rel=1e-8)


def test_f_lp_norm_monte_carlo():
    cfg = _pair(3, 0.05)
    val = f_lp_norm(cfg)
    mc, se = f_lp_norm_mc(cfg, samples=400_000, seed=3)
    assert mc == pytest.approx(val, rel=0.05)


def test_f_lp_norm_bounded_by_critical_power():
    eps = [1e-2, 1e-3, 1e-4]
    scaled = [f_lp_norm(_pair(3, e)) / e**4 for e in eps]
    assert scaled[0] < scaled[1] < scaled[2]
    assert scaled[2] / scaled[1] < 1.05


def test_kernel_norm_symmetric():
    c = exact_constants(2)
    a = BubbleConfig.on_axis(c, [1.0, 0.7], [0.0, -10.0])
    b = BubbleConfig.on_axis(c, [0.7, 1.0], [-10.0, 0.0])
    va, sa = kernel_double_norm(a, green_constant(2), samples=200_000, seed=1)
    vb, sb = kernel_double_norm(b, green_constant(2), samples=200_000, seed=2)
    assert abs(va - vb) <= 4 * np.hypot(sa, sb)


def test_pairing_bound_below_dual_norm():
    for eps in (2e-2, 5e-3, 1e-3):
        cfg = _pair(3, eps)
        s = 1.0 / eps
        R = 4 * np.sqrt(s) + 20
        g = build_grid(3, R, -s - R * R, R * R, 256, centers=[(0, 0.0), (0, -s)])
        f = GridFn(g, cfg.f_rt(*g.mesh()))
        assert pairing_lower_bound(cfg, grid=g) <= dminus1_norm(g, f, check=False) * (1 + 1e-9)


def test_cutoff_norm_scaling():
    Q = 8
    norms = [pairing_lower_bound(_pair(3, e), full_output=True)[1]["cutoff_norm"] for e in (1e-2, 1e-3, 1e-4)]
    scaled = np.array(norms) / np.array([1e-2, 1e-3, 1e-4]) ** ((2 - Q) / 4)
    np.testing.assert_allclose(scaled, scaled[0], rtol=0.1)


# -- expansion ---------------------------------------------------------------------


def test_expansion_single_bubble_trivial():
    val, info = expansion_check(BubbleConfig.on_axis(exact_constants(1), [1.0], [0.0]), full_output=True)
    assert val == 0.0 and info["lhs"] == info["rhs"] == 0.0


def test_expansion_remainder_decays_n1():
    rel, norm = [], []
    for e in (1e-1, 1e-2, 1e-3):
        val, info = expansion_check(_pair(1, e), full_output=True)
        norm.append(val)
        rel.append(abs(info["lhs"] - info["rhs"]) / abs(info["rhs"]))
    assert norm[0] > norm[1] > norm[2]
    assert rel[0] > rel[1] > rel[2]
    assert rel[2] <= 0.1


def test_expansion_three_bubbles():
    c = exact_constants(1)
    rel = []
    for e in (1e-1, 1e-2, 1e-3):
        cfg = BubbleConfig.on_axis(c, [1.0, 1.0, 1.0], [0.0, -1.0 / e, 1.0 / e])
        val, info = expansion_check(cfg, full_output=True)
        rel.append(abs(info["lhs"] - info["rhs"]) / abs(info["rhs"]))
    assert rel[0] > rel[1] > rel[2]
