import numpy as np
import pytest
from scipy import integrate as sci

from hstab.bubbles import bubble_rt, eval_U, eval_Z, exact_constants
from hstab.group import Gauge, hnorm
from hstab.montecarlo import RadialLaw, bubble_proposal, mc_integrate, sample_unit_sphere, unit_ball_volume
from hstab.quadrature import geometric_breaks, integrate_rt, sphere_area


def test_sphere_area_values():
    assert sphere_area(1) == pytest.approx(2 * np.pi)
    assert sphere_area(2) == pytest.approx(2 * np.pi**2)
    assert sphere_area(3) == pytest.approx(np.pi**3)


def test_geometric_breaks_endpoints():
    b = geometric_breaks(1e-3, 10.0)
    assert b[0] == pytest.approx(1e-3) and b[-1] == pytest.approx(10.0)
    assert np.all(np.diff(np.log(b)) <= np.log(2.0) + 1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_unit_ball_volume_matches_direct_integral(n):
    # |xi| < 1  <=>  |t| < sqrt(1 - r^4)
    direct, _ = sci.quad(lambda r: sphere_area(n) * r ** (2 * n - 1) * 2 * np.sqrt(1 - r**4), 0, 1)
    assert unit_ball_volume(n) == pytest.approx(direct, rel=1e-10)


def test_sphere_samples_have_unit_norm(rng):
    pts = sample_unit_sphere(2, 500, rng)
    np.testing.assert_allclose(hnorm(pts), 1.0, rtol=1e-12)


def test_radial_law_normalized_and_sampled(rng):
    law = RadialLaw.core_tail(3.0, 3.0, log_span=20.0)
    total, _ = sci.quad(law.pdf, 0, 1, limit=200)
    for a, b in ((1, 20), (20, np.inf)):
        total += sci.quad(law.pdf, a, b, limit=200)[0]
    assert total == pytest.approx(1.0, rel=1e-8)
    s = law.sample(200_000, rng)
    frac = np.mean(s < 1.0)
    expect = sci.quad(law.pdf, 0, 1)[0]
    assert frac == pytest.approx(expect, abs=5e-3)


def test_radial_law_rejects_non_integrable():
    with pytest.raises(ValueError):
        RadialLaw((0.0, 1.0, np.inf), (-1.0, -3.0))
    with pytest.raises(ValueError):
        RadialLaw((0.0, 1.0, np.inf), (1.0, -1.0))


@pytest.mark.parametrize("n", [1, 2])
def test_quadrature_matches_monte_carlo(n):
    c = exact_constants(n)
    p = c.p
    quad = integrate_rt(lambda r, t: bubble_rt(c, 1.0, 0.0, r, t) ** (p + 1), n, [(1.0, 0.0)])
    prop = bubble_proposal(n, [(1.0, None)], tail=3.0)
    mc, se = mc_integrate(lambda xi: eval_U(c, xi) ** (p + 1), prop, 400_000, seed=3)
    assert abs(mc - quad) <= max(4 * se, 0.01 * quad)


def test_quadrature_error_estimate_small():
    c = exact_constants(1)
    val, err = integrate_rt(lambda r, t: bubble_rt(c, 1.0, 0.0, r, t) ** 4, 1, [(1.0, 0.0)], full_output=True)
    assert err <= 1e-6 * val


def test_quadrature_scale_covariance():
    # int U_lam^(2Q/(Q-2)) is dilation invariant
    c = exact_constants(2)
    vals = [integrate_rt(lambda r, t, l=l: bubble_rt(c, l, 0.3, r, t) ** 3, 2, [(l, 0.3)]) for l in (0.5, 1.0, 3.0)]
    np.testing.assert_allclose(vals, vals[1], rtol=1e-6)


def test_horizontal_modes_pair_to_zero_with_axisymmetric_weights():
    # angular parity: int U^(p-1) V Z^a = 0 for horizontal a when V is axisymmetric
    n = 1
    c = exact_constants(n)
    prop = bubble_proposal(n, [(1.0, None)], tail=3.0)
    for a in (1, 2):
        def func(xi, a=a):
            return eval_U(c, xi) ** (c.p - 1) * eval_Z(c, a, Gauge.identity(n), xi) * np.exp(-((xi[:, 2] + 1.5) ** 2))

        val, se = mc_integrate(func, prop, 200_000, seed=a)
        ref, _ = mc_integrate(lambda xi: np.abs(func(xi)), prop, 200_000, seed=a)
        assert abs(val) <= max(5 * se, 1e-3 * ref)
    # the vertical mode does not vanish
    func = lambda xi: eval_U(c, xi) ** (c.p - 1) * eval_Z(c, 3, Gauge.identity(n), xi) * np.exp(-((xi[:, 2] + 1.5) ** 2))
    val, se = mc_integrate(func, prop, 200_000, seed=7)
    assert abs(val) > 10 * se
