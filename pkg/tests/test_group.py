import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hstab.group import (
    Dimension,
    Gauge,
    HPoint,
    compose,
    dilate,
    dist,
    gauge_apply,
    gauge_compose,
    gauge_inverse,
    hnorm,
    inverse,
    relative_gauge,
)

coord = st.floats(-5, 5, allow_nan=False)


def points(n):
    return arrays(float, 2 * n + 1, elements=coord)


scales = st.floats(0.05, 20.0)


def gauges(n):
    return st.builds(lambda lam, xi: Gauge(lam, xi), scales, points(n))


def test_dimension_derived_quantities():
    for n in (1, 2, 3):
        d = Dimension(n)
        assert d.Q == 2 * n + 2
        assert d.p * (d.Q - 2) == pytest.approx(d.Q + 2)
        assert d.sobolev_exponent == pytest.approx(2 * d.Q / (d.Q - 2))
    with pytest.raises(ValueError):
        Dimension(0)


def test_compose_examples():
    a = np.array([0.0, 1.0, 0.0])
    b = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(compose(a, b), [1.0, 1.0, 2.0])
    p = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(compose(np.zeros(3), p), p)
    with pytest.raises(ValueError):
        compose(np.zeros(3), np.zeros(5))


def test_inverse_dilate_norm_examples():
    np.testing.assert_array_equal(inverse(np.array([1.0, 0.0, 5.0])), [-1.0, 0.0, -5.0])
    np.testing.assert_array_equal(dilate(2.0, np.array([1.0, 0.0, 3.0])), [2.0, 0.0, 12.0])
    # (|z|^4 + t^2)^(1/4) = |t|^(1/2) on the t-axis
    assert hnorm(np.array([0.0, 0.0, 16.0])) == pytest.approx(4.0)
    assert hnorm(np.array([0.0, 0.0, 4.0])) == pytest.approx(2.0)
    assert hnorm(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)
    assert dist(np.zeros(3), np.array([0.0, 0.0, 1.0])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        dilate(0.0, np.zeros(3))


def test_hpoint_roundtrip():
    p = HPoint.from_parts([1.0, 2.0], [3.0, 4.0], 5.0)
    assert p.n == 2
    np.testing.assert_array_equal(p.x, [1.0, 2.0])
    assert p.t == 5.0
    with pytest.raises(ValueError):
        HPoint([np.inf, 0.0, 0.0])


@given(points(1), points(1), points(1))
def test_associativity_n1(a, b, c):
    np.testing.assert_allclose(compose(compose(a, b), c), compose(a, compose(b, c)), atol=1e-12 * (1 + np.abs(a).max() * np.abs(b).max() * np.abs(c).max()) + 1e-12)


def test_associativity_bulk(rng):
    for n in (1, 2, 3):
        a, b, c = (rng.normal(size=(1000, 2 * n + 1)) for _ in range(3))
        assert np.abs(compose(compose(a, b), c) - compose(a, compose(b, c))).max() <= 1e-12


@given(points(2), points(2))
def test_inverse_axioms(a, b):
    np.testing.assert_allclose(compose(a, inverse(a)), 0.0, atol=1e-12)
    np.testing.assert_allclose(compose(inverse(a), compose(a, b)), b, atol=1e-10)


@given(points(2), points(2), scales)
def test_dilation_is_automorphism(a, b, mu):
    np.testing.assert_allclose(dilate(mu, compose(a, b)), compose(dilate(mu, a), dilate(mu, b)), rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(hnorm(dilate(mu, a)), mu * hnorm(a), rtol=1e-12, atol=1e-300)


@given(points(1), points(1), points(1))
def test_left_invariance_of_distance(a, b, c):
    # the t-coordinate enters under a square root, so round-off of order
    # 1e-15 in t shows up as 1e-7 in the distance of nearby points
    assert dist(compose(c, a), compose(c, b)) == pytest.approx(dist(a, b), rel=1e-10, abs=1e-7)


def test_left_invariance_bulk(rng):
    a, b, c = (rng.normal(size=(1000, 5)) for _ in range(3))
    np.testing.assert_allclose(dist(compose(c, a), compose(c, b)), dist(a, b), rtol=1e-12)


@given(points(2), points(2), points(2))
def test_triangle_inequality(a, b, c):
    # the homogeneous norm is subadditive for this group law; the check is
    # informational only as no constant is claimed
    assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-9


def test_gauge_examples():
    n = 1
    g2, g3 = Gauge(2.0, np.zeros(3)), Gauge(3.0, np.zeros(3))
    assert gauge_compose(g2, g3).allclose(Gauge(6.0, np.zeros(3)))
    a = np.array([1.0, 0.0, 1.0])
    np.testing.assert_array_equal(gauge_apply(g2, a), [2.0, 0.0, 4.0])
    np.testing.assert_array_equal(gauge_apply(Gauge.identity(n), a), a)
    with pytest.raises(ValueError):
        Gauge(-1.0, np.zeros(3))


@given(gauges(1), gauges(1), arrays(float, (8, 3), elements=coord))
def test_gauge_compose_point_action(g1, g2, pts):
    lhs = gauge_apply(gauge_compose(g1, g2), pts)
    rhs = gauge_apply(g2, gauge_apply(g1, pts))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-7 * (1 + np.abs(rhs).max()))


@given(gauges(2))
def test_gauge_inverse_two_sided(g):
    for h in (gauge_compose(g, gauge_inverse(g)), gauge_compose(gauge_inverse(g), g)):
        assert h.lam == pytest.approx(1.0, rel=1e-12)
        np.testing.assert_allclose(h.xi, 0.0, atol=1e-9 * (1 + np.abs(g.xi).max() ** 2 * max(g.lam, 1 / g.lam) ** 2))


@given(gauges(1), gauges(1), gauges(1))
def test_gauge_compose_associative(a, b, c):
    lhs = gauge_compose(gauge_compose(a, b), c)
    rhs = gauge_compose(a, gauge_compose(b, c))
    assert lhs.lam == pytest.approx(rhs.lam, rel=1e-12)
    np.testing.assert_allclose(lhs.xi, rhs.xi, rtol=1e-8, atol=1e-6)


def test_relative_gauge_matches_brute_force(rng):
    # brute-force point-action comparison over random gauge pairs
    for _ in range(20):
        gi = Gauge(np.exp(rng.normal()), rng.normal(size=3))
        gj = Gauge(np.exp(rng.normal()), rng.normal(size=3))
        closed = relative_gauge(gi, gj)
        pts = rng.normal(size=(50, 3))
        np.testing.assert_allclose(
            gauge_apply(closed, pts), gauge_apply(gauge_compose(gauge_inverse(gi), gj), pts), rtol=1e-12, atol=1e-12 * 1e3
        )


def test_haar_measure_left_translation(rng):
    # Monte Carlo volume of c o B equals that of B: the image is tested by
    # pulling points back, since the Jacobian of left translation is 1
    box_lo, box_hi = np.array([-1.0, -1.0, -1.0]), np.array([1.0, 1.0, 1.0])
    c = np.array([0.7, -0.4, 0.3])
    # bounding box of c o B
    corners = np.array([[x, y, t] for x in (-1, 1) for y in (-1, 1) for t in (-1, 1)], float)
    img = compose(c, corners)
    # left translation is affine, so the corners bound the image exactly
    lo, hi = img.min(0), img.max(0)
    m = 1_000_000
    pts = rng.uniform(lo, hi, size=(m, 3))
    back = compose(inverse(c), pts)
    inside = np.all((back >= box_lo) & (back <= box_hi), axis=1)
    vol = inside.mean() * np.prod(hi - lo)
    assert vol == pytest.approx(8.0, rel=0.01)
