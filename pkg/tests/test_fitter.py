import numpy as np
import pytest
from sklearn.base import clone

from hstab._validation import BubbleCollisionError, ConvergenceError
from hstab.bubbles import BubbleConfig, bubble_rt, exact_constants
from hstab.fitter import BubbleDecomposition, deficit, fit_bubbles, regime_function, stability_quotient
from hstab.grid import GridFn, build_grid, d1_norm, sample
from hstab.solver import ModeBasis, dminus1_norm, solve_rho


def _single_grid(n, N=128):
    return build_grid(n, 30.0, -900.0, 900.0, N)


def _pair(n, eps, N=256):
    c = exact_constants(n)
    s = 1.0 / eps
    R = 4 * np.sqrt(s) + 20
    g = build_grid(n, R, -s - R * R, R * R, N, centers=[(0, 0.0), (0, -s)])
    return BubbleConfig.on_axis(c, [1.0, 1.0], [0.0, -s]), g


@pytest.mark.parametrize("n", [1, 2])
def test_recovers_single_bubble(n, rng):
    c = exact_constants(n)
    g = _single_grid(n)
    for _ in range(5):
        lam, tc = np.exp(rng.uniform(np.log(0.7), np.log(1.4))), rng.uniform(-1, 1)
        u = sample(g, BubbleConfig.on_axis(c, [lam], [tc]).sigma_rt)
        res = fit_bubbles(u, 1, [(1.1 * lam, tc + 0.1 / lam**2)])
        assert res.converged
        assert abs(res.lams[0] / lam - 1) <= 1e-4
        assert abs(res.centers_t[0] - tc) <= 1e-4 / lam**2
        assert res.distance <= 1e-6 * d1_norm(g, u, check=False)


def test_two_bubbles_plus_perturbation():
    config, g = _pair(2, 0.05)
    R, T = g.mesh()
    phi = np.exp(-((R / 2.0) ** 2) - ((T + 8.0) / 3.0) ** 2) - 0.5 * np.exp(-(R**2) - (T - 1.0) ** 2)
    phi = GridFn(g, phi)
    phi = phi * (1e-3 / d1_norm(g, phi, check=False))
    u = sample(g, config.sigma_rt) + phi
    res = fit_bubbles(u, 2, [(1.05, 0.2), (0.95, -20.3)])
    projected = d1_norm(g, GridFn(g, ModeBasis.from_config(config, g).project(phi.flat)), check=False)
    assert res.distance == pytest.approx(projected, rel=0.1)
    assert np.all(np.abs(res.residuals) <= res.tolerance)


def test_fit_at_truth_of_sharp_example():
    config, g = _pair(2, 0.05)
    rho = solve_rho(config, g)
    u = GridFn(g, rho.problem.sigma + rho.rho.flat)
    res = fit_bubbles(u, 2, [(1.0, 0.0), (1.0, -20.0)])
    assert np.abs(res.lams - 1).max() <= 1e-3
    assert np.abs(res.centers_t - np.array([0.0, -20.0])).max() <= 1e-3
    assert res.distance == pytest.approx(rho.d1_norm, rel=1e-3)


def test_trivial_fit_and_argument_checks():
    c = exact_constants(1)
    g = _single_grid(1, 64)
    u = sample(g, BubbleConfig.on_axis(c, [1.0], [0.0]).sigma_rt)
    res = fit_bubbles(u, 0, [])
    assert res.gauges == () and res.distance == pytest.approx(d1_norm(g, u, check=False))
    with pytest.raises(ValueError):
        fit_bubbles(u, 2, [(1.0, 0.0)])
    with pytest.raises(ValueError):
        fit_bubbles(u, 1, [(-1.0, 0.0)])
    with pytest.raises(ConvergenceError):
        fit_bubbles(u, 1, [(1.3, 0.5)], max_iter=1)


def test_collision_is_reported():
    c = exact_constants(1)
    g = _single_grid(1, 64)
    u = sample(g, BubbleConfig.on_axis(c, [1.0], [0.0]).sigma_rt)
    # two bubbles fitted to one drift into a strongly interacting pair
    with pytest.raises(BubbleCollisionError) as info:
        fit_bubbles(u, 2, [(1.0, 0.3), (1.0, -0.3)], collision_eps=0.1)
    assert info.value.result is not None and info.value.result.eps > 0.1


def test_result_serializes():
    c = exact_constants(1)
    g = _single_grid(1, 64)
    u = sample(g, BubbleConfig.on_axis(c, [1.0], [0.0]).sigma_rt)
    d = fit_bubbles(u, 1, [(1.05, 0.05)]).to_dict()
    assert d["m"] == 1 and d["converged"] is True and len(d["residuals"]) == 2


# -- deficit -----------------------------------------------------------------------


def test_deficit_of_exact_bubble_is_discretization_floor():
    c = exact_constants(2)
    for N, limit in ((256, 0.05), (512, 0.02)):
        g = _single_grid(2, N)
        U = sample(g, lambda r, t: bubble_rt(c, 1, 0, r, t))
        # plain grid deficit: O(h^2) relative to the dual norm of U^p
        assert deficit(U) <= limit * dminus1_norm(g, U**c.p)
    single = BubbleConfig.on_axis(c, [1.0], [0.0])
    assert deficit(U, background=single) == 0.0


def test_deficit_of_bubble_sum_is_dual_norm_of_f():
    config, g = _pair(2, 0.05)
    sigma = sample(g, config.sigma_rt)
    f = GridFn(g, config.f_rt(*g.mesh()))
    assert deficit(sigma, background=config) == pytest.approx(dminus1_norm(g, f, check=False), rel=0.01)


def test_deficit_of_scaled_bubble_is_linear():
    c = exact_constants(2)
    g = _single_grid(2, 256)
    single = BubbleConfig.on_axis(c, [1.0], [0.0])
    U = sample(g, single.sigma_rt)
    up = dminus1_norm(g, U**c.p)
    for e in (1e-1, 1e-2, 1e-3):
        expect = abs((1 + e) ** c.p - (1 + e)) * up
        assert deficit((1 + e) * U, background=single) == pytest.approx(expect, rel=0.02)


def test_regime_function():
    assert regime_function(0.01, 1) == 0.01
    assert regime_function(0.01, 2) == pytest.approx(0.01 * np.sqrt(np.log(100)))
    assert regime_function(0.01, 3) == pytest.approx(0.01 ** (5 / 6))


def test_quotient_bounded_for_perturbed_n1_bubble():
    c = exact_constants(1)
    g = _single_grid(1, 256)
    R, T = g.mesh()
    phi = GridFn(g, np.exp(-((R / 1.5) ** 2) - ((T - 0.5) / 2.0) ** 2))
    phi = phi * (1.0 / d1_norm(g, phi, check=False))
    U = sample(g, BubbleConfig.on_axis(c, [1.0], [0.0]).sigma_rt)
    qs = [stability_quotient(U + e * phi, 1, [(1.0, 0.0)])[2] for e in (1e-1, 1e-2, 1e-3)]
    assert max(qs) / min(qs) <= 2.0
    with pytest.raises(ValueError):
        stability_quotient(U, 1, [(1.0, 0.0)], method="nope")


# -- estimator ---------------------------------------------------------------------


def test_estimator_api():
    c = exact_constants(1)
    g = _single_grid(1, 96)
    u = sample(g, BubbleConfig.on_axis(c, [0.9], [0.3]).sigma_rt)
    est = BubbleDecomposition(n_bubbles=1, init=[(1.0, 0.0)])
    assert est.get_params()["n_bubbles"] == 1
    twin = clone(est)
    assert twin.get_params() == est.get_params() and not hasattr(twin, "result_")
    with pytest.raises(AttributeError):
        twin.predict()
    est.fit(u)
    assert est.gauges_[0].lam == pytest.approx(0.9, rel=1e-6)
    assert est.score(u) == pytest.approx(-est.distance_)
    assert d1_norm(g, est.transform(u), check=False) == pytest.approx(est.distance_)
    np.testing.assert_allclose(est.predict().values, u.values, atol=1e-5 * u.values.max())
    with pytest.raises(ValueError):
        BubbleDecomposition(n_bubbles=1).fit(u)
    empty = BubbleDecomposition(n_bubbles=0).fit(u)
    assert np.all(empty.predict().values == 0)
