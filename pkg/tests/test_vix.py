import math

import numpy as np
import pytest

from vol32.models import MarketEnv, SVJParams, ThreeHalvesParams, complete_jump_params
from vol32.specialfn import QuadratureSpec, integrate, noncentral_chisq_pdf
from vol32.transforms import g_32, g_svj_transform
from vol32.vix import (InverseCIRDensity, VIXPricer32, VIXPricerSVJ, VIXSpec, cir_transition_density,
                       transition_density_32, vix_call, vix_future, vix_put, vix_squared)

JUMPS = complete_jump_params(0.18, 0.39, mu=-0.30)


def ls_slope(x, y):
    return np.polyfit(x, y, 1)[0]


def test_vix_short_horizon_limit(drimus):
    v = vix_squared(0.04, VIXSpec(tau=1e-6), drimus)
    assert math.sqrt(v) == pytest.approx(20.0, rel=1e-4)


def test_vix_squared_definition(drimus):
    tau = 30 / 365
    v = 0.2450 ** 2
    assert vix_squared(v, VIXSpec(), drimus) == pytest.approx(1e4 * g_32(v, tau, drimus) / tau, rel=1e-15)


def test_vix_squared_jump_addon(drimus):
    base = vix_squared(0.05, VIXSpec(), drimus)
    with_j = vix_squared(0.05, VIXSpec(), drimus, JUMPS)
    assert with_j - base == pytest.approx(2 * 0.18 * (JUMPS.mu_bar - JUMPS.mu) * 1e4, rel=1e-12)


def test_vix_squared_increasing(drimus):
    v = np.geomspace(1e-3, 2.0, 200)
    assert np.all(np.diff(vix_squared(v, VIXSpec(), drimus)) > 0)


def test_transition_density_normalization(drimus):
    mass, _ = integrate(lambda y: transition_density_32(drimus.v0, 0.25, y, drimus), 0.0, math.inf)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_transition_density_change_of_variables(drimus):
    """P(V_T in [a, b]) from f equals P(X_T in [1/b, 1/a]) from the CIR chi-squared law of X = 1/V."""
    T = 0.25
    law = InverseCIRDensity.from_params(drimus.v0, T, drimus)
    a, b = 0.03, 0.09
    pv, _ = integrate(lambda y: transition_density_32(drimus.v0, T, y, drimus), a, b)
    k = law.growth / law.c_T  # W = k X
    px, _ = integrate(lambda x: k * noncentral_chisq_pdf(law.delta, law.noncentrality, k * x), 1 / b, 1 / a)
    assert pv == pytest.approx(px, rel=1e-10)
    assert law.delta > 4


def test_cir_density_normalization(heston):
    mass, _ = integrate(lambda y: cir_transition_density(heston.v0, 0.25, y, heston), 0.0, math.inf)
    assert mass == pytest.approx(1.0, abs=1e-8)


@pytest.fixture(scope="module")
def drimus_pricer():
    from vol32 import load_bundled_params

    p = load_bundled_params("drimus32.txt")[0]
    return VIXPricer32(p, env=MarketEnv(r=0.02), T=0.25)


def test_interpolant_accuracy(drimus_pricer):
    assert drimus_pricer.g.coef is not None
    assert drimus_pricer.g.max_rel_error <= 1e-8
    y = np.geomspace(0.01, 0.5, 37)
    np.testing.assert_allclose(drimus_pricer.g(y), g_32(y, 30 / 365, drimus_pricer.p), rtol=1e-8)


def test_interpolated_prices_match_direct(drimus):
    env = MarketEnv(r=0.02)
    a = VIXPricer32(drimus, env=env, T=0.25)
    b = VIXPricer32(drimus, env=env, T=0.25, use_interpolant=False)
    assert a.forward == pytest.approx(b.forward, rel=1e-8)
    K = a.forward * np.array([0.9, 1.0, 1.2])
    np.testing.assert_allclose(a.call(K), b.call(K), rtol=1e-7)


def test_jensen_bound(drimus_pricer):
    pr = drimus_pricer
    assert pr.future() <= pr.discount * math.sqrt(pr.second_moment)


def test_call_at_zero_strike_is_future(drimus_pricer):
    assert drimus_pricer.call(0.0) == pytest.approx(drimus_pricer.future(), rel=1e-14)


def test_far_otm_call_vanishes(drimus_pricer):
    assert drimus_pricer.call(10 * drimus_pricer.forward) < 1e-6


def test_vix_parity(drimus_pricer):
    pr = drimus_pricer
    K = pr.forward * np.linspace(0.5, 2.0, 31)
    resid = pr.call(K) - pr.discount * pr.put_direct_undiscounted(K) - pr.discount * (pr.forward - K)
    assert np.max(np.abs(resid)) < 1e-6 * pr.forward


def test_call_monotone_convex(drimus_pricer):
    pr = drimus_pricer
    K = pr.forward * np.linspace(0.6, 1.8, 41)
    c = pr.call(K)
    assert np.all(np.diff(c) <= 0)
    assert np.all(np.diff(c, 2) >= -1e-10)


def test_call_not_below_intrinsic(drimus_pricer):
    pr = drimus_pricer
    K = pr.forward * np.linspace(0.5, 1.0, 11)
    assert np.all(pr.call_undiscounted(K) >= pr.forward - K - 1e-10)


def test_stiff_limit_future():
    # fast reversion and small vol-of-vol pin V at theta = v0
    p = ThreeHalvesParams(kappa=50.0, theta=0.04, epsilon=0.05, rho=0.0, v0=0.04)
    env = MarketEnv(r=0.03)
    target = math.exp(-0.03 * 0.25) * math.sqrt(vix_squared(0.04, VIXSpec(), p))
    assert vix_future(p, env=env, T=0.25) == pytest.approx(target, rel=0.01)


def test_wrappers_consistent(drimus):
    env = MarketEnv(r=0.01)
    c = vix_call(drimus, env=env, T=0.25, K=25.0)
    p = vix_put(drimus, env=env, T=0.25, K=25.0)
    F = vix_future(drimus, env=env, T=0.25, discounted=False)
    assert c - p == pytest.approx(math.exp(-0.0025) * (F - 25.0), rel=1e-12)


@pytest.mark.parametrize("T", [0.25, 0.5])
def test_drimus_skew_upward(drimus, T):
    pr = VIXPricer32(drimus, T=T)
    K = pr.forward * np.linspace(0.8, 1.3, 11)
    iv = pr.implied_vols(K)
    assert np.all(np.diff(iv) > 0) and ls_slope(K, iv) > 0


@pytest.mark.parametrize("T", [0.25, 0.5])
def test_heston_skew_downward(heston, T):
    pr = VIXPricerSVJ(heston, T=T)
    K = pr.forward * np.linspace(0.8, 1.3, 11)
    assert ls_slope(K, pr.implied_vols(K)) < 0
    # the curve has a shallow hump just below 0.85 F and decreases beyond it
    K = pr.forward * np.linspace(0.85, 1.3, 19)
    assert np.all(np.diff(pr.implied_vols(K)) < 0)


@pytest.mark.parametrize("T", [0.25, 0.5])
def test_heston_prices_against_scipy_quadrature(heston, T):
    """Independent route: scipy's ncx2 density and QUADPACK in the chi-squared variable."""
    from scipy import integrate as sint, stats

    sp = heston
    e2 = sp.epsilon ** 2
    scale = e2 * -math.expm1(-sp.kappa * T) / (4 * sp.kappa)
    law = stats.ncx2(4 * sp.kappa * sp.theta / e2, sp.v0 * math.exp(-sp.kappa * T) / scale)
    tau = 30 / 365
    a = -math.expm1(-sp.kappa * tau) / sp.kappa
    b = sp.theta * (tau - a)

    def vix(w):
        return 100 * math.sqrt((a * scale * w + b) / tau)

    pr = VIXPricerSVJ(sp, T=T)
    fwd = sint.quad(lambda w: vix(w) * law.pdf(w), 0, np.inf, epsabs=1e-13, epsrel=1e-13, limit=500)[0]
    assert pr.forward == pytest.approx(fwd, rel=1e-9)
    for k in pr.forward * np.array([0.8, 0.84, 1.0, 1.3]):
        wk = ((k / 100) ** 2 * tau - b) / (a * scale)
        ref = sint.quad(lambda w: (vix(w) - k) * law.pdf(w), wk, np.inf, epsabs=1e-14, epsrel=1e-13, limit=500)[0]
        assert pr.call_undiscounted(k) == pytest.approx(ref, abs=1e-8)


def test_svj_analytic_g_matches_transform_g(heston):
    tau = 30 / 365
    a = VIXPricerSVJ(heston, T=0.25)
    b = VIXPricerSVJ(heston, T=0.25, g=lambda v: g_svj_transform(v, tau, heston))
    assert b.forward == pytest.approx(a.forward, rel=1e-8)
    K = a.forward * np.array([0.8, 1.0, 1.3])
    np.testing.assert_allclose(b.call(K), a.call(K), rtol=1e-8)
    assert a.call(0.0) == pytest.approx(a.future(), rel=1e-14)


def test_svj_jumps_raise_vix(heston):
    sp = SVJParams(heston.kappa, heston.theta, heston.epsilon, heston.rho, heston.v0, jumps=JUMPS)
    assert VIXPricerSVJ(sp, T=0.25).forward > VIXPricerSVJ(heston, T=0.25).forward


def test_density_matches_mc_histogram(drimus):
    """Bin probabilities of exactly sampled V_T agree with the integrated density."""
    from vol32.montecarlo import sample_variance_32

    T, n = 0.25, 200_000
    v = sample_variance_32(drimus, T, n, np.random.default_rng(11))
    edges = np.quantile(v, np.linspace(0, 1, 21))[1:-1]
    edges = np.concatenate([[0.0], edges, [np.inf]])
    counts = np.histogram(v, edges)[0]
    spec = QuadratureSpec(abs_tol=1e-12, rel_tol=1e-10)
    probs = np.array([integrate(lambda y: transition_density_32(drimus.v0, T, y, drimus), a, b, spec)[0]
                      for a, b in zip(edges[:-1], edges[1:])])
    expected = n * probs
    z = (counts - expected) / np.sqrt(expected * (1 - probs))
    assert np.max(np.abs(z)) < 4.5
    chi2 = np.sum((counts - expected) ** 2 / expected)
    from scipy import stats
    assert stats.chi2.sf(chi2, len(counts) - 1) > 0.001
