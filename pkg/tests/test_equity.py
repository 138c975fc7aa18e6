import math
import warnings

import numpy as np
import pytest
from scipy import integrate as sint

from vol32.equity import (CosConfig, CosPricer, char_fn, char_fn_svj, cos_price, cumulants, equity_implied_vols,
                          log_return_cf, variance_swap_strike, variance_swap_strike_transform)
from vol32.errors import AccuracyWarning, DomainError
from vol32.models import NO_JUMPS, MarketEnv, SVJParams, complete_jump_params
from vol32.transforms import g_32

JUMPS = complete_jump_params(0.18, 0.39, mu=-0.30)


def gil_pelaez_call(phi, K, T, env):
    """Call price from the inversion-integral form, QUADPACK on the real line."""
    k = math.log(K / env.s0)
    growth = phi(-1j).real

    def p2(u):
        return (np.exp(-1j * u * k) * phi(u) / (1j * u)).real

    def p1(u):
        return (np.exp(-1j * u * k) * phi(u - 1j) / (1j * u * growth)).real

    opts = dict(limit=2000, epsabs=1e-13, epsrel=1e-12)
    P1 = 0.5 + sint.quad(p1, 0, np.inf, **opts)[0] / math.pi
    P2 = 0.5 + sint.quad(p2, 0, np.inf, **opts)[0] / math.pi
    return env.s0 * growth * math.exp(-env.r * T) * P1 - K * math.exp(-env.r * T) * P2


def test_char_fn_at_zero(drimus):
    assert char_fn(0.0, 0.5, 4.6, drimus.v0, drimus, JUMPS) == pytest.approx(1.0)


@pytest.mark.parametrize("T", [9 / 365, 0.5, 2.0])
def test_char_fn_modulus(drimus, fig4, T):
    u = np.linspace(-200, 200, 801)
    x0 = math.log(100.0)
    for p, jp in ((drimus, JUMPS), fig4):
        phi = char_fn(u, T, x0, p.v0, p, jp, MarketEnv(r=0.03))
        assert np.all(np.abs(phi * np.exp(-1j * u * x0)) <= 1 + 1e-12)


def test_svj_char_fn_martingale(heston):
    env = MarketEnv(r=0.03)
    for sp in (heston, SVJParams(heston.kappa, heston.theta, heston.epsilon, heston.rho, heston.v0, JUMPS)):
        for T in (9 / 365, 0.5, 3.0):
            assert char_fn_svj(-1j, T, 0.0, sp, env) == pytest.approx(math.exp(0.03 * T), rel=1e-12)
            assert abs(char_fn_svj(0.0, T, 0.0, sp, env) - 1) < 1e-15


def test_cumulants_of_a_normal():
    m, s2 = 0.01, 0.04
    c1, c2, c4 = cumulants(lambda u: np.exp(1j * u * m - 0.5 * s2 * u * u))
    assert c1 == pytest.approx(m, abs=1e-10) and c2 == pytest.approx(s2, rel=1e-6) and c4 == pytest.approx(0, abs=1e-6)


def test_cos_prices_black_scholes_exactly():
    from vol32.implied import bs_price

    env, T, vol = MarketEnv(r=0.02, s0=100.0), 0.5, 0.25
    phi = lambda u: np.exp(1j * u * (env.r - 0.5 * vol ** 2) * T - 0.5 * vol ** 2 * T * u * u)  # noqa: E731
    K = np.linspace(60, 160, 21)
    np.testing.assert_allclose(CosPricer(phi, T, env).price(K), bs_price(100.0, K, T, env.r, vol), atol=1e-10)


@pytest.mark.parametrize("T", [9 / 365, 0.5])
def test_deep_itm_call(fig4, T):
    env = MarketEnv(r=0.02)
    K = 0.01 * env.s0
    price = cos_price([K], "call", T, env, fig4[0], fig4[1])[0]
    assert price == pytest.approx(env.s0 - K * math.exp(-env.r * T), abs=1e-6 * env.s0)


@pytest.mark.parametrize("T", [9 / 365, 0.5, 2.0])
def test_put_call_parity(drimus, fig4, heston, T):
    env = MarketEnv(r=0.03)
    K = np.linspace(50, 160, 23)
    for params, jp in ((fig4[0], fig4[1]), (drimus, JUMPS), (heston, NO_JUMPS)):
        pr = CosPricer(log_return_cf(params, T, jp, env), T, env)
        diff = pr.price(K, "call") - pr.price(K, "put")
        assert np.max(np.abs(diff - (env.s0 - K * math.exp(-env.r * T)))) < 1e-8 * env.s0


@pytest.mark.parametrize("T", [9 / 365, 0.5])
def test_cos_against_inversion_integral(fig4, T):
    env = MarketEnv(r=0.01)
    phi = log_return_cf(fig4[0], T, fig4[1], env)
    K = np.array([85.0, 95.0, 100.0, 105.0, 115.0])
    cos = CosPricer(phi, T, env).price(K)
    ref = np.array([gil_pelaez_call(phi, k, T, env) for k in K])
    np.testing.assert_allclose(cos, ref, atol=1e-7)


def test_cos_svj_against_inversion_integral(heston):
    env, T = MarketEnv(r=0.01), 0.5
    phi = log_return_cf(heston, T, env=env)
    K = np.array([80.0, 100.0, 125.0])
    ref = np.array([gil_pelaez_call(phi, k, T, env) for k in K])
    np.testing.assert_allclose(CosPricer(phi, T, env).price(K), ref, atol=1e-8)


def test_doubling_from_default_is_stable(fig4):
    env = MarketEnv()
    K = np.linspace(80, 120, 21)
    for T in (9 / 365, 0.5):
        with warnings.catch_warnings():
            warnings.simplefilter("error", AccuracyWarning)
            base = cos_price(K, "call", T, env, *fig4)
            fine = cos_price(K, "call", T, env, *fig4, cfg=CosConfig(n_terms=1024))
        assert np.max(np.abs(base - fine)) <= 1e-7 * env.s0


def test_truncation_warning_when_terms_capped(fig4):
    with pytest.warns(AccuracyWarning):
        cos_price([100.0], "call", 9 / 365, MarketEnv(), *fig4, cfg=CosConfig(n_terms=32, max_terms=64))


def test_figure4_smile(fig4):
    env, T = MarketEnv(), 9 / 365
    K = env.s0 * np.linspace(0.9, 1.1, 41)
    iv = equity_implied_vols(K, T, env, *fig4)
    i = int(np.argmin(iv))
    assert 0 < i < len(K) - 1
    assert iv[0] - iv[i] >= 0.005 and iv[-1] - iv[i] >= 0.005
    assert np.all(np.isfinite(iv)) and np.all(iv > 0)


def test_implied_vols_finite_positive(drimus):
    K = np.linspace(60, 150, 19)
    iv = equity_implied_vols(K, 0.5, MarketEnv(r=0.02), drimus, JUMPS)
    assert np.all(np.isfinite(iv)) and np.all(iv > 0)


def test_cos_rejects_bad_inputs(fig4):
    with pytest.raises(DomainError):
        cos_price([-1.0], "call", 0.5, MarketEnv(), *fig4)
    with pytest.raises(DomainError):
        cos_price([100.0], "digital", 0.5, MarketEnv(), *fig4)
    for kw in (dict(n_terms=16), dict(trunc_width=0.0), dict(c1=0.0), dict(c1=0.0, c2=-1.0),
               dict(n_terms=1024, max_terms=512)):
        with pytest.raises(DomainError):
            CosConfig(**kw)


def test_variance_swap_reductions(drimus):
    T = 0.5
    assert variance_swap_strike(T, drimus) == pytest.approx(g_32(drimus.v0, T, drimus) / T, rel=1e-15)
    jp = complete_jump_params(0.3, 0.0, mu=-0.2)
    diff = variance_swap_strike(T, drimus, jp) - variance_swap_strike(T, drimus)
    assert diff == pytest.approx(0.3 * 0.04, rel=1e-12)


@pytest.mark.parametrize("T", [9 / 365, 0.5, 2.0])
def test_variance_swap_two_paths(drimus, T):
    for jp in (NO_JUMPS, JUMPS):
        a = variance_swap_strike(T, drimus, jp)
        assert variance_swap_strike_transform(T, drimus, jp) == pytest.approx(a, rel=1e-8)
