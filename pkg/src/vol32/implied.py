"""Black and Black-Scholes prices and implied volatilities.

The inversion works on the out-of-the-money side (calls above the forward,
puts below) in terms of total volatility s = vol * sqrt(T), with Newton steps
safeguarded by a shrinking bisection bracket.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .errors import ConvergenceError, DomainError

__all__ = ["black_price", "black_implied_vol", "bs_price", "bs_implied_vol"]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _otm_price(x, s, is_call):
    """Black price per unit forward, K/F = exp(-x), for total vol s > 0."""
    k = np.exp(-x)
    d1 = x / s + 0.5 * s
    d2 = d1 - s
    call = ndtr(d1) - k * ndtr(d2)
    put = k * ndtr(-d2) - ndtr(-d1)
    return np.where(is_call, call, put)


def black_price(F, K, T, vol, kind="call"):
    """Undiscounted Black price of a call or put on a forward F."""
    F, K, T, vol = (np.asarray(v, dtype=float) for v in (F, K, T, vol))
    is_call = np.asarray(kind) == "call"
    s = vol * np.sqrt(T)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.log(F / K)
        d1 = x / s + 0.5 * s
        d2 = d1 - s
        call = F * ndtr(d1) - K * ndtr(d2)
        put = K * ndtr(-d2) - F * ndtr(-d1)
    intrinsic_c = np.maximum(F - K, 0.0)
    intrinsic_p = np.maximum(K - F, 0.0)
    call = np.where(s > 0, call, intrinsic_c)
    put = np.where(s > 0, put, intrinsic_p)
    out = np.where(is_call, call, put)
    return out[()] if out.ndim == 0 else out


def _solve_total_vol(target, x, is_call, tol=1e-14, max_iter=200):
    """Total vol s with normalized OTM price equal to ``target`` (arrays)."""
    lo = np.zeros_like(target)
    hi = np.full_like(target, 1.0)
    # grow the upper bracket until it over-prices
    for _ in range(60):
        short = _otm_price(x, hi, is_call) < target
        if not np.any(short):
            break
        hi = np.where(short, hi * 2.0, hi)
    s = np.where(np.abs(x) > 0, np.sqrt(2.0 * np.abs(x)), 0.5 * (lo + hi))
    s = np.clip(s, 0.5 * hi * 1e-3, 0.5 * hi)
    active = np.ones(target.shape, dtype=bool)
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        si, xi, ti = s[idx], x[idx], target[idx]
        price = _otm_price(xi, si, is_call[idx])
        lo[idx] = np.where(price < ti, si, lo[idx])
        hi[idx] = np.where(price >= ti, si, hi[idx])
        vega = np.exp(-0.5 * (xi / si + 0.5 * si) ** 2) / _SQRT_2PI
        # Newton on log price stays well scaled for far out-of-the-money targets
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = si - (np.log(price) - np.log(ti)) * price / vega
        ok = np.isfinite(newton) & (newton > lo[idx]) & (newton < hi[idx])
        nxt = np.where(ok, newton, 0.5 * (lo[idx] + hi[idx]))
        done = (np.abs(nxt - si) <= tol * np.maximum(1.0, si)) | (hi[idx] - lo[idx] <= tol * np.maximum(1.0, si))
        s[idx] = nxt
        active[idx[done]] = False
    if np.any(active):
        raise ConvergenceError("implied volatility solver did not converge", estimate=s)
    return s


def black_implied_vol(price, F, K, T, kind="call"):
    """Black implied vol from an undiscounted option price on forward ``F``.

    Prices must lie within the no-arbitrage bounds: [(F-K)+, F) for calls and
    [(K-F)+, K) for puts.  A price at intrinsic value returns 0.
    """
    scalar = all(np.ndim(v) == 0 for v in (price, F, K, T))
    price, F, K, T = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (price, F, K, T)))
    kinds = np.broadcast_to(np.asarray(kind), price.shape)
    is_call = kinds == "call"
    if np.any(~is_call & (kinds != "put")):
        raise DomainError("kind must be 'call' or 'put'")
    if np.any(F <= 0) or np.any(K <= 0) or np.any(T <= 0):
        raise DomainError("F, K and T must be positive")
    intrinsic = np.where(is_call, np.maximum(F - K, 0.0), np.maximum(K - F, 0.0))
    upper = np.where(is_call, F, K)
    slack = 1e-14 * np.maximum(F, K)
    if np.any(price < intrinsic - slack) or np.any(price >= upper):
        raise DomainError("option price outside no-arbitrage bounds")
    # switch to the out-of-the-money side via parity
    otm_call = F <= K
    otm_price = np.where(is_call == otm_call, price, price - np.where(is_call, F - K, K - F))
    # after removing intrinsic value, time value within rounding of zero counts as none
    rounding = (intrinsic > 0) & (otm_price <= slack)
    target = np.where(rounding, 0.0, np.maximum(otm_price, 0.0)) / F
    x = np.log(F / K)
    out = np.zeros(price.shape)
    live = target > 0
    if np.any(live):
        s = _solve_total_vol(target[live], x[live], otm_call[live])
        out[live] = s / np.sqrt(T[live])
    return out[()] if scalar else out


def bs_price(s0, K, T, r, vol, kind="call"):
    """Black-Scholes price with continuously compounded rate ``r``, no dividends."""
    F = np.asarray(s0, dtype=float) * np.exp(r * np.asarray(T, dtype=float))
    return np.exp(-r * np.asarray(T, dtype=float)) * black_price(F, K, T, vol, kind)


def bs_implied_vol(price, s0, K, T, r, kind="call"):
    """Black-Scholes implied volatility.

    Calls must be priced in [(s0 - K e^{-rT})+, s0), puts in
    [(K e^{-rT} - s0)+, K e^{-rT}).
    """
    T_arr = np.asarray(T, dtype=float)
    growth = np.exp(r * T_arr)
    F = np.asarray(s0, dtype=float) * growth
    return black_implied_vol(np.asarray(price, dtype=float) * growth, F, K, T, kind)
