"""Joint Fourier-Laplace transform of log-price and realized variance.

For the 3/2 plus jumps model

    E[exp(iu X_T - l (RV_T - RV_t)) | X_t, V_t]
        = exp(iu (X_t + (r - lam mu_bar) tau))
          * Gamma(gamma - alpha) / Gamma(gamma) * (2 / (eps^2 y))^alpha
          * M(alpha, gamma, -2 / (eps^2 y))
          * exp(lam tau (a - 1))

with tau = T - t and the auxiliary quantities collected in
:class:`TransformTerms`.  Realized variance is the quadratic variation of
the log-price: integrated variance plus the sum of squared log jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .models import JumpParams, MarketEnv, NO_JUMPS, SVJParams, ThreeHalvesParams, require_martingale
from .specialfn import DEFAULT_SERIES, SeriesControl, kummer_gamma_product

__all__ = [
    "TransformTerms",
    "transform_terms",
    "fl_transform_32j",
    "jump_transform",
    "laplace_rv_32",
    "rv_transform_32j",
    "g_32",
    "g_32_central",
    "g_svj",
    "laplace_rv_svj",
    "g_svj_transform",
    "COMPLEX_STEP",
]

COMPLEX_STEP = 1e-8


@dataclass(frozen=True)
class TransformTerms:
    p: np.ndarray
    q: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    y: np.ndarray


def _y(v_t, tau, p: ThreeHalvesParams):
    kt = p.kappa * p.theta
    return np.asarray(v_t, dtype=float) * math.expm1(kt * tau) / kt


def jump_transform(u, l, jp: JumpParams):
    """E[exp(iu xi - l xi^2)] for xi ~ N(mu, sigma^2)."""
    u = np.asarray(u, dtype=complex)
    l = np.asarray(l, dtype=complex)
    base = 1.0 + 2.0 * l * jp.sigma ** 2
    if np.any(base.real <= 0):
        raise DomainError("1 + 2 l sigma^2 must have positive real part")
    num = 2.0 * l * jp.mu ** 2 - 2j * jp.mu * u + jp.sigma ** 2 * u ** 2
    out = np.exp(-num / (2.0 * base)) / np.sqrt(base)
    return out[()] if out.ndim == 0 else out


def transform_terms(u, l, v_t, tau, p: ThreeHalvesParams, jp: JumpParams = NO_JUMPS) -> TransformTerms:
    u = np.asarray(u, dtype=complex)
    l = np.asarray(l, dtype=complex)
    eps2 = p.epsilon ** 2
    pp = -p.kappa + 1j * p.epsilon * p.rho * u
    q = l + 0.5j * u + 0.5 * u ** 2
    half = 0.5 - pp / eps2
    disc = half ** 2 + 2.0 * q / eps2
    alpha = -half + np.sqrt(disc)
    gamma = 2.0 * (alpha + 1.0 - pp / eps2)
    a = jump_transform(u, l, jp) if jp.lam > 0 else np.ones_like(alpha)
    return TransformTerms(p=pp, q=q, alpha=alpha, gamma=gamma, a=a, y=_y(v_t, tau, p))


def _core(alpha, gamma, y, p: ThreeHalvesParams, ctrl: SeriesControl):
    z = 2.0 / (p.epsilon ** 2 * np.asarray(y, dtype=float))
    return kummer_gamma_product(alpha, gamma, z, ctrl)


def _check_continuation(u, terms: TransformTerms):
    u = np.asarray(u, dtype=complex)
    if np.all(u.imag == 0):
        return
    # continuation is validated on Im(u) in [-1, 0] with an admissible root
    if np.any((u.imag < -1.0 - 1e-12) | (u.imag > 1e-12)):
        raise DomainError("complex u only supported on the strip -1 <= Im(u) <= 0")
    if np.any(np.asarray(terms.alpha).real < -1e-12):
        raise DomainError("alpha root not admissible at this complex u")


def fl_transform_32j(u, l, x_t, v_t, t, T, p: ThreeHalvesParams, jp: JumpParams = NO_JUMPS,
                     env: MarketEnv = MarketEnv(), ctrl: SeriesControl = DEFAULT_SERIES,
                     allow_strict_local: bool = False):
    """E[exp(iu X_T - l (RV_T - RV_t)) | X_t = x_t, V_t = v_t].

    ``u`` and ``l`` broadcast against each other.  Real ``u`` and
    ``Re(l) >= 0`` is the production domain; complex ``u`` with
    -1 <= Im(u) <= 0 is accepted for martingale checks.
    """
    require_martingale(p, allow_strict_local)
    tau = T - t
    if not tau > 0:
        raise DomainError("need T > t")
    if not v_t > 0:
        raise DomainError("need v_t > 0")
    l_arr = np.asarray(l, dtype=complex)
    if np.any(l_arr.real < 0):
        raise DomainError("need Re(l) >= 0")
    terms = transform_terms(u, l, v_t, tau, p, jp)
    _check_continuation(u, terms)
    core = _core(terms.alpha, terms.gamma, terms.y, p, ctrl)
    u_arr = np.asarray(u, dtype=complex)
    phase = np.exp(1j * u_arr * (x_t + (env.r - jp.lam * jp.mu_bar) * tau))
    out = phase * core
    if jp.lam > 0:
        out = out * np.exp(jp.lam * tau * (terms.a - 1.0))
    return out[()] if np.ndim(out) == 0 else out


def laplace_rv_32(l, v_t, tau, p: ThreeHalvesParams, ctrl: SeriesControl = DEFAULT_SERIES):
    """E[exp(-l * int_t^{t+tau} V ds) | V_t = v_t] for the 3/2 variance.

    ``l`` and ``v_t`` broadcast.  A neighbourhood of l = 0 (including small
    negative and complex values) is admitted so the result can be
    differentiated there.
    """
    if not tau > 0:
        raise DomainError("need tau > 0")
    v_t = np.asarray(v_t, dtype=float)
    if np.any(v_t <= 0):
        raise DomainError("need v_t > 0")
    l = np.asarray(l, dtype=complex)
    eps2 = p.epsilon ** 2
    half = 0.5 + p.kappa / eps2
    disc = half ** 2 + 2.0 * l / eps2
    if np.any(disc.real <= 0):
        raise DomainError("l outside the admissible half-plane of the Laplace transform")
    alpha = -half + np.sqrt(disc)
    gamma = 2.0 * (alpha + 1.0 + p.kappa / eps2)
    out = _core(alpha, gamma, _y(v_t, tau, p), p, ctrl)
    return out[()] if np.ndim(out) == 0 else out


def rv_transform_32j(l, v_t, tau, p: ThreeHalvesParams, jp: JumpParams = NO_JUMPS,
                     ctrl: SeriesControl = DEFAULT_SERIES):
    """E[exp(-l RV_tau)], jumps included: the u = 0 slice of the joint transform."""
    out = laplace_rv_32(l, v_t, tau, p, ctrl)
    if jp.lam > 0:
        out = out * np.exp(jp.lam * tau * (jump_transform(0.0, l, jp) - 1.0))
    return out


def g_32(x, tau, p: ThreeHalvesParams, h: float = COMPLEX_STEP, ctrl: SeriesControl = DEFAULT_SERIES):
    """Expected integrated variance E[int_0^tau V ds | V_0 = x] for the 3/2 model.

    Computed as -dL/dl at l = 0 by complex-step differentiation,
    g = -Im L(ih) / h, which has no subtractive cancellation.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("need x > 0")
    out = -laplace_rv_32(1j * h, x, tau, p, ctrl).imag / h
    return out[()] if np.ndim(out) == 0 else out


def g_32_central(x, tau, p: ThreeHalvesParams, h: float = 1e-5, ctrl: SeriesControl = DEFAULT_SERIES):
    """Central-difference version of :func:`g_32`, kept as an independent check."""
    up = laplace_rv_32(h, x, tau, p, ctrl).real
    dn = laplace_rv_32(-h, x, tau, p, ctrl).real
    return -(up - dn) / (2.0 * h)


def _tau_minus_a(kappa, tau):
    x = kappa * tau
    if x < 1e-4:
        # tau - (1 - e^{-x})/kappa = tau * (x/2 - x^2/6 + x^3/24 - ...)
        return tau * (x / 2 - x * x / 6 + x ** 3 / 24)
    return tau - (-math.expm1(-x)) / kappa


def g_svj(x, tau, sp: SVJParams):
    """Expected integrated Heston variance a*x + b over horizon ``tau``."""
    if not tau > 0:
        raise DomainError("need tau > 0")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("need x >= 0")
    kt = sp.kappa * tau
    a = tau if kt == 0 else -math.expm1(-kt) / sp.kappa
    b = sp.theta * _tau_minus_a(sp.kappa, tau)
    out = a * x + b
    return out[()] if np.ndim(out) == 0 else out


def laplace_rv_svj(l, x, tau, sp: SVJParams):
    """E[exp(-l * int_0^tau V ds) | V_0 = x] for the square-root variance."""
    l = np.asarray(l, dtype=complex)
    x = np.asarray(x, dtype=float)
    k, th, e2 = sp.kappa, sp.theta, sp.epsilon ** 2
    d = np.sqrt(k * k + 2.0 * e2 * l)
    em = np.exp(-d * tau)
    den = (d + k) + (d - k) * em
    B = 2.0 * l * (1.0 - em) / den
    A = (2.0 * k * th / e2) * (np.log(2.0 * d) + 0.5 * (k - d) * tau - np.log(den))
    out = np.exp(A - B * x)
    return out[()] if np.ndim(out) == 0 else out


def g_svj_transform(x, tau, sp: SVJParams, h: float = COMPLEX_STEP):
    """g for the square-root variance by complex-step differentiation of its Laplace transform."""
    out = -laplace_rv_svj(1j * h, x, tau, sp).imag / h
    return out[()] if np.ndim(out) == 0 else out
