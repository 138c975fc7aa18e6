"""VIX futures and options by quadrature over the variance transition law.

VIX^2_t = (g(V_t, tau)/tau + 2 lam (mu_bar - mu)) * scale^2, so any VIX
payoff at T is a function of V_T alone.  For the 3/2 model V = 1/X where X is
a CIR process, hence

    V_T = exp(kappa theta T) / (c(T) W),   W ~ chi2'(delta, 1/(V_0 c(T))),

and for the Heston/SVJ baseline V_T = c~ W with W non-central chi-squared as
well.  Expectations are integrated in the chi-squared variable W, where the
integrand is a smooth density times a bounded payoff, over the range holding
all but ~1e-11 of the mass on each side.

Prices are kept undiscounted internally; the e^{-rT} factor is applied only
by the public price functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.optimize import brentq
from scipy.stats import ncx2

from .errors import ConvergenceError, DomainError
from .implied import black_implied_vol, black_price
from .models import JumpParams, MarketEnv, NO_JUMPS, SVJParams, ThreeHalvesParams, require_martingale
from .specialfn import QuadratureSpec, integrate, noncentral_chisq_pdf
from .transforms import g_32, g_svj

__all__ = [
    "VIXSpec",
    "InverseCIRDensity",
    "VIXQuote",
    "GInterpolant",
    "vix_squared",
    "vix_squared_svj",
    "transition_density_32",
    "cir_transition_density",
    "VIXPricer32",
    "VIXPricerSVJ",
    "vix_future",
    "vix_call",
    "vix_put",
    "vix_future_svj",
    "vix_call_svj",
    "vix_put_svj",
    "black_implied_vol",
    "black_price",
]

TAIL_MASS = 1e-11


@dataclass(frozen=True)
class VIXSpec:
    tau: float = 30.0 / 365.0
    scale: float = 100.0

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("VIX horizon must be positive")
        if not self.scale > 0:
            raise DomainError("VIX scale must be positive")


@dataclass(frozen=True)
class VIXQuote:
    maturity: float
    strike: float
    price: float
    implied_vol: float = float("nan")


def _jump_addon(jp: JumpParams) -> float:
    return 2.0 * jp.lam * (jp.mu_bar - jp.mu)


def vix_squared(v_t, spec: VIXSpec, p: ThreeHalvesParams, jp: JumpParams = NO_JUMPS, g=None):
    """VIX^2 in quoted points^2 given the instantaneous variance ``v_t``.

    ``g`` may supply a precomputed expected-integrated-variance function of
    ``v_t`` (for instance a :class:`GInterpolant`).
    """
    v_t = np.asarray(v_t, dtype=float)
    gv = g(v_t) if g is not None else g_32(v_t, spec.tau, p)
    out = (gv / spec.tau + _jump_addon(jp)) * spec.scale ** 2
    return out[()] if np.ndim(out) == 0 else out


def vix_squared_svj(v_t, spec: VIXSpec, sp: SVJParams):
    """SVJ analogue of :func:`vix_squared`, with g = a x + b.

    The same scale^2 factor is applied as in the 3/2 case.
    """
    out = (g_svj(v_t, spec.tau, sp) / spec.tau + _jump_addon(sp.jumps)) * spec.scale ** 2
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class InverseCIRDensity:
    """Law of V_T given V_0 for the 3/2 variance.

    W = exp(kappa theta T) / (c_T V_T) is non-central chi-squared with
    ``delta`` degrees of freedom and the given noncentrality.
    """

    delta: float
    c_T: float
    noncentrality: float
    growth: float

    @classmethod
    def from_params(cls, v0: float, T: float, p: ThreeHalvesParams) -> "InverseCIRDensity":
        if not (v0 > 0 and T > 0):
            raise DomainError("need v0 > 0 and T > 0")
        kt = p.kappa * p.theta
        eps2 = p.epsilon ** 2
        c_T = eps2 * math.expm1(kt * T) / (4.0 * kt)
        return cls(
            delta=4.0 * (p.kappa + eps2) / eps2,
            c_T=c_T,
            noncentrality=1.0 / (v0 * c_T),
            growth=math.exp(kt * T),
        )

    def w_of_v(self, v):
        return self.growth / (self.c_T * np.asarray(v, dtype=float))

    def v_of_w(self, w):
        return self.growth / (self.c_T * np.asarray(w, dtype=float))

    def chi2_pdf(self, w):
        return noncentral_chisq_pdf(self.delta, self.noncentrality, w)

    def pdf(self, y):
        """Density of V_T at ``y``."""
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise DomainError("need y > 0")
        w = self.w_of_v(y)
        out = self.growth / (self.c_T * y * y) * self.chi2_pdf(w)
        return out[()] if out.ndim == 0 else out

    def w_bounds(self, tail: float = TAIL_MASS):
        return (float(ncx2.ppf(tail, self.delta, self.noncentrality)),
                float(ncx2.isf(tail, self.delta, self.noncentrality)))


def transition_density_32(v0, T, y, p: ThreeHalvesParams):
    """Transition density f_{V_T | V_0 = v0}(y) of the 3/2 variance."""
    return InverseCIRDensity.from_params(v0, T, p).pdf(y)


@dataclass(frozen=True)
class _CIRLaw:
    """V_T = scale * W, W ~ chi2'(delta, noncentrality): square-root variance."""

    delta: float
    scale: float
    noncentrality: float

    @classmethod
    def from_params(cls, v0: float, T: float, sp: SVJParams) -> "_CIRLaw":
        if not (v0 >= 0 and T > 0):
            raise DomainError("need v0 >= 0 and T > 0")
        e2 = sp.epsilon ** 2
        scale = e2 * (-math.expm1(-sp.kappa * T)) / (4.0 * sp.kappa)
        return cls(
            delta=4.0 * sp.kappa * sp.theta / e2,
            scale=scale,
            noncentrality=v0 * math.exp(-sp.kappa * T) / scale,
        )

    def v_of_w(self, w):
        return self.scale * np.asarray(w, dtype=float)

    def chi2_pdf(self, w):
        return noncentral_chisq_pdf(self.delta, self.noncentrality, w)

    def w_bounds(self, tail: float = TAIL_MASS):
        return (float(ncx2.ppf(tail, self.delta, self.noncentrality)),
                float(ncx2.isf(tail, self.delta, self.noncentrality)))


def cir_transition_density(v0, T, y, sp: SVJParams):
    """Transition density of the square-root variance at ``y``."""
    law = _CIRLaw.from_params(v0, T, sp)
    y = np.asarray(y, dtype=float)
    out = law.chi2_pdf(y / law.scale) / law.scale
    return out[()] if out.ndim == 0 else out


class GInterpolant:
    """Chebyshev interpolant of g_32(y, tau) in log y on [y_lo, y_hi].

    The degree is doubled until the interpolant matches direct evaluation
    to ``check_tol`` (relative) at off-node points; if that never happens
    the direct evaluation is used.
    """

    def __init__(self, p: ThreeHalvesParams, tau: float, y_lo: float, y_hi: float,
                 check_tol: float = 1e-8, max_degree: int = 512):
        if not (0 < y_lo < y_hi):
            raise DomainError("need 0 < y_lo < y_hi")
        self.p, self.tau = p, tau
        self.lo, self.hi = math.log(y_lo), math.log(y_hi)
        self.coef = None
        self.max_rel_error = float("inf")
        deg = 32
        probe = np.linspace(-1, 1, 257)[1:-1] * 0.999
        exact = self._direct_t(probe)
        while deg <= max_degree:
            coef = cheb.chebinterpolate(self._direct_t, deg)
            err = np.max(np.abs(cheb.chebval(probe, coef) / exact - 1.0))
            if err <= check_tol:
                self.coef, self.max_rel_error = coef, float(err)
                break
            deg *= 2

    def _direct_t(self, t):
        y = np.exp(self.lo + (np.asarray(t) + 1.0) * 0.5 * (self.hi - self.lo))
        return g_32(y, self.tau, self.p)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.coef is None:
            return g_32(y, self.tau, self.p)
        logy = np.log(y)
        inside = (logy >= self.lo) & (logy <= self.hi)
        t = 2.0 * (logy - self.lo) / (self.hi - self.lo) - 1.0
        out = cheb.chebval(np.clip(t, -1, 1), self.coef)
        if not np.all(inside):
            out = np.where(inside, out, g_32(np.where(inside, 1.0, y), self.tau, self.p))
        return out


class _VIXPricerBase:
    """Shared quadrature machinery; subclasses define the law and VIX(w)."""

    quad = QuadratureSpec(abs_tol=1e-13, rel_tol=1e-12, max_subdivisions=400)

    def __init__(self, env: MarketEnv, spec: VIXSpec, T: float):
        if not T > 0:
            raise DomainError("maturity must be positive")
        self.env, self.spec, self.T = env, spec, T
        self.discount = math.exp(-env.r * T)

    # subclass hooks: self.law, self._vix2_of_v
    def vix_of_w(self, w):
        return np.sqrt(np.maximum(self._vix2_of_v(self.law.v_of_w(w)), 0.0))

    @cached_property
    def w_range(self):
        return self.law.w_bounds()

    def _expect(self, payoff, lo=None, hi=None, points=None):
        w_lo, w_hi = self.w_range
        lo = w_lo if lo is None else lo
        hi = w_hi if hi is None else hi
        if hi <= lo:
            return 0.0

        def f(w):
            return payoff(self.vix_of_w(w)) * self.law.chi2_pdf(w)

        try:
            val, _ = integrate(f, lo, hi, self.quad, points=points)
        except ConvergenceError as exc:
            # accept a near-miss if it is still accurate to 1e-9 of the forward
            if exc.error is not None and exc.error < 1e-9 * max(1.0, abs(exc.estimate)):
                return exc.estimate
            raise
        return val

    @cached_property
    def forward(self) -> float:
        """Undiscounted E[VIX_T]."""
        return self._expect(lambda v: v)

    @cached_property
    def second_moment(self) -> float:
        """Undiscounted E[VIX_T^2]."""
        return self._expect(lambda v: v * v)

    def _kink(self, K):
        """w at which VIX(w) = K, or None when K is outside the VIX range."""
        w_lo, w_hi = self.w_range
        v_lo, v_hi = self.vix_of_w(np.array([w_lo, w_hi]))
        if (v_lo - K) * (v_hi - K) >= 0:
            return None
        lw = brentq(lambda lw: float(self.vix_of_w(math.exp(lw))) - K,
                    math.log(w_lo), math.log(w_hi), xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return math.exp(lw)

    def _call_one(self, K):
        if K <= 0:
            return self.forward - K
        w_lo, w_hi = self.w_range
        wk = self._kink(K)
        payoff = lambda v: np.maximum(v - K, 0.0)  # noqa: E731
        if wk is None:
            v_mid = float(self.vix_of_w(math.sqrt(w_lo * w_hi)))
            return 0.0 if v_mid <= K else self.forward - K
        if self._vix_decreasing:
            return self._expect(payoff, w_lo, wk)
        return self._expect(payoff, wk, w_hi)

    def _put_direct_one(self, K):
        w_lo, w_hi = self.w_range
        wk = self._kink(K)
        payoff = lambda v: np.maximum(K - v, 0.0)  # noqa: E731
        if wk is None:
            v_mid = float(self.vix_of_w(math.sqrt(w_lo * w_hi)))
            return 0.0 if v_mid >= K else K - self.forward
        if self._vix_decreasing:
            return self._expect(payoff, wk, w_hi)
        return self._expect(payoff, w_lo, wk)

    def call_undiscounted(self, K):
        K = np.asarray(K, dtype=float)
        out = np.array([self._call_one(float(k)) for k in K.ravel()]).reshape(K.shape)
        return out[()] if out.ndim == 0 else out

    def put_direct_undiscounted(self, K):
        """Put by direct quadrature; used to check parity."""
        K = np.asarray(K, dtype=float)
        out = np.array([self._put_direct_one(float(k)) for k in K.ravel()]).reshape(K.shape)
        return out[()] if out.ndim == 0 else out

    def future(self, discounted: bool = True) -> float:
        return self.discount * self.forward if discounted else self.forward

    def call(self, K):
        return self.discount * self.call_undiscounted(K)

    def put(self, K):
        """Put from call via parity: P = C + K e^{-rT} - e^{-rT} E[VIX_T]."""
        K = np.asarray(K, dtype=float)
        return self.call(K) + self.discount * (K - self.forward)

    def implied_vols(self, K):
        """Black implied vols of calls, computed from undiscounted prices."""
        K = np.asarray(K, dtype=float)
        prices = self.call_undiscounted(K)
        return black_implied_vol(prices, self.forward, K, self.T)


class VIXPricer32(_VIXPricerBase):
    """VIX derivatives under the 3/2 plus jumps model."""

    _vix_decreasing = True

    def __init__(self, p: ThreeHalvesParams, jp: JumpParams = NO_JUMPS, env: MarketEnv = MarketEnv(),
                 spec: VIXSpec = VIXSpec(), T: float = 0.25, use_interpolant: bool = True,
                 allow_strict_local: bool = False):
        require_martingale(p, allow_strict_local)
        super().__init__(env, spec, T)
        self.p, self.jp = p, jp
        self.law = InverseCIRDensity.from_params(p.v0, T, p)
        self.g = None
        if use_interpolant:
            w_lo, w_hi = self.w_range
            y_lo, y_hi = float(self.law.v_of_w(w_hi)), float(self.law.v_of_w(w_lo))
            self.g = GInterpolant(p, spec.tau, 0.5 * y_lo, 2.0 * y_hi)

    def _vix2_of_v(self, v):
        return vix_squared(v, self.spec, self.p, self.jp, g=self.g)


class VIXPricerSVJ(_VIXPricerBase):
    """VIX derivatives under Heston variance with index jumps."""

    _vix_decreasing = False

    def __init__(self, sp: SVJParams, env: MarketEnv = MarketEnv(), spec: VIXSpec = VIXSpec(),
                 T: float = 0.25, g=None):
        super().__init__(env, spec, T)
        self.sp = sp
        self.law = _CIRLaw.from_params(sp.v0, T, sp)
        self._g = g

    def _vix2_of_v(self, v):
        if self._g is None:
            return vix_squared_svj(v, self.spec, self.sp)
        return (self._g(v) / self.spec.tau + _jump_addon(self.sp.jumps)) * self.spec.scale ** 2


def vix_future(p: ThreeHalvesParams, jp: JumpParams = NO_JUMPS, env: MarketEnv = MarketEnv(),
               spec: VIXSpec = VIXSpec(), T: float = 0.25, discounted: bool = True) -> float:
    """e^{-rT} E[VIX_T] (or E[VIX_T] with ``discounted=False``)."""
    return VIXPricer32(p, jp, env, spec, T).future(discounted)


def vix_call(p, jp=NO_JUMPS, env=MarketEnv(), spec=VIXSpec(), T=0.25, K=20.0):
    return VIXPricer32(p, jp, env, spec, T).call(K)


def vix_put(p, jp=NO_JUMPS, env=MarketEnv(), spec=VIXSpec(), T=0.25, K=20.0):
    return VIXPricer32(p, jp, env, spec, T).put(K)


def vix_future_svj(sp: SVJParams, env: MarketEnv = MarketEnv(), spec: VIXSpec = VIXSpec(),
                   T: float = 0.25, discounted: bool = True) -> float:
    return VIXPricerSVJ(sp, env, spec, T).future(discounted)


def vix_call_svj(sp, env=MarketEnv(), spec=VIXSpec(), T=0.25, K=20.0):
    return VIXPricerSVJ(sp, env, spec, T).call(K)


def vix_put_svj(sp, env=MarketEnv(), spec=VIXSpec(), T=0.25, K=20.0):
    return VIXPricerSVJ(sp, env, spec, T).put(K)
