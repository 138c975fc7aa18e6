"""Cross-checks between the analytic pricers, identities and the Monte Carlo oracle.

Each check reports its tolerance, the observed error and a status.  Monte
Carlo checks pass within 3 standard errors.  When the sample is too small to
resolve the quantity (relative standard error above ``UNDERPOWERED_REL_SE``
or fewer than ``MIN_PATHS`` paths) they are reported as inconclusive,
whatever the observed deviation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .equity import (CosPricer, char_fn, cos_price, log_return_cf, variance_swap_strike,
                     variance_swap_strike_transform)
from .errors import AccuracyWarning, MartingaleError
from .models import NO_JUMPS, MarketEnv, ThreeHalvesParams, check_martingale
from .montecarlo import MCConfig, mc_mean, mc_price, sample_variance_32, simulate_32j
from .specialfn import integrate
from .transforms import fl_transform_32j, g_32, g_32_central, g_svj, g_svj_transform, laplace_rv_32
from .vix import VIXPricer32, VIXSpec, transition_density_32, vix_squared

__all__ = ["Check", "run_suite", "format_report", "SUITES"]

SUITES = ("transforms", "vix", "equity", "all")
MIN_PATHS = 10_000
UNDERPOWERED_REL_SE = 0.05
N_SE = 3.0


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    tolerance: str
    observed: float
    status: str  # "pass" | "fail" | "inconclusive"

    @property
    def failed(self) -> bool:
        return self.status == "fail"


def _det(suite, name, err, tol, tol_text=None):
    ok = bool(np.isfinite(err) and err <= tol)
    return Check(suite, name, tol_text or f"<= {tol:.1e}", float(err), "pass" if ok else "fail")


def _mc(suite, name, est, target, scale=None):
    """3-SE check, inconclusive when the sample cannot resolve the target."""
    z = abs(est.value - target) / est.std_error if est.std_error > 0 else (0.0 if est.value == target else math.inf)
    scale = max(abs(target) if scale is None else scale, 1e-300)
    underpowered = est.n_paths < MIN_PATHS or est.std_error / scale > UNDERPOWERED_REL_SE
    if underpowered:
        status = "inconclusive"
    else:
        status = "pass" if z <= N_SE else "fail"
    return Check(suite, name, f"|z| <= {N_SE:g} (SE {est.std_error:.3g})", float(z), status)


def _sets():
    from . import load_bundled_params

    drimus, _, _ = load_bundled_params("drimus32.txt")
    fig4, fig4_jumps, _ = load_bundled_params("fig4.txt")
    return drimus, fig4, fig4_jumps


def _transforms_suite(n_paths, seed):
    s = "transforms"
    drimus, fig4, j4 = _sets()
    out = []
    env = MarketEnv(r=0.03, s0=100.0)
    for label, p, jp in (("drimus", drimus, NO_JUMPS), ("fig4", fig4, j4)):
        for T in (9 / 365, 0.25, 0.5):
            phi = fl_transform_32j(-1j, 0.0, math.log(env.s0), p.v0, 0.0, T, p, jp, env)
            target = env.s0 * math.exp(env.r * T)
            out.append(_det(s, f"martingale identity {label} T={T:.4g}", abs(phi.real - target) / target, 1e-8))
    # kappa - eps*rho = -0.755 < -eps^2/2 = -0.405
    bad = ThreeHalvesParams(kappa=0.1, theta=0.04, epsilon=0.9, rho=0.95, v0=0.04)
    try:
        fl_transform_32j(0.5, 0.0, 0.0, bad.v0, 0.0, 0.25, bad)
        rejected = False
    except MartingaleError:
        rejected = True
    out.append(Check(s, "martingale gate rejects kappa - eps*rho < -eps^2/2", "MartingaleError raised",
                     float(rejected), "pass" if rejected and not check_martingale(bad) else "fail"))
    worst = 0.0
    for x in (0.01, 0.03, 0.06, 0.2, 0.5):
        for tau in (9 / 365, 30 / 365, 0.25, 0.5, 1.0):
            a, b = g_32(x, tau, drimus), g_32_central(x, tau, drimus)
            worst = max(worst, abs(a - b) / abs(a))
    out.append(_det(s, "g_32 complex step vs central difference (5x5 grid)", worst, 1e-6))
    sp = _svj_set()
    worst = max(abs(g_svj(x, tau, sp) - g_svj_transform(x, tau, sp)) / g_svj(x, tau, sp)
                for x in (0.01, 0.06, 0.3) for tau in (30 / 365, 0.5, 2.0))
    out.append(_det(s, "g_svj analytic vs transform derivative", worst, 1e-8))

    tau = 30 / 365
    cfg = MCConfig(n_paths=n_paths, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyWarning)
        b = simulate_32j(drimus, NO_JUMPS, MarketEnv(), tau, cfg)
    out.append(_mc(s, "E[int V] vs g_32 (drimus, 30d)", mc_mean(b.int_var), float(g_32(drimus.v0, tau, drimus))))
    out.append(_mc(s, "E[exp(-int V)] vs Laplace transform (drimus, 30d, l=1)",
                   mc_mean(np.exp(-b.int_var)), float(laplace_rv_32(1.0, drimus.v0, tau, drimus).real)))
    T = 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyWarning)
        b = simulate_32j(drimus, j4, MarketEnv(), T, MCConfig(n_paths=n_paths, seed=seed + 1))
    u, l = 1.7, 0.3
    target = complex(fl_transform_32j(u, l, 0.0, drimus.v0, 0.0, T, drimus, j4, MarketEnv(s0=1.0)))
    x = b.log_price - math.log(b.env.s0)
    vals = np.exp(1j * u * x - l * b.realized_variance)
    out.append(_mc(s, "joint transform Re (u=1.7, l=0.3, drimus+jumps, T=0.5)", mc_mean(vals.real), target.real,
                   abs(target)))
    out.append(_mc(s, "joint transform Im (u=1.7, l=0.3, drimus+jumps, T=0.5)", mc_mean(vals.imag), target.imag,
                   abs(target)))
    return out


def _svj_set():
    from . import load_bundled_params

    sp, _, _ = load_bundled_params("heston_drimus.txt", model="svj")
    return sp


def _vix_suite(n_paths, seed):
    s = "vix"
    drimus, _, _ = _sets()
    env = MarketEnv(r=0.02)
    T = 0.25
    out = []
    pr = VIXPricer32(drimus, env=env, T=T)
    F = pr.forward
    strikes = F * np.linspace(0.8, 1.3, 11)
    parity = np.max(np.abs(pr.call(strikes) - pr.put_direct_undiscounted(strikes) * pr.discount
                           - pr.discount * (F - strikes)))
    out.append(_det(s, "VIX put-call parity residual / forward", parity / F, 1e-6))
    mass, _ = integrate(lambda y: transition_density_32(drimus.v0, T, y, drimus), 0.0, math.inf)
    out.append(_det(s, "transition density normalization", abs(mass - 1.0), 1e-8))
    iv = pr.implied_vols(strikes)
    out.append(Check(s, "VIX skew increasing (drimus, T=0.25)", "strictly increasing",
                     float(np.min(np.diff(iv))), "pass" if np.all(np.diff(iv) > 0) else "fail"))
    rng = np.random.default_rng(seed)
    v = sample_variance_32(drimus, T, n_paths, rng)
    vix = np.sqrt(vix_squared(v, VIXSpec(), drimus, g=pr.g))
    d = pr.discount
    out.append(_mc(s, "VIX future vs MC (drimus, T=0.25)", mc_mean(d * vix), pr.future()))
    for K in F * np.array([0.8, 0.9, 1.0, 1.1, 1.3]):
        out.append(_mc(s, f"VIX call K={K:.3f} vs MC", mc_mean(d * np.maximum(vix - K, 0.0)), float(pr.call(K)),
                       F))
    return out


def _equity_suite(n_paths, seed):
    s = "equity"
    drimus, fig4, j4 = _sets()
    env = MarketEnv(r=0.0, s0=100.0)
    out = []
    for T in (9 / 365, 0.5):
        pr = CosPricer(log_return_cf(fig4, T, j4, env), T, env)
        K = np.linspace(80, 120, 9)
        parity = np.max(np.abs(pr.price(K, "call") - pr.price(K, "put") - (env.s0 - K * math.exp(-env.r * T))))
        out.append(_det(s, f"equity put-call parity / s0 (fig4, T={T:.4g})", parity / env.s0, 1e-8))
    T = 0.5
    out.append(_det(s, "variance swap: g-formula vs transform derivative",
                    abs(variance_swap_strike(T, drimus, j4) / variance_swap_strike_transform(T, drimus, j4) - 1), 1e-8))
    for T in (9 / 365, 0.5):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AccuracyWarning)
            b = simulate_32j(fig4, j4, env, T, MCConfig(n_paths=n_paths, seed=seed + int(T * 1000)))
        K = np.array([90.0, 95.0, 100.0, 105.0, 110.0])
        prices = cos_price(K, "call", T, env, fig4, j4)
        for k, c in zip(K, prices):
            out.append(_mc(s, f"equity call K={k:g} T={T:.4g} (fig4) vs MC",
                           mc_price(lambda bb: np.maximum(bb.spot - k, 0.0), b), float(c), env.s0))
    T = 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyWarning)
        b = simulate_32j(drimus, j4, env, T, MCConfig(n_paths=n_paths, seed=seed + 2))
    out.append(_mc(s, "martingale E[e^{-rT} S_T] = s0 (drimus+jumps, T=0.5)", mc_price(lambda bb: bb.spot, b), env.s0))
    out.append(_mc(s, "variance swap strike vs MC (drimus+jumps, T=0.5)",
                   mc_mean(b.realized_variance / T), variance_swap_strike(T, drimus, j4)))
    T = 9 / 365
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyWarning)
        b = simulate_32j(drimus, j4, env, T, MCConfig(n_paths=n_paths, seed=seed + 3))
    u = 2.3
    target = complex(char_fn(u, T, 0.0, drimus.v0, drimus, j4, env))
    vals = np.exp(1j * u * (b.log_price - math.log(env.s0)))
    out.append(_mc(s, "characteristic function Re (u=2.3, drimus+jumps, 9d)", mc_mean(vals.real), target.real,
                   abs(target)))
    out.append(_mc(s, "characteristic function Im (u=2.3, drimus+jumps, 9d)", mc_mean(vals.imag), target.imag,
                   abs(target)))
    return out


def run_suite(suite: str = "all", n_paths: int = 200_000, seed: int = 7) -> list[Check]:
    if suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES}")
    runners = {"transforms": _transforms_suite, "vix": _vix_suite, "equity": _equity_suite}
    names = list(runners) if suite == "all" else [suite]
    checks = []
    for name in names:
        checks.extend(runners[name](n_paths, seed))
    return checks


def format_report(checks: list[Check]) -> str:
    width = max(len(c.name) for c in checks)
    lines = [f"{'suite':<11} {'check':<{width}}  {'tolerance':<28} {'observed':>12}  status"]
    for c in checks:
        lines.append(f"{c.suite:<11} {c.name:<{width}}  {c.tolerance:<28} {c.observed:>12.4g}  {c.status.upper()}")
    n_fail = sum(c.failed for c in checks)
    n_inc = sum(c.status == "inconclusive" for c in checks)
    lines.append(f"{len(checks)} checks: {len(checks) - n_fail - n_inc} pass, {n_fail} fail, {n_inc} inconclusive")
    return "\n".join(lines)
