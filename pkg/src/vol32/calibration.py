"""Least-squares calibration of the 3/2 plus jumps model to implied vols.

The loss is the weighted root-mean-square implied-vol error in decimal vol
units (0.20 vs 0.25 gives 0.05).  Optimization runs in unconstrained
coordinates: log for positive parameters, atanh for the correlation,
identity for the mean log jump.  Bounds and the martingale condition are
enforced by a penalty, and the returned point always satisfies both.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares, minimize

from .equity import CosConfig, CosPricer, log_return_cf
from .errors import DomainError, Vol32Error
from .implied import black_implied_vol, bs_implied_vol
from .models import (JumpParams, MarketEnv, NO_JUMPS, ThreeHalvesParams, check_martingale,
                     complete_jump_params)
from .vix import VIXPricer32, VIXSpec

__all__ = [
    "Quote",
    "QuoteSet",
    "CalibrationResult",
    "DEFAULT_BOUNDS",
    "CALIBRATION_COS",
    "model_vols",
    "objective",
    "calibrate",
    "read_quotes_csv",
    "write_quotes_csv",
    "write_residuals_csv",
    "synthetic_quotes",
]

QUOTE_HEADER = ["maturity_yrs", "strike", "kind", "underlying", "implied_vol", "weight"]

# fixed grid: the objective must be a smooth function of the parameters
CALIBRATION_COS = CosConfig(n_terms=1024, max_terms=1024, trunc_width=16.0, max_widenings=0)

DEFAULT_BOUNDS = {
    "kappa": (0.1, 100.0),
    "theta": (1e-4, 1.0),
    "epsilon": (0.01, 200.0),
    "rho": (-0.9999, 0.9999),
    "v0": (1e-4, 1.0),
    "lam": (1e-4, 10.0),
    "mu": (-1.0, 1.0),
    "sigma": (1e-3, 2.0),
}
DIFFUSION_NAMES = ("kappa", "theta", "epsilon", "rho", "v0")
JUMP_NAMES = ("lam", "mu", "sigma")
PENALTY = 1.0


@dataclass(frozen=True)
class Quote:
    maturity: float
    strike: float
    kind: str
    underlying: str
    implied_vol: float
    weight: float = 1.0

    def __post_init__(self):
        if not (self.maturity > 0 and self.strike > 0):
            raise DomainError("quote maturity and strike must be positive")
        if self.kind not in ("call", "put"):
            raise DomainError(f"kind must be call or put, got {self.kind!r}")
        if self.underlying not in ("equity", "vix"):
            raise DomainError(f"underlying must be equity or vix, got {self.underlying!r}")
        if not self.implied_vol > 0:
            raise DomainError("quoted vols must be positive")
        if not self.weight >= 0:
            raise DomainError("weights must be non-negative")


@dataclass(frozen=True)
class QuoteSet:
    quotes: tuple
    env: MarketEnv = MarketEnv()

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))
        if not self.quotes:
            raise DomainError("empty quote set")
        if sum(q.weight for q in self.quotes) <= 0:
            raise DomainError("weights must not all be zero")

    @property
    def market_vols(self) -> np.ndarray:
        return np.array([q.implied_vol for q in self.quotes])

    @property
    def weights(self) -> np.ndarray:
        return np.array([q.weight for q in self.quotes])


@dataclass
class CalibrationResult:
    params: ThreeHalvesParams
    jumps: JumpParams
    rmse: float
    iterations: int
    converged: bool
    per_quote_residuals: np.ndarray
    model_vols: np.ndarray
    n_evaluations: int = 0
    history: list = field(default_factory=list)


def model_vols(p: ThreeHalvesParams, jp: JumpParams, qs: QuoteSet, cos_cfg: CosConfig = CALIBRATION_COS,
               vix_spec: VIXSpec = VIXSpec()):
    """Model implied vols for every quote; NaN where pricing or inversion failed."""
    out = np.full(len(qs.quotes), np.nan)
    groups: dict[tuple, list[int]] = {}
    for i, q in enumerate(qs.quotes):
        groups.setdefault((q.underlying, q.maturity), []).append(i)
    env = qs.env
    for (underlying, T), idx in groups.items():
        strikes = np.array([qs.quotes[i].strike for i in idx])
        kinds = np.array([qs.quotes[i].kind for i in idx])
        try:
            if underlying == "equity":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pricer = CosPricer(log_return_cf(p, T, jp, env), T, env, cos_cfg)
                    prices = pricer.price(strikes, kinds)
            else:
                vp = VIXPricer32(p, jp, env, vix_spec, T)
                calls = vp.call_undiscounted(strikes)
                prices = np.where(kinds == "call", calls, calls + strikes - vp.forward)
        except (Vol32Error, FloatingPointError, ValueError):
            continue
        for j, i in enumerate(idx):
            try:
                if underlying == "equity":
                    out[i] = bs_implied_vol(prices[j], env.s0, strikes[j], T, env.r, kinds[j])
                else:
                    out[i] = black_implied_vol(prices[j], vp.forward, strikes[j], T, kinds[j])
            except Vol32Error:
                pass
    return out


def _residuals(p, jp, qs, cos_cfg):
    mv = model_vols(p, jp, qs, cos_cfg)
    return mv - qs.market_vols, mv


def objective(p: ThreeHalvesParams, jp: JumpParams, qs: QuoteSet, cos_cfg: CosConfig = CALIBRATION_COS) -> float:
    """sqrt(sum w (model - market)^2 / sum w) over quotes that priced successfully."""
    res, _ = _residuals(p, jp, qs, cos_cfg)
    return _rmse(res, qs.weights, warn=True)


def _rmse(res, w, warn=False):
    ok = np.isfinite(res)
    if not np.all(ok):
        if warn:
            warnings.warn(f"{int((~ok).sum())} quotes failed to price and were excluded", stacklevel=3)
        if not np.any(ok & (w > 0)):
            return float("inf")
    w = w[ok]
    return float(math.sqrt(np.sum(w * res[ok] ** 2) / np.sum(w)))


class _Space:
    """Map between parameter objects and unconstrained optimizer vectors."""

    def __init__(self, free, fixed, bounds):
        self.free = list(free)
        self.fixed = dict(fixed)
        self.bounds = bounds

    def _fwd(self, name, x):
        if name == "rho":
            return math.atanh(x)
        if name == "mu":
            return x
        return math.log(x)

    def _inv(self, name, y):
        if name == "rho":
            return math.tanh(y)
        if name == "mu":
            return y
        return math.exp(min(y, 700.0))

    def encode(self, values: dict) -> np.ndarray:
        return np.array([self._fwd(n, values[n]) for n in self.free])

    def decode(self, y) -> dict:
        values = dict(self.fixed)
        values.update({n: self._inv(n, float(v)) for n, v in zip(self.free, y)})
        return values

    def violation(self, values) -> float:
        """Total distance outside the bounds (in transformed units)."""
        out = 0.0
        for n in self.free:
            lo, hi = self.bounds[n]
            v = values[n]
            if v < lo:
                out += self._fwd(n, lo) - self._fwd(n, v) if n != "mu" else lo - v
            elif v > hi:
                out += self._fwd(n, v) - self._fwd(n, hi) if n != "mu" else v - hi
        return out

    @staticmethod
    def build(values):
        p = ThreeHalvesParams(values["kappa"], values["theta"], values["epsilon"], values["rho"], values["v0"])
        lam = values.get("lam", 0.0)
        if lam > 0:
            jp = complete_jump_params(lam, values["sigma"], mu=values["mu"])
        else:
            jp = NO_JUMPS
        return p, jp


def _as_values(p: ThreeHalvesParams, jp: JumpParams) -> dict:
    return {"kappa": p.kappa, "theta": p.theta, "epsilon": p.epsilon, "rho": p.rho, "v0": p.v0,
            "lam": jp.lam, "mu": jp.mu, "sigma": jp.sigma}


def calibrate(qs: QuoteSet, init: ThreeHalvesParams, init_jumps: JumpParams = NO_JUMPS, *,
              jumps: bool | None = None, fixed: dict | None = None, bounds: dict | None = None,
              method: str = "nelder_mead", max_iter: int | None = None, restarts: int = 3,
              seed: int = 0, cos_cfg: CosConfig = CALIBRATION_COS, tol: float = 1e-14) -> CalibrationResult:
    """Fit parameters to ``qs`` by weighted implied-vol least squares.

    ``jumps`` toggles the jump parameters (default: on iff ``init_jumps``
    has positive intensity).  ``fixed`` maps parameter names to held values,
    e.g. ``{"kappa": 30.84}``.  ``method`` is ``"nelder_mead"`` (with
    ``restarts`` seeded restarts) or ``"lm"``.  On non-convergence the best
    point found is returned with ``converged=False``.
    """
    if method not in ("nelder_mead", "lm"):
        raise DomainError("method must be 'nelder_mead' or 'lm'")
    use_jumps = init_jumps.lam > 0 if jumps is None else bool(jumps)
    bnds = dict(DEFAULT_BOUNDS)
    bnds.update(bounds or {})
    for name, (lo, hi) in bnds.items():
        if not lo < hi:
            raise DomainError(f"empty bounds for {name}")
        if name in ("rho",) and not (-1 <= lo and hi <= 1):
            raise DomainError("rho bounds must lie in [-1, 1]")
        if name not in ("rho", "mu") and lo <= 0:
            raise DomainError(f"lower bound of {name} must be positive")
    fixed = dict(fixed or {})
    names = list(DIFFUSION_NAMES) + (list(JUMP_NAMES) if use_jumps else [])
    values0 = _as_values(init, init_jumps)
    if use_jumps and init_jumps.lam == 0:
        raise DomainError("jump calibration needs an initial jump intensity > 0")
    if not use_jumps:
        fixed.update({"lam": 0.0, "mu": 0.0, "sigma": 0.0})
    for n in names:
        if n in fixed:
            values0[n] = fixed[n]
    free = [n for n in names if n not in fixed]
    fixed_all = {n: values0[n] for n in values0 if n not in free}
    space = _Space(free, fixed_all, bnds)
    if space.violation(values0) > 0:
        raise DomainError("initial parameters lie outside the bounds")
    if not check_martingale(_Space.build(values0)[0]):
        raise DomainError("initial parameters violate the martingale condition")

    w = qs.weights
    sqrt_w = np.sqrt(w / w.sum())
    state = {"evals": 0, "best": (float("inf"), None)}

    def residual_vector(y):
        state["evals"] += 1
        values = space.decode(y)
        viol = space.violation(values)
        try:
            p, jp = _Space.build(values)
        except DomainError:
            return None, values, viol + 1.0
        if not check_martingale(p):
            mart = -(p.kappa - p.epsilon * p.rho + 0.5 * p.epsilon ** 2)
            return None, values, viol + 1.0 + mart
        if viol > 0:
            return None, values, viol
        res, _ = _residuals(p, jp, qs, cos_cfg)
        res = np.where(np.isfinite(res), res, 1.0)  # failed quotes count as a 100 vol-point miss
        return res, values, 0.0

    def scalar(y):
        res, values, bad = residual_vector(y)
        if res is None:
            return PENALTY * (1.0 + bad)
        f = float(np.sum((sqrt_w * res) ** 2))
        if f < state["best"][0]:
            state["best"] = (f, values)
        return f

    y0 = space.encode(values0)
    history = []
    iterations = 0
    converged = False
    if method == "nelder_mead":
        max_iter = 2000 if max_iter is None else max_iter
        rng = np.random.default_rng(seed)
        start = y0
        for attempt in range(restarts + 1):
            step = 0.1 if attempt == 0 else 0.05
            simplex = np.vstack([start] + [start + step * np.eye(len(start))[i] * (1 if attempt == 0 else rng.choice([-1, 1]))
                                           for i in range(len(start))])
            if attempt > 0:
                simplex[1:] += rng.normal(scale=0.01, size=simplex[1:].shape)
            out = minimize(scalar, start, method="Nelder-Mead",
                           options={"initial_simplex": simplex, "maxiter": max_iter, "maxfev": 4 * max_iter,
                                    "xatol": 1e-10, "fatol": tol, "adaptive": True})
            iterations += int(out.nit)
            history.append(float(out.fun))
            converged = bool(out.success)
            start = space.encode(state["best"][1]) if state["best"][1] is not None else out.x
            if len(history) > 1 and history[-2] - history[-1] <= max(tol, 1e-3 * history[-1]):
                break
    else:
        max_iter = 200 if max_iter is None else max_iter
        n_res = len(qs.quotes)

        def vec(y):
            res, _, bad = residual_vector(y)
            if res is None:
                return np.full(n_res, PENALTY * (1.0 + bad))
            f = float(np.sum((sqrt_w * res) ** 2))
            if f < state["best"][0]:
                state["best"] = (f, space.decode(y))
            return sqrt_w * res

        if n_res < len(free):
            raise DomainError("'lm' needs at least as many quotes as free parameters")
        out = least_squares(vec, y0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=max_iter * (len(free) + 1), x_scale="jac")
        iterations = int(out.nfev)
        converged = bool(out.status > 0)
        history.append(float(2.0 * out.cost))

    best_values = state["best"][1] if state["best"][1] is not None else values0
    p, jp = _Space.build(best_values)
    res, mv = _residuals(p, jp, qs, cos_cfg)
    return CalibrationResult(params=p, jumps=jp, rmse=_rmse(res, w), iterations=iterations,
                             converged=converged, per_quote_residuals=res, model_vols=mv,
                             n_evaluations=state["evals"], history=history)


def synthetic_quotes(p: ThreeHalvesParams, jp: JumpParams, env: MarketEnv, T: float, strikes,
                     noise: float = 0.0, seed: int = 0, cos_cfg: CosConfig = CALIBRATION_COS) -> QuoteSet:
    """Out-of-the-money equity quotes from the model, plus optional Gaussian vol noise."""
    strikes = np.asarray(strikes, dtype=float)
    fwd = env.s0 * math.exp(env.r * T)
    kinds = ["call" if k >= fwd else "put" for k in strikes]
    template = QuoteSet([Quote(T, k, kd, "equity", 1.0) for k, kd in zip(strikes, kinds)], env)
    vols = model_vols(p, jp, template, cos_cfg)
    if not np.all(np.isfinite(vols)):
        raise DomainError("model failed to price some synthetic quotes")
    if noise > 0:
        vols = vols + noise * np.random.default_rng(seed).standard_normal(vols.size)
        if np.any(vols <= 0):
            raise DomainError("noise produced non-positive vols")
    return QuoteSet([Quote(T, k, kd, "equity", float(v)) for k, kd, v in zip(strikes, kinds, vols)], env)


# ---------------------------------------------------------------------------
# Quote files
# ---------------------------------------------------------------------------

def read_quotes_csv(path, env: MarketEnv = MarketEnv()) -> QuoteSet:
    """Read quotes; lines starting with '#' are comments."""
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames != QUOTE_HEADER:
        raise DomainError(f"quote file header must be {','.join(QUOTE_HEADER)}")
    quotes = []
    for lineno, row in enumerate(reader, 2):
        try:
            quotes.append(Quote(float(row["maturity_yrs"]), float(row["strike"]), row["kind"].strip(),
                                row["underlying"].strip(), float(row["implied_vol"]), float(row["weight"])))
        except (TypeError, ValueError) as exc:
            raise DomainError(f"{path}: bad quote row {lineno}: {exc}") from None
    return QuoteSet(quotes, env)


def write_quotes_csv(path, qs: QuoteSet, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(QUOTE_HEADER)
        for q in qs.quotes:
            writer.writerow([format(q.maturity, ".17g"), format(q.strike, ".17g"), q.kind, q.underlying,
                             format(q.implied_vol, ".17g"), format(q.weight, ".17g")])


def write_residuals_csv(path, qs: QuoteSet, result: CalibrationResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["maturity_yrs", "strike", "kind", "underlying", "market_vol", "model_vol",
                         "residual", "weight"])
        for q, mv, r in zip(qs.quotes, result.model_vols, result.per_quote_residuals):
            writer.writerow([format(q.maturity, ".17g"), format(q.strike, ".17g"), q.kind, q.underlying,
                             format(q.implied_vol, ".17g"), format(float(mv), ".17g"),
                             format(float(r), ".17g"), format(q.weight, ".17g")])
