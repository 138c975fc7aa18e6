"""Parameter containers, validity checks and the martingale gate.

Variance-level fields (``theta``, ``v0``) are always stored as variances,
never as volatilities.  Parameter files may be written in either unit; see
:func:`read_param_file`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import DomainError, MartingaleError

__all__ = [
    "ThreeHalvesParams",
    "JumpParams",
    "SVJParams",
    "MarketEnv",
    "OptionKind",
    "Underlying",
    "OptionSpec",
    "NO_JUMPS",
    "check_martingale",
    "require_martingale",
    "complete_jump_params",
    "PARAM_KEYS",
    "read_param_file",
    "write_param_file",
    "params_from_mapping",
]


@dataclass(frozen=True)
class ThreeHalvesParams:
    """Diffusion parameters of dV = kappa V (theta - V) dt + epsilon V^{3/2} dW."""

    kappa: float
    theta: float
    epsilon: float
    rho: float
    v0: float

    def __post_init__(self):
        for name in ("kappa", "theta", "epsilon", "v0"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be finite and > 0, got {val!r}")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho!r}")

    def with_v0(self, v0: float) -> "ThreeHalvesParams":
        return replace(self, v0=v0)


@dataclass(frozen=True)
class JumpParams:
    """Compound-Poisson lognormal jumps in the index.

    ``mu``/``sigma`` describe the log jump size; ``mu_bar`` is the expected
    relative jump, tied to them by mu = log(1 + mu_bar) - sigma^2/2.  Use
    :func:`complete_jump_params` to build one from either mean.
    """

    lam: float
    mu: float
    sigma: float
    mu_bar: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise DomainError(f"jump intensity must be >= 0, got {self.lam!r}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise DomainError(f"jump sigma must be >= 0, got {self.sigma!r}")
        if not self.mu_bar > -1:
            raise DomainError(f"mu_bar must exceed -1, got {self.mu_bar!r}")
        implied = math.log1p(self.mu_bar) - 0.5 * self.sigma ** 2
        if abs(implied - self.mu) > 1e-12 * max(1.0, abs(self.mu)):
            raise DomainError(
                f"mu={self.mu!r} inconsistent with mu_bar={self.mu_bar!r}, sigma={self.sigma!r}"
            )

    @property
    def second_moment(self) -> float:
        """E[xi^2] of the log jump size."""
        return self.mu ** 2 + self.sigma ** 2


NO_JUMPS = JumpParams(lam=0.0, mu=0.0, sigma=0.0, mu_bar=0.0)


def complete_jump_params(lam: float, sigma: float, mu: float | None = None,
                         mu_bar: float | None = None) -> JumpParams:
    """Build JumpParams from exactly one of ``mu`` and ``mu_bar``."""
    if (mu is None) == (mu_bar is None):
        raise DomainError("give exactly one of mu and mu_bar")
    if sigma < 0:
        raise DomainError("sigma must be >= 0")
    if mu_bar is not None:
        if not mu_bar > -1:
            raise DomainError("mu_bar must exceed -1")
        mu = math.log1p(mu_bar) - 0.5 * sigma ** 2
    else:
        mu_bar = math.expm1(mu + 0.5 * sigma ** 2)
    return JumpParams(lam=float(lam), mu=float(mu), sigma=float(sigma), mu_bar=float(mu_bar))


@dataclass(frozen=True)
class SVJParams:
    """Heston variance with lognormal index jumps; ``jumps.lam == 0`` is Heston."""

    kappa: float
    theta: float
    epsilon: float
    rho: float
    v0: float
    jumps: JumpParams = field(default=NO_JUMPS)

    def __post_init__(self):
        for name in ("kappa", "theta", "epsilon"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be finite and > 0, got {val!r}")
        if not self.v0 >= 0:
            raise DomainError("v0 must be >= 0")
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho!r}")


@dataclass(frozen=True)
class MarketEnv:
    r: float = 0.0
    s0: float = 100.0

    def __post_init__(self):
        if not (math.isfinite(self.s0) and self.s0 > 0):
            raise DomainError("s0 must be > 0")
        if not math.isfinite(self.r):
            raise DomainError("r must be finite")


class OptionKind(str, Enum):
    CALL = "call"
    PUT = "put"


class Underlying(str, Enum):
    EQUITY = "equity"
    VIX = "vix"
    VARIANCE_SWAP = "variance_swap"


@dataclass(frozen=True)
class OptionSpec:
    strike: float
    maturity: float
    kind: OptionKind = OptionKind.CALL
    underlying: Underlying = Underlying.EQUITY

    def __post_init__(self):
        if not self.strike > 0:
            raise DomainError("strike must be > 0")
        if not self.maturity > 0:
            raise DomainError("maturity must be > 0")
        object.__setattr__(self, "kind", OptionKind(self.kind))
        object.__setattr__(self, "underlying", Underlying(self.underlying))


def check_martingale(p: ThreeHalvesParams) -> bool:
    """True iff the discounted index is a true martingale: kappa - eps*rho >= -eps^2/2."""
    return p.kappa - p.epsilon * p.rho >= -0.5 * p.epsilon ** 2


def require_martingale(p: ThreeHalvesParams, allow_strict_local: bool = False) -> None:
    """Raise MartingaleError unless the condition holds or the override is set."""
    if allow_strict_local or check_martingale(p):
        return
    raise MartingaleError(
        f"kappa - epsilon*rho = {p.kappa - p.epsilon * p.rho:.6g} < "
        f"-epsilon^2/2 = {-0.5 * p.epsilon ** 2:.6g}: discounted index is a strict local martingale"
    )


# ---------------------------------------------------------------------------
# Parameter files: flat key=value text
# ---------------------------------------------------------------------------

PARAM_KEYS = ("kappa", "theta", "epsilon", "rho", "v0", "lambda", "mu", "mu_bar", "sigma", "r", "s0")


def read_param_file(path) -> dict[str, float]:
    """Parse a ``key = value`` parameter file.  Unknown or repeated keys are errors."""
    values: dict[str, float] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in PARAM_KEYS:
            raise DomainError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise DomainError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = float(val)
        except ValueError:
            raise DomainError(f"{path}:{lineno}: {key} is not a number: {val!r}") from None
    return values


def _jumps_from_mapping(values) -> JumpParams:
    lam = values.get("lambda", 0.0)
    sigma = values.get("sigma", 0.0)
    mu = values.get("mu")
    mu_bar = values.get("mu_bar")
    if mu is None and mu_bar is None:
        if lam > 0:
            raise DomainError("jump intensity given without mu or mu_bar")
        mu = 0.0
    if mu is not None and mu_bar is not None:
        jp = complete_jump_params(lam, sigma, mu=mu)
        if abs(jp.mu_bar - mu_bar) > 1e-10 * max(1.0, abs(mu_bar)):
            raise DomainError("mu and mu_bar both given but inconsistent")
        return jp
    return complete_jump_params(lam, sigma, mu=mu, mu_bar=mu_bar)


def params_from_mapping(values, model: str = "32j", units: str = "variance"):
    """Build ``(params, jumps, env)`` from a parsed parameter mapping.

    ``model`` is ``"32j"`` (3/2 plus jumps) or ``"svj"``.  With
    ``units="vol"`` the entries ``theta`` and ``v0`` are read as
    volatilities and squared.
    """
    if units not in ("variance", "vol"):
        raise DomainError(f"units must be 'variance' or 'vol', got {units!r}")
    missing = [k for k in ("kappa", "theta", "epsilon", "rho", "v0") if k not in values]
    if missing:
        raise DomainError(f"missing parameters: {', '.join(missing)}")
    theta, v0 = values["theta"], values["v0"]
    if units == "vol":
        theta, v0 = theta ** 2, v0 ** 2
    jp = _jumps_from_mapping(values)
    env = MarketEnv(r=values.get("r", 0.0), s0=values.get("s0", 100.0))
    if model == "32j":
        p = ThreeHalvesParams(values["kappa"], theta, values["epsilon"], values["rho"], v0)
    elif model == "svj":
        p = SVJParams(values["kappa"], theta, values["epsilon"], values["rho"], v0, jumps=jp)
    else:
        raise DomainError(f"unknown model {model!r}")
    return p, jp, env


def write_param_file(path, params, jumps: JumpParams = NO_JUMPS, env: MarketEnv | None = None,
                     header: str = "") -> None:
    """Write parameters (variance units) in the key=value format."""
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines += [
        f"kappa = {params.kappa!r}",
        f"theta = {params.theta!r}",
        f"epsilon = {params.epsilon!r}",
        f"rho = {params.rho!r}",
        f"v0 = {params.v0!r}",
        f"lambda = {jumps.lam!r}",
        f"mu = {jumps.mu!r}",
        f"sigma = {jumps.sigma!r}",
    ]
    if env is not None:
        lines += [f"r = {env.r!r}", f"s0 = {env.s0!r}"]
    Path(path).write_text("\n".join(lines) + "\n")
