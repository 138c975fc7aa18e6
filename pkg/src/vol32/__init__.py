"""Pricing, simulation and calibration for the 3/2 stochastic volatility model with jumps."""

from .errors import AccuracyWarning, ConvergenceError, DomainError, MartingaleError, Vol32Error
from .models import (JumpParams, MarketEnv, NO_JUMPS, SVJParams, ThreeHalvesParams, check_martingale,
                     complete_jump_params, params_from_mapping, read_param_file, require_martingale)
from .transforms import fl_transform_32j, g_32, g_svj, laplace_rv_32
from .vix import VIXPricer32, VIXPricerSVJ, VIXSpec, vix_call, vix_future, vix_put, vix_squared
from .equity import CosConfig, CosPricer, cos_price, equity_implied_vols, variance_swap_strike
from .implied import black_implied_vol, bs_implied_vol

__version__ = "0.1.0"


def bundled_path(name: str):
    """Path of a data file shipped with the package (parameter sets, quotes)."""
    from importlib.resources import files

    return files(__package__).joinpath("data", name)


def load_bundled_params(name: str, model: str = "32j"):
    """(params, jumps, env) from a bundled parameter file such as ``"fig4.txt"``."""
    return params_from_mapping(read_param_file(bundled_path(name)), model=model)
