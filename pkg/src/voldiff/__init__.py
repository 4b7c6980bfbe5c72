"""Conditional denoising diffusion for 9x9 implied-volatility surfaces."""

from .arbitrage import PenaltyBreakdown, PricingContext, penalty_conv, penalty_loops, total_penalty
from .dataprep import ConditioningConfig, PreparedData, SmoothingConfig, synthetic_generate
from .diffusion import NoiseSchedule, build_cosine_schedule
from .grid import DEFAULT_GRID, GridSpec
from .model import UNetConfig, param_init, unet_forward, unet_infer
from .training import Checkpoint, TrainConfig, fit

__version__ = "0.1.0"
