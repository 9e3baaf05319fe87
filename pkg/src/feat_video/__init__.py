"""Linear-complexity spatial/temporal/channel attention denoiser for video diffusion."""

__version__ = "0.1.0"

from .backbone import FEAT_L, FEAT_S, VARIANTS, FEATDenoiser, ModelConfig, count_flops, count_params
from .diffusion import DiffusionSchedule, EmaState, make_schedule
from .estimator import FEATVideoDiffusion
from .numerics import RngStream, grad_check
from .training import TrainConfig, train
from .wkv import wkv_reference, wkv_scan

__all__ = [
    "FEAT_L",
    "FEAT_S",
    "VARIANTS",
    "FEATDenoiser",
    "FEATVideoDiffusion",
    "ModelConfig",
    "DiffusionSchedule",
    "EmaState",
    "RngStream",
    "TrainConfig",
    "count_flops",
    "count_params",
    "grad_check",
    "make_schedule",
    "train",
    "wkv_reference",
    "wkv_scan",
]
