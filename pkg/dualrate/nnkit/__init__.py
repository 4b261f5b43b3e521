"""
Minimal differentiable-network toolkit: MLPs, reverse pass, Adam, EMA.
"""

from .mlp import (
    MlpGradients,
    MlpSpec,
    MlpTape,
    ParamVector,
    film_apply,
    fourier_time_embed,
    init_params,
    mlp_backward,
    mlp_forward,
)
from .optim import EmaState, OptimState, adam_step, clip_by_global_norm, ema_update

__all__ = [
    "MlpGradients",
    "MlpSpec",
    "MlpTape",
    "ParamVector",
    "film_apply",
    "fourier_time_embed",
    "init_params",
    "mlp_backward",
    "mlp_forward",
    "EmaState",
    "OptimState",
    "adam_step",
    "clip_by_global_norm",
    "ema_update",
]
