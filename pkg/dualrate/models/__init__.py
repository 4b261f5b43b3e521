"""
Dual-rate networks, output parameterizations, guidance and the GMM oracle.
"""

from .dual_rate import (
    ContextFeatures,
    DenoiseTape,
    DualRateModel,
    build_dual_rate_model,
    build_standard_model,
    copy_into_encoder,
    denoise,
    encode_context,
    encoder_backward,
    model_backward,
    null_features,
)
from .guidance import guidance_active, guided_denoise, guided_predict
from .oracle import oracle_denoiser
from .parameterization import v_to_x, x_to_v
from .predictors import DualRatePredictor, OraclePredictor, Predictor, as_predictor

__all__ = [
    "ContextFeatures",
    "DenoiseTape",
    "DualRateModel",
    "build_dual_rate_model",
    "build_standard_model",
    "copy_into_encoder",
    "denoise",
    "encode_context",
    "encoder_backward",
    "model_backward",
    "null_features",
    "guidance_active",
    "guided_denoise",
    "guided_predict",
    "oracle_denoiser",
    "v_to_x",
    "x_to_v",
    "DualRatePredictor",
    "OraclePredictor",
    "Predictor",
    "as_predictor",
]
