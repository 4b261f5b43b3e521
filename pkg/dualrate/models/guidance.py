"""
Classifier-free guidance gated to a log-SNR interval.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from diffusion.process import NoisyState
from diffusion.schedule import SnrPoint
from models.dual_rate import ContextFeatures, DualRateModel
from models.predictors import DualRatePredictor, Predictor


def guidance_active(
    guidance_w: float,
    interval: Tuple[float, float],
    lam: float,
    n_classes: int,
    labels: Optional[np.ndarray],
) -> bool:
    lo, hi = interval
    return guidance_w > 0.0 and n_classes > 0 and labels is not None and lo <= lam <= hi


def guided_predict(
    predictor: Predictor,
    z_t: NoisyState,
    features_cond: Optional[ContextFeatures],
    features_uncond: Optional[ContextFeatures],
    labels: Optional[np.ndarray],
    guidance_w: float,
    interval: Tuple[float, float],
    point: SnrPoint,
) -> np.ndarray:
    """cond + w·(cond − uncond) inside the interval, cond elsewhere."""
    cond = predictor.predict(z_t, features_cond, labels, point)
    if not guidance_active(guidance_w, interval, point.lam, predictor.n_classes, labels):
        return cond
    null = np.full(z_t.z.shape[0], predictor.n_classes, dtype=np.int64)
    uncond = predictor.predict(z_t, features_uncond, null, point)
    return cond + guidance_w * (cond - uncond)


def guided_denoise(
    model: DualRateModel,
    z_t: NoisyState,
    features_cond: Optional[ContextFeatures],
    features_uncond: Optional[ContextFeatures],
    labels: Optional[np.ndarray],
    guidance_w: float,
    interval: Tuple[float, float],
    point: SnrPoint,
) -> np.ndarray:
    return guided_predict(
        DualRatePredictor(model), z_t, features_cond, features_uncond, labels, guidance_w, interval, point
    )
