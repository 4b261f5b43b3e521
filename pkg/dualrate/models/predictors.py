"""
Uniform predictor interface so samplers and metrics treat trained models and
the analytic oracle alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from data.gmm import GmmSpec
from diffusion.process import NoisyState
from diffusion.schedule import SnrPoint
from models.dual_rate import ContextFeatures, DualRateModel, denoise, encode_context, null_features
from models.oracle import oracle_denoiser


class Predictor(Protocol):
    has_encoder: bool
    n_classes: int
    data_dim: int

    def encode(self, z_tau: NoisyState, labels: Optional[np.ndarray]) -> Optional[ContextFeatures]: ...

    def predict(
        self,
        z_t: NoisyState,
        features: Optional[ContextFeatures],
        labels: Optional[np.ndarray],
        point: SnrPoint,
    ) -> np.ndarray: ...


@dataclass(frozen=True)
class DualRatePredictor:
    """Evaluation-mode wrapper; ablate_encoder forces null features."""

    model: DualRateModel
    ablate_encoder: bool = False

    @property
    def has_encoder(self) -> bool:
        return self.model.has_encoder and not self.ablate_encoder

    @property
    def n_classes(self) -> int:
        return self.model.n_classes

    @property
    def data_dim(self) -> int:
        return self.model.data_dim

    def encode(self, z_tau: NoisyState, labels: Optional[np.ndarray]) -> Optional[ContextFeatures]:
        if not self.has_encoder:
            return None
        return encode_context(self.model, z_tau, labels)

    def predict(self, z_t, features, labels, point) -> np.ndarray:
        if self.model.has_encoder and features is None:
            features = null_features(self.model, z_t.z.shape[0], z_t.t)
        x_hat, _ = denoise(self.model, z_t, features, labels, point)
        return x_hat


@dataclass(frozen=True)
class OraclePredictor:
    spec: GmmSpec
    has_encoder: bool = False

    @property
    def n_classes(self) -> int:
        return self.spec.n_components

    @property
    def data_dim(self) -> int:
        return self.spec.dim

    def encode(self, z_tau, labels) -> None:
        return None

    def predict(self, z_t, features, labels, point) -> np.ndarray:
        return oracle_denoiser(self.spec, z_t, point, labels)


def as_predictor(source) -> Predictor:
    if isinstance(source, DualRateModel):
        return DualRatePredictor(source)
    if isinstance(source, GmmSpec):
        return OraclePredictor(source)
    return source
