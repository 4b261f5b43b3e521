"""
Isotropic Gaussian mixtures with analytic structure.
Component ids double as class labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from data.batch import DataBatch
from errors import ConfigurationError


@dataclass(frozen=True)
class GmmSpec:
    weights: np.ndarray
    means: np.ndarray
    comp_std: float

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if weights.ndim != 1 or weights.shape[0] != means.shape[0]:
            raise ConfigurationError("GMM weights and means disagree on the component count")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("GMM weights must be positive and sum to 1")
        if not self.comp_std > 0:
            raise ConfigurationError(f"GMM comp_std must be positive, got {self.comp_std}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)

    @property
    def n_components(self) -> int:
        return int(self.means.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def second_moment(self) -> float:
        """E‖x‖² under the mixture."""
        return float(self.weights @ np.sum(self.means ** 2, axis=1) + self.dim * self.comp_std ** 2)

    def covariance_trace(self) -> float:
        mean = self.weights @ self.means
        return self.second_moment() - float(mean @ mean)


def benchmark_gmm(n_components: int = 8, dim: int = 2, comp_std: float = 0.1, radius: float = 2.0) -> GmmSpec:
    """Equal-weight components on a circle in the first two coordinates."""
    if dim < 1:
        raise ConfigurationError(f"data dim must be >= 1, got {dim}")
    angles = 2.0 * math.pi * np.arange(n_components) / n_components
    means = np.zeros((n_components, dim))
    means[:, 0] = radius * np.cos(angles)
    if dim > 1:
        means[:, 1] = radius * np.sin(angles)
    weights = np.full(n_components, 1.0 / n_components)
    weights[-1] = 1.0 - weights[:-1].sum()
    return GmmSpec(weights=weights, means=means, comp_std=comp_std)


def gmm_sample(spec: GmmSpec, n: int, rng: np.random.Generator) -> DataBatch:
    labels = rng.choice(spec.n_components, size=n, p=spec.weights)
    x = spec.means[labels] + spec.comp_std * rng.standard_normal((n, spec.dim))
    return DataBatch(x=x, labels=labels, n_classes=spec.n_components)


def gmm_log_density(spec: GmmSpec, x: np.ndarray) -> np.ndarray | float:
    """log Σ π_i N(x; μ_i, s²I) with a max-stabilised log-sum-exp."""
    points = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if points.shape[1] != spec.dim:
        raise ConfigurationError(f"point dim {points.shape[1]} does not match mixture dim {spec.dim}")
    var = spec.comp_std ** 2
    sq = np.sum((points[:, None, :] - spec.means[None, :, :]) ** 2, axis=2)
    log_terms = np.log(spec.weights)[None, :] - 0.5 * sq / var - 0.5 * spec.dim * math.log(2.0 * math.pi * var)
    peak = log_terms.max(axis=1, keepdims=True)
    out = peak[:, 0] + np.log(np.sum(np.exp(log_terms - peak), axis=1))
    return float(out[0]) if np.ndim(x) == 1 else out
