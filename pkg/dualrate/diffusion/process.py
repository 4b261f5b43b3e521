"""
Gaussian forward process: marginals, the Markovian posterior and bridges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from diffusion.schedule import SnrPoint
from errors import TimeOrderingError


@dataclass
class NoisyState:
    z: np.ndarray
    t: float


@dataclass
class PosteriorParams:
    mean: np.ndarray
    std: float


def sample_marginal(x: np.ndarray, point_t: SnrPoint, rng: np.random.Generator) -> NoisyState:
    x = np.asarray(x, dtype=np.float64)
    eps = rng.standard_normal(x.shape)
    return NoisyState(z=point_t.alpha * x + point_t.sigma * eps, t=point_t.t)


def posterior_variances(point_s: SnrPoint, point_t: SnrPoint) -> tuple[float, float]:
    """(σ²_post, σ²_{t|s}) for s < t; the emitted variance lies between them."""
    r = (point_t.alpha * point_s.sigma) ** 2 / (point_t.sigma * point_s.alpha) ** 2
    var_post = (1.0 - r) * point_s.sigma ** 2
    var_ts = point_t.sigma ** 2 - (point_t.alpha / point_s.alpha) ** 2 * point_s.sigma ** 2
    return max(var_post, 0.0), max(var_ts, 0.0)


def posterior_params(
    z_t: NoisyState,
    x_hat: np.ndarray,
    point_s: SnrPoint,
    point_t: SnrPoint,
    noise_interp: float = 0.0,
) -> PosteriorParams:
    if point_s.t > point_t.t:
        raise TimeOrderingError(f"posterior needs s <= t, got s={point_s.t} t={point_t.t}")
    if point_s.t == point_t.t:
        return PosteriorParams(mean=np.array(z_t.z, dtype=np.float64, copy=True), std=0.0)
    if not 0.0 <= noise_interp <= 1.0:
        raise ValueError(f"noise_interp must lie in [0, 1], got {noise_interp}")

    # r = exp(λ_t - λ_s), written in α/σ form so α_t = 0 stays finite
    r = (point_t.alpha * point_s.sigma) ** 2 / (point_t.sigma * point_s.alpha) ** 2
    coef_z = point_t.alpha * point_s.sigma ** 2 / (point_t.sigma ** 2 * point_s.alpha)
    coef_x = (1.0 - r) * point_s.alpha
    mean = coef_z * z_t.z + coef_x * np.asarray(x_hat, dtype=np.float64)

    var_post, var_ts = posterior_variances(point_s, point_t)
    variance = var_post ** (1.0 - noise_interp) * var_ts ** noise_interp
    return PosteriorParams(mean=mean, std=math.sqrt(variance))


def sample_posterior(params: PosteriorParams, point_s: SnrPoint, rng: np.random.Generator) -> NoisyState:
    eps = rng.standard_normal(params.mean.shape)
    return NoisyState(z=params.mean + params.std * eps, t=point_s.t)


def sample_bridge(
    z_tau: NoisyState,
    x: np.ndarray,
    point_t: SnrPoint,
    point_tau: SnrPoint,
    rng: np.random.Generator,
) -> NoisyState:
    """Training-time bridge q(z_t | z_τ, x) with the exact posterior variance."""
    if point_t.t > point_tau.t:
        raise TimeOrderingError(f"bridge needs t <= tau, got t={point_t.t} tau={point_tau.t}")
    if point_t.t == point_tau.t:
        return NoisyState(z=z_tau.z, t=z_tau.t)
    params = posterior_params(z_tau, x, point_t, point_tau, noise_interp=0.0)
    return sample_posterior(params, point_t, rng)
