"""
Joint time sampling for dual-rate training and distillation.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from errors import ConfigurationError


def sample_training_times(K: int, rng: np.random.Generator) -> Tuple[float, float]:
    """τ ~ U[1/K, 1], δ ~ U(0, 1/K], t = τ − δ."""
    if K < 1:
        raise ConfigurationError(f"K must be >= 1, got {K}")
    u_tau, u_delta = rng.random(2)
    tau = 1.0 / K + (1.0 - 1.0 / K) * float(u_tau)
    delta = (1.0 - float(u_delta)) / K
    return tau, max(tau - delta, 0.0)


def sample_distill_times(K: int, k: int, rng: np.random.Generator) -> Tuple[float, float, float]:
    """τ on the heavy grid, t on the light grid within τ's block, s ∈ [t − 1/k, t)."""
    if K < 1 or k % K:
        raise ConfigurationError(f"K={K} must be >= 1 and divide k={k}")
    stride = k // K
    tau_idx = int(rng.integers(1, K + 1)) * stride
    t_idx = tau_idx - int(rng.integers(0, stride))
    delta_s = (1.0 - float(rng.random())) / k
    t = t_idx / k
    return tau_idx / k, t, max(t - delta_s, 0.0)
