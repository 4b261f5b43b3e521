"""
Closed-form posterior mean E[x | z_t] for Gaussian-mixture data.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from data.gmm import GmmSpec
from diffusion.process import NoisyState
from diffusion.schedule import SnrPoint
from errors import ConfigurationError


def oracle_denoiser(
    spec: GmmSpec,
    z_t: NoisyState,
    point: SnrPoint,
    label: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Responsibility-weighted per-component posterior means.

    label restricts each item to one component; the null index
    (n_components) or None leaves the item unconditional.
    """
    z = np.atleast_2d(np.asarray(z_t.z, dtype=np.float64))
    if z.shape[1] != spec.dim:
        raise ConfigurationError(f"state dim {z.shape[1]} does not match mixture dim {spec.dim}")
    alpha, sigma, s2 = point.alpha, point.sigma, spec.comp_std ** 2
    var = alpha * alpha * s2 + sigma * sigma
    diff = z[:, None, :] - alpha * spec.means[None, :, :]
    logits = np.log(spec.weights)[None, :] - 0.5 * np.sum(diff ** 2, axis=2) / var

    if label is not None:
        labels = np.broadcast_to(np.asarray(label, dtype=np.int64), (z.shape[0],))
        conditioned = labels < spec.n_components
        if np.any(conditioned):
            mask = np.full(logits.shape, -np.inf)
            rows = np.flatnonzero(conditioned)
            mask[rows, labels[rows]] = 0.0
            mask[~conditioned] = 0.0
            logits = logits + mask

    logits -= logits.max(axis=1, keepdims=True)
    resp = np.exp(logits)
    resp /= resp.sum(axis=1, keepdims=True)
    comp_means = spec.means[None, :, :] + (alpha * s2 / var) * diff
    return np.einsum("bk,bkd->bd", resp, comp_means)
