"""
Conversions between network outputs and x-space predictions.
"""

from __future__ import annotations

import numpy as np

from diffusion.schedule import SnrPoint
from errors import ConfigurationError


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ConfigurationError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def v_to_x(v: np.ndarray, z: np.ndarray, point: SnrPoint) -> np.ndarray:
    """x = α·z − σ·v"""
    _check_shapes(v, z)
    return point.alpha * np.asarray(z) - point.sigma * np.asarray(v)


def x_to_v(x: np.ndarray, z: np.ndarray, point: SnrPoint) -> np.ndarray:
    """v = α·ε − σ·x with ε recovered from z; undefined at σ = 0."""
    _check_shapes(x, z)
    if point.sigma == 0.0:
        raise ConfigurationError("x_to_v is singular at sigma = 0")
    eps = (np.asarray(z) - point.alpha * np.asarray(x)) / point.sigma
    return point.alpha * eps - point.sigma * np.asarray(x)
