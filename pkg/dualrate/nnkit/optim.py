"""
Adam with global-norm clipping and linear warmup, plus parameter EMA.
Both return fresh records; callers own the state and replace it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List

import numpy as np

from errors import ConfigurationError, NumericalDivergenceError
from nnkit.mlp import ParamVector


@dataclass(frozen=True)
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-12
    warmup_steps: int = 0
    clip_norm: float = 1.0

    @classmethod
    def fresh(cls, n_params: int, **settings) -> "OptimState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), **settings)

    def __post_init__(self) -> None:
        if self.m.shape != self.v.shape:
            raise ConfigurationError("Adam moment vectors differ in length")
        if self.lr <= 0 or self.epsilon <= 0 or self.clip_norm <= 0:
            raise ConfigurationError("lr, epsilon and clip_norm must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError(f"Adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")

    def current_lr(self) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, (self.step + 1) / self.warmup_steps)


@dataclass(frozen=True)
class EmaState:
    shadow: np.ndarray
    decay: float

    @classmethod
    def of(cls, params: ParamVector, decay: float) -> "EmaState":
        if not 0.0 <= decay <= 1.0:
            raise ConfigurationError(f"EMA decay must lie in [0, 1], got {decay}")
        return cls(shadow=params.values.copy(), decay=decay)


def _nonfinite_names(grads: ParamVector) -> List[str]:
    return [name for name in grads.names() if not np.all(np.isfinite(grads.tensor(name)))]


def clip_by_global_norm(grads: np.ndarray, clip_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm > clip_norm:
        return grads * (clip_norm / norm)
    return grads


def adam_step(params: ParamVector, grads: ParamVector, state: OptimState) -> tuple[ParamVector, OptimState]:
    if len(params) != len(grads) or state.m.shape[0] != len(params):
        raise ConfigurationError(
            f"Adam length mismatch: params={len(params)} grads={len(grads)} moments={state.m.shape[0]}"
        )
    bad = _nonfinite_names(grads)
    if bad:
        raise NumericalDivergenceError(f"non-finite gradients in {', '.join(bad[:8])}")

    g = clip_by_global_norm(grads.values, state.clip_norm)
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    update = state.current_lr() * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params.with_values(params.values - update), replace(state, m=m, v=v, step=t)


def ema_update(ema: EmaState, params: ParamVector) -> EmaState:
    if ema.shadow.shape[0] != len(params):
        raise ConfigurationError(f"EMA length {ema.shadow.shape[0]} differs from params {len(params)}")
    shadow = ema.decay * ema.shadow + (1.0 - ema.decay) * params.values
    return replace(ema, shadow=shadow)
