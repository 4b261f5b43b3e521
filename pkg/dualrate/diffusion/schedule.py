"""
Variance-preserving cosine log-SNR schedule with boundary clamping.

Clamping restricts the raw cosine schedule to [t_lo, t_hi] (where raw λ hits
lambda_max and lambda_min) and remaps t ∈ [0, 1] linearly onto that range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigurationError


@dataclass(frozen=True)
class SnrPoint:
    t: float
    lam: float
    alpha: float
    sigma: float
    dlambda_dt: float


def _raw_time_of_lambda(lam: float) -> float:
    # raw λ(u) = -2 log tan(πu/2)
    if lam == math.inf:
        return 0.0
    if lam == -math.inf:
        return 1.0
    return (2.0 / math.pi) * math.atan(math.exp(-0.5 * lam))


class LogSnrSchedule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["cosine"] = "cosine"
    lambda_min: float = Field(default=-12.0, description="log-SNR at t=1")
    lambda_max: float = Field(default=12.0, description="log-SNR at t=0")

    @model_validator(mode="after")
    def _check_bounds(self) -> "LogSnrSchedule":
        if not self.lambda_min < self.lambda_max:
            raise ValueError(f"lambda_min ({self.lambda_min}) must be below lambda_max ({self.lambda_max})")
        return self

    @property
    def t_lo(self) -> float:
        return _raw_time_of_lambda(self.lambda_max)

    @property
    def t_hi(self) -> float:
        return _raw_time_of_lambda(self.lambda_min)

    def raw_time(self, t: float) -> float:
        return self.t_lo + t * (self.t_hi - self.t_lo)

    def t_of_lambda(self, lam: float) -> float:
        """Inverse of λ(t), clipped to [0, 1]."""
        lam = min(max(lam, self.lambda_min), self.lambda_max)
        u = _raw_time_of_lambda(lam)
        return min(max((u - self.t_lo) / (self.t_hi - self.t_lo), 0.0), 1.0)


def schedule_eval(sched: LogSnrSchedule, t: float) -> SnrPoint:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ConfigurationError(f"diffusion time must lie in [0, 1], got {t}")
    u = sched.raw_time(t)
    half_angle = 0.5 * math.pi * u
    alpha = math.cos(half_angle)
    sigma = math.sin(half_angle)
    with np.errstate(divide="ignore"):
        lam = 2.0 * (float(np.log(alpha)) - float(np.log(sigma)))
    sin_full = math.sin(math.pi * u)
    dlam_du = -2.0 * math.pi / sin_full if sin_full > 0 else -math.inf
    return SnrPoint(t=t, lam=lam, alpha=alpha, sigma=sigma, dlambda_dt=dlam_du * (sched.t_hi - sched.t_lo))


class LossWeight(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    bias: float = Field(default=1.0, description="b in sigmoid(λ - b)")
    mode: Literal["sigmoid", "unit"] = "sigmoid"


def _stable_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def loss_weight(w: LossWeight, lam: float) -> float:
    if w.mode == "unit":
        return 1.0
    return _stable_sigmoid(lam - w.bias)


def elbo_factor(point: SnrPoint, w: LossWeight) -> float:
    """-dλ/dt · e^λ · w(λ), the per-time weight on ‖x - x̂‖²."""
    return -point.dlambda_dt * math.exp(point.lam) * loss_weight(w, point.lam)
