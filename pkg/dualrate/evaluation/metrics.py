"""
Sample-quality and denoiser-quality metrics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from data.gmm import GmmSpec, gmm_sample
from diffusion.process import sample_bridge, sample_marginal
from diffusion.schedule import LogSnrSchedule, schedule_eval
from errors import EvaluationError
from models.oracle import oracle_denoiser
from models.predictors import as_predictor

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(np.linspace(-8.0, 8.0, 17))
SUMMARY_RANGE = (-4.0, 4.0)


class MetricsRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int
    loss: Optional[float] = None
    oracle_mse: Optional[float] = None
    sliced_w2: Optional[float] = None
    elbo: Optional[float] = None
    cost_units: Optional[float] = None

    @field_validator("loss", "oracle_mse", "sliced_w2", "elbo", "cost_units")
    @classmethod
    def _finite(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not math.isfinite(value):
            raise ValueError(f"metric must be finite, got {value}")
        return value


def _projected_w2_sq(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Squared 1-D W2 per column between sorted empirical samples."""
    n, m = pa.shape[0], pb.shape[0]
    if n == m:
        return np.mean((pa - pb) ** 2, axis=0)
    # quantile functions are step functions; integrate over the merged breakpoints
    grid = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], grid]))
    mids = grid - 0.5 * widths
    ia = np.minimum((mids * n).astype(np.int64), n - 1)
    ib = np.minimum((mids * m).astype(np.int64), m - 1)
    return widths @ (pa[ia] - pb[ib]) ** 2


def sliced_w2(a: np.ndarray, b: np.ndarray, n_projections: int, rng: np.random.Generator) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EvaluationError("sliced_w2 needs non-empty sample batches")
    if a.shape[1] != b.shape[1]:
        raise EvaluationError(f"sample dims differ: {a.shape[1]} vs {b.shape[1]}")
    dirs = rng.standard_normal((a.shape[1], n_projections))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    pa = np.sort(a @ dirs, axis=0)
    pb = np.sort(b @ dirs, axis=0)
    return float(math.sqrt(max(float(np.mean(_projected_w2_sq(pa, pb))), 0.0)))


def heavy_time_for(t: float, K: int) -> float:
    """Nearest heavy-grid time at or above t."""
    idx = max(math.ceil(t * K - 1e-12), 1)
    return min(idx, K) / K


@dataclass
class OracleMseReport:
    lambdas: List[float]
    mse: List[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.mse))

    def mean_in(self, lo: float = SUMMARY_RANGE[0], hi: float = SUMMARY_RANGE[1]) -> float:
        picked = [m for lam, m in zip(self.lambdas, self.mse) if lo <= lam <= hi]
        if not picked:
            raise EvaluationError(f"no grid points inside [{lo}, {hi}]")
        return float(np.mean(picked))


def oracle_mse(
    source,
    spec: GmmSpec,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    n_per_point: int = 512,
    K: int = 1,
) -> OracleMseReport:
    """Mean ‖prediction − E[x|z_t]‖² per log-SNR, with z_τ at the nearest heavy time."""
    predictor = as_predictor(source)
    lams, errors = [], []
    for lam in lambda_grid:
        t = sched.t_of_lambda(float(lam))
        point_t = schedule_eval(sched, t)
        point_tau = schedule_eval(sched, heavy_time_for(t, K))
        x = gmm_sample(spec, n_per_point, rng).x
        z_tau = sample_marginal(x, point_tau, rng)
        z_t = sample_bridge(z_tau, x, point_t, point_tau, rng)
        features = predictor.encode(z_tau, None)
        pred = predictor.predict(z_t, features, None, point_t)
        target = oracle_denoiser(spec, z_t, point_t)
        lams.append(float(lam))
        errors.append(float(np.mean(np.sum((pred - target) ** 2, axis=1))))
    return OracleMseReport(lambdas=lams, mse=errors)


@dataclass
class ElboEstimate:
    value: float
    stderr: float
    prior_kl: float


def prior_kl(x: np.ndarray, sched: LogSnrSchedule) -> float:
    """KL(q(z_1|x) ‖ N(0, I)) per dimension, averaged over the batch."""
    point = schedule_eval(sched, 1.0)
    var = point.sigma ** 2
    kl = 0.5 * ((point.alpha * x) ** 2 + var - 1.0 - math.log(var))
    return float(np.mean(kl))


def elbo_estimate(
    source,
    x: np.ndarray,
    sched: LogSnrSchedule,
    n_mc: int,
    rng: np.random.Generator,
    K: int = 1,
) -> ElboEstimate:
    """
    Unit-weight diffusion term of the bound in nats per dimension.

    K only decides which heavy time feeds the encoder; t itself is uniform, so
    predictors that ignore the encoder give the same estimate for every K.
    """
    if n_mc < 1:
        raise EvaluationError(f"n_mc must be >= 1, got {n_mc}")
    if K < 1:
        raise EvaluationError(f"K must be >= 1, got {K}")
    predictor = as_predictor(source)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dim = x.shape[1]
    draws = np.empty(n_mc)
    for i in range(n_mc):
        # t ~ u(0, 1); τ is the heavy-grid time whose block contains t
        t = float(rng.random())
        tau = max(heavy_time_for(t, K), t)
        point_t = schedule_eval(sched, t)
        point_tau = schedule_eval(sched, tau)
        z_tau = sample_marginal(x, point_tau, rng)
        z_t = sample_bridge(z_tau, x, point_t, point_tau, rng)
        pred = predictor.predict(z_t, predictor.encode(z_tau, None), None, point_t)
        sq = np.sum((x - pred) ** 2, axis=1)
        if not np.any(sq):
            draws[i] = 0.0
            continue
        factor = -point_t.dlambda_dt * math.exp(point_t.lam)
        draws[i] = 0.5 * factor * float(np.mean(sq)) / dim
    stderr = float(np.std(draws, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return ElboEstimate(value=float(np.mean(draws)), stderr=stderr, prior_kl=prior_kl(x, sched))
