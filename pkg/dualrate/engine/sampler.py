"""
Dual-rate ancestral sampling.

The chain walks t = 1, (k-1)/k, ..., 1/k. The encoder refreshes on heavy steps
(step index divisible by k/K) and its features stay in use until the next
refresh. Guidance doubles evaluations only where λ_t lies inside the interval.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from config import Config
from diffusion.process import NoisyState, posterior_params, sample_posterior
from diffusion.schedule import LogSnrSchedule, schedule_eval
from errors import ConfigurationError
from evaluation.metrics import sliced_w2
from models.guidance import guidance_active, guided_predict
from models.predictors import Predictor, as_predictor

logger = logging.getLogger(__name__)


class SampleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(default=8, ge=1, description="Heavy (encoder) evaluations")
    k: int = Field(default=64, ge=1, description="Light (denoiser) steps")
    guidance_w: float = Field(default=0.0, ge=0.0)
    guidance_lo: float = Field(default=1.5, description="Lower log-SNR bound of the guidance interval")
    guidance_hi: float = Field(default=5.0, description="Upper log-SNR bound of the guidance interval")
    noise_interp: float = Field(default=0.2, ge=0.0, le=1.0, description="ν between posterior and forward variance")
    clip: bool = False
    n_samples: int = Field(default=1000, ge=1)
    use_ema: bool = True
    record_states: bool = False

    @model_validator(mode="after")
    def _check_rates(self) -> "SampleConfig":
        if self.k % self.K:
            raise ValueError(f"K={self.K} must divide k={self.k}")
        return self

    @property
    def interval(self) -> Tuple[float, float]:
        return (self.guidance_lo, self.guidance_hi)


@dataclass(frozen=True)
class StepPlan:
    index: int
    t: float
    s: float
    tau: float
    refresh: bool


@dataclass
class TraceStep:
    index: int
    t: float
    tau: float
    refreshed: bool
    guided: bool
    guided_heavy: bool
    z: Optional[np.ndarray] = None
    x_hat: Optional[np.ndarray] = None


@dataclass
class SampleTrace:
    K: int
    k: int
    steps: List[TraceStep] = field(default_factory=list)


class NfeCounts(NamedTuple):
    heavy: int
    light: int
    guided_heavy: int
    guided_light: int


@dataclass
class SampleResult:
    x: np.ndarray
    trace: SampleTrace
    state: Optional[NoisyState] = None


def sampling_plan(K: int, k: int, stop_t: float = 0.0) -> List[StepPlan]:
    """Steps from t=1 down to stop_t on the light grid."""
    if K < 1 or k % K:
        raise ConfigurationError(f"K={K} must be >= 1 and divide k={k}")
    stride = k // K
    n_steps = int(round((1.0 - stop_t) * k))
    if abs(n_steps - (1.0 - stop_t) * k) > 1e-9:
        raise ConfigurationError(f"stop time {stop_t} is not on the light grid of k={k}")
    plan = []
    for i in range(n_steps):
        block_start = i - i % stride
        plan.append(
            StepPlan(
                index=i,
                t=(k - i) / k,
                s=(k - i - 1) / k,
                tau=(k - block_start) / k,
                refresh=i % stride == 0,
            )
        )
    return plan


def run_chain(
    predictor: Predictor,
    state: NoisyState,
    labels: Optional[np.ndarray],
    sched: LogSnrSchedule,
    config: SampleConfig,
    rng: np.random.Generator,
    plan: Sequence[StepPlan],
    final_prediction: bool = True,
) -> SampleResult:
    """Runs the planned steps; the last step yields x̂ when final_prediction."""
    trace = SampleTrace(K=config.K, k=config.k)
    null_labels = None
    if labels is not None:
        null_labels = np.full(labels.shape[0], predictor.n_classes, dtype=np.int64)
    feats_cond = feats_uncond = None
    z_tau = state
    block_guided = False
    x_hat = state.z

    for n, step in enumerate(tqdm(plan, desc="sample", disable=not Config.PROGRESS, leave=False)):
        point_t = schedule_eval(sched, step.t)
        if step.refresh:
            z_tau = state
            feats_cond = predictor.encode(state, labels)
            feats_uncond = None
            block_guided = False
        guided = guidance_active(config.guidance_w, config.interval, point_t.lam, predictor.n_classes, labels)
        guided_heavy = False
        if guided and not block_guided:
            block_guided = guided_heavy = True
            if predictor.has_encoder:
                feats_uncond = predictor.encode(z_tau, null_labels)
        x_hat = guided_predict(
            predictor, state, feats_cond, feats_uncond, labels, config.guidance_w, config.interval, point_t
        )
        if config.clip:
            x_hat = np.clip(x_hat, -1.0, 1.0)
        trace.steps.append(
            TraceStep(
                index=step.index,
                t=step.t,
                tau=step.tau,
                refreshed=step.refresh,
                guided=guided,
                guided_heavy=guided_heavy,
                z=state.z.copy() if config.record_states else None,
                x_hat=x_hat.copy() if config.record_states else None,
            )
        )
        if final_prediction and n == len(plan) - 1 and step.s == 0.0:
            return SampleResult(x=x_hat, trace=trace, state=state)
        point_s = schedule_eval(sched, step.s)
        params = posterior_params(state, x_hat, point_s, point_t, config.noise_interp)
        state = sample_posterior(params, point_s, rng)

    return SampleResult(x=x_hat, trace=trace, state=state)


def ancestral_sample(
    source: Union[Predictor, object],
    labels: Optional[np.ndarray],
    sched: LogSnrSchedule,
    config: SampleConfig,
    rng: np.random.Generator,
) -> SampleResult:
    predictor = as_predictor(source)
    n = config.n_samples if labels is None else int(np.shape(labels)[0])
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
    z1 = NoisyState(z=rng.standard_normal((n, predictor.data_dim)), t=1.0)
    plan = sampling_plan(config.K, config.k)
    logger.debug(f"[SAMPLE] {n} chains, K={config.K} k={config.k} guidance_w={config.guidance_w}")
    return run_chain(predictor, z1, labels, sched, config, rng, plan, final_prediction=True)


def count_nfe(
    source: Union[SampleTrace, SampleConfig],
    sched: Optional[LogSnrSchedule] = None,
    n_classes: int = 0,
    conditional: bool = False,
) -> NfeCounts:
    """Evaluation counts from a trace, or predicted from a config without sampling."""
    if isinstance(source, SampleTrace):
        steps = source.steps
        return NfeCounts(
            heavy=sum(s.refreshed for s in steps),
            light=len(steps),
            guided_heavy=sum(s.guided_heavy for s in steps),
            guided_light=sum(s.guided for s in steps),
        )
    sched = sched or LogSnrSchedule()
    labels = np.zeros(1, dtype=np.int64) if conditional else None
    heavy = light = guided_heavy = guided_light = 0
    block_guided = False
    for step in sampling_plan(source.K, source.k):
        if step.refresh:
            heavy += 1
            block_guided = False
        light += 1
        lam = schedule_eval(sched, step.t).lam
        if guidance_active(source.guidance_w, source.interval, lam, n_classes, labels):
            guided_light += 1
            if not block_guided:
                guided_heavy += 1
                block_guided = True
    return NfeCounts(heavy, light, guided_heavy, guided_light)


def check_feature_staleness(trace: SampleTrace) -> bool:
    """True when every step used features from the closest preceding heavy step."""
    window = 1.0 / trace.K
    for step in trace.steps:
        if step.tau < step.t or step.tau - step.t >= window - 1e-12:
            return False
    return True


def sweep_noise_interp(
    source,
    labels: Optional[np.ndarray],
    sched: LogSnrSchedule,
    config: SampleConfig,
    nus: Sequence[float],
    reference: np.ndarray,
    rng: np.random.Generator,
    n_projections: int = 128,
) -> List[Tuple[float, float]]:
    """Sliced-W2 against reference samples for each sampling-noise setting."""
    results = []
    for nu in nus:
        run_cfg = config.model_copy(update={"noise_interp": float(nu)})
        out = ancestral_sample(source, labels, sched, run_cfg, rng)
        w2 = sliced_w2(out.x, reference, n_projections, rng)
        logger.info(f"[SAMPLE] noise_interp={nu:.3f} sliced_w2={w2:.4f}")
        results.append((float(nu), w2))
    return results
