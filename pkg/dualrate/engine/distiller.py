"""
Dual-rate moment matching distillation.

A frozen standard teacher g_θ is distilled into a dual-rate student (E_H, g_η)
by alternating two updates on the student's own rollouts:

- even steps fit the auxiliary denoiser g_φ to student samples x̃ while
  regularising it toward the teacher;
- odd steps move the student along x̃ᵀ·sg(g_φ − g_θ).

Gradients reach the student only through the final light evaluation
x̃ = g_η(z_t, t, e_τ) and through e_τ = E_H(z_τ, τ); rollout intermediates
are plain arrays.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from config import Config
from data.sources import DataSource
from diffusion.process import NoisyState, posterior_params, sample_marginal, sample_posterior
from diffusion.schedule import LogSnrSchedule, LossWeight, SnrPoint, elbo_factor, schedule_eval
from diffusion.timesteps import sample_distill_times
from engine.sampler import SampleConfig, ancestral_sample, run_chain, sampling_plan
from engine.trainer import TrainConfig, init_train_state, train_loop
from errors import ConfigurationError, NumericalDivergenceError, SequencingError
from evaluation.metrics import sliced_w2
from models.dual_rate import (
    ContextFeatures,
    DenoiseTape,
    DualRateModel,
    copy_into_encoder,
    denoise,
    encode_context,
    model_backward,
)
from models.predictors import DualRatePredictor
from nnkit.mlp import ParamVector
from nnkit.optim import EmaState, OptimState, adam_step, ema_update
from services.checkpoint import Checkpoint, pack_ema, pack_model, pack_optimizer, pack_run

logger = logging.getLogger(__name__)

Variant = Literal["standard", "rollout"]
InitMode = Literal["pretrained_dual_rate", "frozen_teacher_encoder"]


class DistillConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(default=2, ge=1, description="Student heavy steps")
    k: int = Field(default=8, ge=1, description="Student light steps")
    variant: Variant = "standard"
    init: InitMode = "frozen_teacher_encoder"
    n_steps: int = Field(default=1000, ge=0, description="Alternating updates; half go to each model")
    batch_size: int = Field(default=256, ge=1)
    lr: float = Field(default=1e-4, gt=0.0)
    beta1: float = 0.0
    beta2: float = 0.99
    epsilon: float = 1e-12
    warmup_steps: int = Field(default=100, ge=0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    ema_decay: float = Field(default=0.999, ge=0.0, le=1.0)
    weight: LossWeight = Field(default_factory=LossWeight)
    pretrain_steps: int = Field(default=500, ge=0, description="Student pretraining budget before distillation")
    pretrain_lr: float = Field(default=1e-3, gt=0.0)
    sample_term_weight: float = Field(default=1.0, ge=0.0, description="Weight of the x̃ term in the auxiliary loss")
    snapshot_every: int = Field(default=100, ge=1)
    eval_samples: int = Field(default=2000, ge=1)
    eval_projections: int = Field(default=128, ge=1)
    eval_noise_interp: float = Field(default=0.2, ge=0.0, le=1.0)
    divergence_threshold: float = Field(default=1e9, gt=0.0)

    @model_validator(mode="after")
    def _check_rates(self) -> "DistillConfig":
        if self.k % self.K:
            raise ValueError(f"K={self.K} must divide k={self.k}")
        return self

    def optimizer(self, n_params: int) -> OptimState:
        return OptimState.fresh(
            n_params,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            warmup_steps=self.warmup_steps,
            clip_norm=self.clip_norm,
        )

    def pretrain_config(self) -> TrainConfig:
        return TrainConfig(
            K=self.K,
            k=self.k,
            batch_size=self.batch_size,
            n_steps=self.pretrain_steps,
            weight=self.weight,
            lr=self.pretrain_lr,
            snapshot_every=max(self.pretrain_steps, 1),
        )


@dataclass
class DistillRecord:
    step: int
    aux_loss: Optional[float]
    student_loss: Optional[float]
    w2: Optional[float]
    wall_ms: float = 0.0


@dataclass
class DistillState:
    teacher: DualRateModel
    student: DualRateModel
    aux: DualRateModel
    student_opt: OptimState
    aux_opt: OptimState
    student_ema: EmaState
    step: int = 0
    aux_updates: int = 0
    student_updates: int = 0
    records: List[DistillRecord] = field(default_factory=list)

    def student_ema_model(self) -> DualRateModel:
        return self.student.with_params(self.student_ema.shadow)


@dataclass
class LiveSample:
    """x̃ together with the tape that links it back to η and H."""

    x_tilde: np.ndarray
    tape: DenoiseTape


@dataclass
class RolloutBatch:
    tau: float
    t: float
    s: float
    z_tau: NoisyState
    z_t: NoisyState
    z_s: NoisyState
    point_s: SnrPoint
    live: LiveSample


@dataclass
class StepGradients:
    """Gradient applied to each model in one step; None for the model the step holds fixed."""

    student: Optional[ParamVector]
    aux: Optional[ParamVector]


def init_distill_state(config: DistillConfig, teacher: DualRateModel, student: DualRateModel) -> DistillState:
    if teacher.has_encoder:
        raise ConfigurationError("the distillation teacher must be a standard denoiser")
    if not student.has_encoder:
        raise ConfigurationError("the distillation student must be a dual-rate model")
    aux = teacher.with_params(teacher.params.values.copy())
    return DistillState(
        teacher=teacher,
        student=replace(student, embed_drop_p=0.0, dropout=0.0),
        aux=aux,
        student_opt=config.optimizer(len(student.params)),
        aux_opt=config.optimizer(len(aux.params)),
        student_ema=EmaState.of(student.params, config.ema_decay),
    )


def rollout_light(
    student: DualRateModel,
    z_tau: NoisyState,
    features: ContextFeatures,
    target_t: float,
    k: int,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
) -> NoisyState:
    """Light generative steps from τ down to target_t holding e_τ fixed (ν = 0)."""
    n_steps = (z_tau.t - target_t) * k
    if n_steps < -1e-9 or abs(n_steps - round(n_steps)) > 1e-9:
        raise ConfigurationError(f"target t={target_t} is not on the light grid below tau={z_tau.t} (k={k})")
    state = z_tau
    start = int(round(z_tau.t * k))
    for idx in range(start, start - int(round(n_steps)), -1):
        point_t = schedule_eval(sched, idx / k)
        point_s = schedule_eval(sched, (idx - 1) / k)
        x_hat, _ = denoise(student, state, features, None, point_t)
        state = sample_posterior(posterior_params(state, x_hat, point_s, point_t), point_s, rng)
    return state


def full_rollout(
    student: DualRateModel,
    tau: float,
    K: int,
    k: int,
    n: int,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
) -> NoisyState:
    """Student ancestral chain from pure noise down to τ; needs no data."""
    z1 = NoisyState(z=rng.standard_normal((n, student.data_dim)), t=1.0)
    plan = sampling_plan(K, k, stop_t=tau)
    if not plan:
        return z1
    run_cfg = SampleConfig(K=K, k=k, noise_interp=0.0, n_samples=n)
    out = run_chain(DualRatePredictor(student), z1, None, sched, run_cfg, rng, plan, final_prediction=False)
    return NoisyState(z=out.state.z, t=tau)


def draw_rollout_batch(
    state: DistillState,
    config: DistillConfig,
    source: DataSource,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
) -> RolloutBatch:
    tau, t, s = sample_distill_times(config.K, config.k, rng)
    point_tau = schedule_eval(sched, tau)
    if config.variant == "rollout":
        z_tau = full_rollout(state.student, tau, config.K, config.k, config.batch_size, sched, rng)
    else:
        z_tau = sample_marginal(source.sample(config.batch_size, rng).x, point_tau, rng)
    features = encode_context(state.student, z_tau, None)
    z_t = rollout_light(state.student, z_tau, features, t, config.k, sched, rng)
    point_t = schedule_eval(sched, t)
    x_tilde, tape = denoise(state.student, z_t, features, None, point_t)
    point_s = schedule_eval(sched, s)
    z_s = sample_posterior(posterior_params(z_t, x_tilde, point_s, point_t), point_s, rng)
    return RolloutBatch(
        tau=tau, t=t, s=s, z_tau=z_tau, z_t=z_t, z_s=z_s, point_s=point_s,
        live=LiveSample(x_tilde=x_tilde, tape=tape),
    )


def _check_finite(loss: float, what: str, state: DistillState) -> None:
    if not math.isfinite(loss):
        raise NumericalDivergenceError(f"non-finite {what} at distillation step {state.step}", state=state)


def aux_step(
    state: DistillState,
    z_s: NoisyState,
    point_s: SnrPoint,
    x_tilde: np.ndarray,
    weight: LossWeight,
    sample_term_weight: float = 1.0,
) -> Tuple[DistillState, float, StepGradients]:
    """factor·(‖x̃ − g_φ‖² + ‖g_θ − g_φ‖²), one Adam step on φ."""
    if state.step % 2:
        raise SequencingError(f"auxiliary update called on odd step {state.step}")
    g_phi, tape = denoise(state.aux, z_s, None, None, point_s)
    g_theta, _ = denoise(state.teacher, z_s, None, None, point_s)
    factor = elbo_factor(point_s, weight)
    sample_gap = x_tilde - g_phi
    teacher_gap = g_theta - g_phi
    per_item = sample_term_weight * np.sum(sample_gap ** 2, axis=1) + np.sum(teacher_gap ** 2, axis=1)
    loss = factor * float(np.mean(per_item))
    _check_finite(loss, "auxiliary loss", state)
    batch = z_s.z.shape[0]
    d_phi = factor * (-2.0 * sample_term_weight * sample_gap - 2.0 * teacher_gap) / batch
    grads = model_backward(state.aux, tape, d_phi)
    params, opt = adam_step(state.aux.params, grads, state.aux_opt)
    new_state = replace(
        state,
        aux=state.aux.with_params(params),
        aux_opt=opt,
        step=state.step + 1,
        aux_updates=state.aux_updates + 1,
    )
    return new_state, loss, StepGradients(student=None, aux=grads)


def student_step(
    state: DistillState,
    z_s: NoisyState,
    point_s: SnrPoint,
    live: LiveSample,
    weight: LossWeight,
) -> Tuple[DistillState, float, StepGradients]:
    """factor·x̃ᵀ·sg(g_φ − g_θ), one Adam step on the student encoder and denoiser."""
    if state.step % 2 == 0:
        raise SequencingError(f"student update called on even step {state.step}")
    g_phi, _ = denoise(state.aux, z_s, None, None, point_s)
    g_theta, _ = denoise(state.teacher, z_s, None, None, point_s)
    gap = g_phi - g_theta
    factor = elbo_factor(point_s, weight)
    loss = factor * float(np.mean(np.sum(live.x_tilde * gap, axis=1)))
    _check_finite(loss, "student loss", state)
    d_x_tilde = factor * gap / live.x_tilde.shape[0]
    grads = model_backward(state.student, live.tape, d_x_tilde)
    params, opt = adam_step(state.student.params, grads, state.student_opt)
    new_state = replace(
        state,
        student=state.student.with_params(params),
        student_opt=opt,
        student_ema=ema_update(state.student_ema, params),
        step=state.step + 1,
        student_updates=state.student_updates + 1,
    )
    return new_state, loss, StepGradients(student=grads, aux=None)


def distill_step(
    state: DistillState,
    config: DistillConfig,
    source: DataSource,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
) -> Tuple[DistillState, str, float]:
    batch = draw_rollout_batch(state, config, source, sched, rng)
    if state.step % 2 == 0:
        state, loss, _ = aux_step(state, batch.z_s, batch.point_s, batch.live.x_tilde, config.weight,
                                  config.sample_term_weight)
        kind = "aux"
    else:
        state, loss, _ = student_step(state, batch.z_s, batch.point_s, batch.live, config.weight)
        kind = "student"
    if abs(loss) > config.divergence_threshold:
        raise NumericalDivergenceError(f"{kind} loss {loss:.3e} exceeds {config.divergence_threshold:.1e}", state=state)
    return state, kind, loss


def initialize_student(
    config: DistillConfig,
    teacher: DualRateModel,
    student: DualRateModel,
    source: DataSource,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
) -> DualRateModel:
    """Pretrains the student per config.init and returns its EMA weights."""
    freeze = config.init == "frozen_teacher_encoder"
    if freeze:
        student = copy_into_encoder(student, teacher)
    if config.pretrain_steps == 0:
        return student
    pre_cfg = config.pretrain_config()
    logger.info(f"[DISTILL] pretraining student for {pre_cfg.n_steps} steps (init={config.init})")
    state = train_loop(pre_cfg, source, sched, rng, init_train_state(student, pre_cfg), freeze_encoder=freeze)
    return state.ema_model()


def student_w2(
    state: DistillState,
    config: DistillConfig,
    source: DataSource,
    sched: LogSnrSchedule,
    eval_seed: int,
) -> float:
    eval_rng = np.random.default_rng([eval_seed, state.step, 1])
    run_cfg = SampleConfig(
        K=config.K,
        k=config.k,
        noise_interp=config.eval_noise_interp,
        n_samples=config.eval_samples,
        clip=source.kind == "grid",
    )
    generated = ancestral_sample(state.student_ema_model(), None, sched, run_cfg, eval_rng).x
    reference = source.sample(config.eval_samples, eval_rng).x
    return sliced_w2(generated, reference, config.eval_projections, eval_rng)


def distill_loop(
    config: DistillConfig,
    teacher: DualRateModel,
    student: DualRateModel,
    source: DataSource,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
    eval_seed: int = 0,
) -> DistillState:
    teacher_before = teacher.params.values.copy()
    student = initialize_student(config, teacher, student, source, sched, rng)
    state = init_distill_state(config, teacher, student)
    started = time.perf_counter()
    state.records.append(DistillRecord(step=0, aux_loss=None, student_loss=None,
                                       w2=student_w2(state, config, source, sched, eval_seed)))
    logger.info(
        f"[DISTILL] variant={config.variant} K={config.K} k={config.k} steps={config.n_steps} "
        f"initial w2={state.records[0].w2:.4f}"
    )
    losses = {"aux": [], "student": []}
    for _ in tqdm(range(config.n_steps), desc="distill", disable=not Config.PROGRESS):
        state, kind, loss = distill_step(state, config, source, sched, rng)
        losses[kind].append(loss)
        if state.step % config.snapshot_every == 0 or state.step == config.n_steps:
            record = DistillRecord(
                step=state.step,
                aux_loss=float(np.mean(losses["aux"])) if losses["aux"] else None,
                student_loss=float(np.mean(losses["student"])) if losses["student"] else None,
                w2=student_w2(state, config, source, sched, eval_seed),
                wall_ms=(time.perf_counter() - started) * 1000.0,
            )
            state.records.append(record)
            logger.info(f"[DISTILL] step {record.step} aux={record.aux_loss} student={record.student_loss} w2={record.w2:.4f}")
            losses = {"aux": [], "student": []}
    if not np.array_equal(teacher_before, teacher.params.values):
        raise SequencingError("teacher parameters changed during distillation")
    return state


def distill_checkpoint(state: DistillState, sched: LogSnrSchedule, rng: Optional[np.random.Generator]) -> Checkpoint:
    """The student is stored under "model" so it loads like any trained model."""
    ckpt = Checkpoint(meta={"kind": "distill", "aux_updates": state.aux_updates,
                            "student_updates": state.student_updates})
    pack_model(ckpt, "model", state.student)
    pack_optimizer(ckpt, "model", state.student_opt)
    pack_ema(ckpt, "model", state.student_ema)
    pack_model(ckpt, "aux", state.aux)
    pack_optimizer(ckpt, "aux", state.aux_opt)
    pack_model(ckpt, "teacher", state.teacher)
    pack_run(ckpt, sched, rng, state.step)
    return ckpt
