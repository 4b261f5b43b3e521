"""
Dual-rate diffusion training: joint (τ, t) sampling, bridge construction and
the weighted x-space regression loss, with Adam, EMA and periodic snapshots.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from config import Config
from data.batch import DataBatch, drop_class_labels
from data.patterns import augment_translate
from data.sources import DataSource
from diffusion.process import sample_bridge, sample_marginal
from diffusion.schedule import LogSnrSchedule, LossWeight, elbo_factor, schedule_eval
from diffusion.timesteps import sample_training_times
from errors import NumericalDivergenceError, TimeOrderingError
from evaluation.metrics import MetricsRecord, oracle_mse
from models.dual_rate import DualRateModel, denoise, encode_context, model_backward
from nnkit.mlp import ParamVector
from nnkit.optim import EmaState, OptimState, adam_step, ema_update
from services.checkpoint import (
    Checkpoint,
    pack_ema,
    pack_model,
    pack_optimizer,
    pack_run,
    restore_rng,
    unpack_ema,
    unpack_model,
    unpack_optimizer,
    unpack_run,
)

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    K: int = Field(default=8, ge=1)
    k: int = Field(default=64, ge=1)
    batch_size: int = Field(default=256, ge=1)
    n_steps: int = Field(default=2000, ge=0)
    weight: LossWeight = Field(default_factory=LossWeight)
    lr: float = Field(default=1e-3, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-12
    warmup_steps: int = Field(default=100, ge=0)
    clip_norm: float = Field(default=1.0, gt=0.0)
    ema_decay: float = Field(default=0.999, ge=0.0, le=1.0)
    embed_drop_p: float = Field(default=0.0, ge=0.0, le=1.0)
    class_drop_p: float = Field(default=0.0, ge=0.0, le=1.0)
    translate_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    max_shift: int = Field(default=1, ge=0)
    snapshot_every: int = Field(default=500, ge=1)
    eval_points: int = Field(default=256, ge=1, description="Samples per log-SNR point in snapshot oracle MSE")
    divergence_threshold: float = Field(default=1e6, gt=0.0, description="Largest unweighted squared error per item")

    @model_validator(mode="after")
    def _check_rates(self) -> "TrainConfig":
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


@dataclass
class TrainSnapshot:
    record: MetricsRecord
    wall_ms: float


@dataclass
class TrainState:
    model: DualRateModel
    opt: OptimState
    ema: EmaState
    step: int = 0
    snapshots: List[TrainSnapshot] = field(default_factory=list)

    def ema_model(self) -> DualRateModel:
        return self.model.with_params(self.ema.shadow)


@dataclass
class LossOutput:
    loss: float
    mse: float
    grads: ParamVector
    x_hat: np.ndarray


def init_train_state(model: DualRateModel, config: TrainConfig) -> TrainState:
    model = replace(model, embed_drop_p=config.embed_drop_p)
    return TrainState(
        model=model,
        opt=config.optimizer(len(model.params)),
        ema=EmaState.of(model.params, config.ema_decay),
    )


def diffusion_loss(
    model: DualRateModel,
    batch: DataBatch,
    tau: float,
    t: float,
    sched: LogSnrSchedule,
    weight: LossWeight,
    rng: np.random.Generator,
    training: bool = True,
) -> LossOutput:
    """factor · mean_b ‖x − g(z_t, t, E(z_τ, τ))‖² with factor = −dλ/dt·e^λ·w(λ)."""
    if t > tau:
        raise TimeOrderingError(f"training needs t < tau, got t={t} tau={tau}")
    point_t = schedule_eval(sched, t)
    point_tau = schedule_eval(sched, tau)
    x = batch.x
    labels = batch.conditioning_labels() if model.n_classes > 0 else None

    z_tau = sample_marginal(x, point_tau, rng)
    z_t = sample_bridge(z_tau, x, point_t, point_tau, rng)
    features = None
    if model.has_encoder:
        drop = model.embed_drop_p if training else 0.0
        features = encode_context(model, z_tau, labels, drop_features=drop, rng=rng, training=training)
    x_hat, tape = denoise(model, z_t, features, labels, point_t, training=training, rng=rng)

    err = x - x_hat
    factor = elbo_factor(point_t, weight)
    mse = float(np.mean(np.sum(err ** 2, axis=1)))
    loss = factor * mse
    if not math.isfinite(loss):
        raise NumericalDivergenceError(f"non-finite loss at t={t:.6f} tau={tau:.6f} (factor={factor:.3e})")
    d_x_hat = -2.0 * factor * err / x.shape[0]
    return LossOutput(loss=loss, mse=mse, grads=model_backward(model, tape, d_x_hat), x_hat=x_hat)


def draw_training_batch(source: DataSource, config: TrainConfig, rng: np.random.Generator) -> DataBatch:
    batch = source.sample(config.batch_size, rng)
    if config.translate_prob > 0.0:
        batch = augment_translate(batch, config.translate_prob, config.max_shift, rng)
    if config.class_drop_p > 0.0 and batch.labels is not None:
        batch = drop_class_labels(batch, config.class_drop_p, rng)
    return batch


def freeze_encoder_grads(model: DualRateModel, grads: ParamVector) -> ParamVector:
    if model.has_encoder:
        grads.values[model.params.span("encoder")] = 0.0
    return grads


def train_step(
    state: TrainState,
    source: DataSource,
    config: TrainConfig,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
    freeze_encoder: bool = False,
) -> Tuple[TrainState, float]:
    batch = draw_training_batch(source, config, rng)
    tau, t = sample_training_times(config.K, rng)
    try:
        out = diffusion_loss(state.model, batch, tau, t, sched, config.weight, rng)
        # the weighted loss scales with elbo_factor, which is ~1e8 near t = 0
        if out.mse > config.divergence_threshold:
            raise NumericalDivergenceError(f"squared error {out.mse:.3e} exceeds {config.divergence_threshold:.1e}")
        grads = freeze_encoder_grads(state.model, out.grads) if freeze_encoder else out.grads
        params, opt = adam_step(state.model.params, grads, state.opt)
    except NumericalDivergenceError as exc:
        raise NumericalDivergenceError(f"step {state.step + 1}: {exc}", state=state) from exc
    model = state.model.with_params(params)
    new_state = replace(state, model=model, opt=opt, ema=ema_update(state.ema, params), step=state.step + 1)
    return new_state, out.loss


def snapshot_metrics(
    state: TrainState,
    source: DataSource,
    config: TrainConfig,
    sched: LogSnrSchedule,
    loss: float,
    eval_seed: int,
) -> MetricsRecord:
    """Evaluates the EMA model on an rng derived from (seed, step), leaving the training stream untouched."""
    mse = None
    if source.gmm is not None:
        eval_rng = np.random.default_rng([eval_seed, state.step])
        report = oracle_mse(state.ema_model(), source.gmm, sched, eval_rng, n_per_point=config.eval_points, K=config.K)
        mse = report.mean_in()
    return MetricsRecord(step=state.step, loss=loss, oracle_mse=mse)


def train_loop(
    config: TrainConfig,
    source: DataSource,
    sched: LogSnrSchedule,
    rng: np.random.Generator,
    state: TrainState,
    freeze_encoder: bool = False,
    eval_seed: int = 0,
) -> TrainState:
    """Runs from state.step up to config.n_steps; snapshots every snapshot_every steps."""
    if state.step >= config.n_steps:
        return state
    logger.info(
        f"[TRAIN] steps {state.step}->{config.n_steps}, K={config.K} batch={config.batch_size} "
        f"params={len(state.model.params)} freeze_encoder={freeze_encoder}"
    )
    state = replace(state, snapshots=list(state.snapshots))
    window: List[float] = []
    started = time.perf_counter()
    for _ in tqdm(range(state.step, config.n_steps), desc="train", disable=not Config.PROGRESS):
        state, loss = train_step(state, source, config, sched, rng, freeze_encoder=freeze_encoder)
        window.append(loss)
        if state.step % config.snapshot_every == 0:
            record = snapshot_metrics(state, source, config, sched, float(np.mean(window)), eval_seed)
            wall_ms = (time.perf_counter() - started) * 1000.0
            state.snapshots.append(TrainSnapshot(record=record, wall_ms=wall_ms))
            logger.info(f"[TRAIN] step {state.step} loss={record.loss:.4f} oracle_mse={record.oracle_mse}")
            window = []
    return state


def train_checkpoint(state: TrainState, sched: LogSnrSchedule, rng: Optional[np.random.Generator]) -> Checkpoint:
    ckpt = Checkpoint(meta={"kind": "train"})
    pack_model(ckpt, "model", state.model)
    pack_optimizer(ckpt, "model", state.opt)
    pack_ema(ckpt, "model", state.ema)
    pack_run(ckpt, sched, rng, state.step)
    ckpt.meta["snapshots"] = [
        {"record": snap.record.model_dump(), "wall_ms": snap.wall_ms} for snap in state.snapshots
    ]
    return ckpt


def restore_train_state(ckpt: Checkpoint) -> Tuple[TrainState, LogSnrSchedule, Optional[np.random.Generator]]:
    """Inverse of train_checkpoint; the rng resumes at the saved cursor."""
    sched, rng_state, step = unpack_run(ckpt)
    state = TrainState(
        model=unpack_model(ckpt, "model"),
        opt=unpack_optimizer(ckpt, "model"),
        ema=unpack_ema(ckpt, "model"),
        step=step,
        snapshots=[
            TrainSnapshot(record=MetricsRecord(**snap["record"]), wall_ms=snap["wall_ms"])
            for snap in ckpt.meta.get("snapshots", [])
        ],
    )
    return state, sched, restore_rng(rng_state) if rng_state else None
