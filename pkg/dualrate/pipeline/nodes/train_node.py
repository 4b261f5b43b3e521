"""
TrainNode fits a dual-rate (or standard) model and persists it.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from data.sources import DataSource
from engine.trainer import (
    TrainState,
    init_train_state,
    restore_train_state,
    train_checkpoint,
    train_loop,
)
from errors import ConfigurationError, NumericalDivergenceError
from models.dual_rate import DualRateModel, build_dual_rate_model, build_standard_model
from schemas.run_config import RunConfig
from services.checkpoint import load_checkpoint, save_checkpoint
from services.run_logging import write_csv
from ..state import RunState

logger = logging.getLogger(__name__)

TRAIN_METRIC_COLUMNS = ("step", "loss", "oracle_mse", "wall_ms")


def build_model(config: RunConfig, source: DataSource, rng: np.random.Generator) -> DualRateModel:
    m = config.model
    n_classes = source.n_classes if m.class_conditional else 0
    common = dict(
        param_mode=m.param_mode,
        n_classes=n_classes,
        dropout=m.dropout,
        time_embed_dim=m.time_embed_dim,
        activation=m.activation,
        film_enabled=m.film_enabled,
    )
    if m.kind == "standard":
        return build_standard_model(source.dim, m.denoiser_hidden, rng, **common)
    return build_dual_rate_model(
        source.dim,
        m.encoder_hidden,
        m.denoiser_hidden,
        rng,
        multi_level=m.multi_level,
        embed_drop_p=m.embed_drop_p,
        **common,
    )


def fit_model(config: RunConfig, source: DataSource, rng: np.random.Generator,
              resumed: Optional[TrainState] = None) -> TrainState:
    """Builds (or resumes) and trains; divergence propagates with the failing state attached."""
    train_cfg = config.train_config()
    if resumed is None:
        state = init_train_state(build_model(config, source, rng), train_cfg)
    else:
        state = resumed
    return train_loop(train_cfg, source, config.schedule, rng, state, eval_seed=config.seed)


def train_metric_rows(state: TrainState):
    for snap in state.snapshots:
        yield {**snap.record.model_dump(), "wall_ms": snap.wall_ms}


class TrainNode:
    def __call__(self, state: RunState) -> RunState:
        config = state.config
        resumed = None
        if config.train.resume_from:
            resumed, sched, rng = restore_train_state(load_checkpoint(config.train.resume_from))
            if sched != config.schedule:
                raise ConfigurationError("train.resume_from: checkpoint schedule differs from the run's schedule")
            if rng is not None:
                state.rng = rng
            logger.info(f"[TRAIN] resuming from {config.train.resume_from} at step {resumed.step}")

        try:
            train_state = fit_model(config, state.source, state.rng, resumed)
        except NumericalDivergenceError as exc:
            if isinstance(exc.state, TrainState):
                path = save_checkpoint(state.out_path("diverged.ckpt"), train_checkpoint(exc.state, config.schedule, None))
                state.record_output("diverged", path)
                logger.error(f"[TRAIN] diverged; state dumped to {path}")
            raise

        state.train_state = train_state
        state.model = train_state.ema_model()
        ckpt_path = save_checkpoint(state.out_path("model.ckpt"), train_checkpoint(train_state, config.schedule, state.rng))
        csv_path = write_csv(state.out_path("metrics.csv"), TRAIN_METRIC_COLUMNS, train_metric_rows(train_state))
        state.record_output("checkpoint", ckpt_path)
        state.record_output("metrics", csv_path)
        last = train_state.snapshots[-1].record if train_state.snapshots else None
        state.metrics.update({"train_step": train_state.step,
                              "train_loss": last.loss if last else None,
                              "oracle_mse": last.oracle_mse if last else None})
        state.log_event("train_node", {"step": train_state.step, "snapshots": len(train_state.snapshots)})
        return state
