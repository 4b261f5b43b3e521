"""
DistillNode distills a standard teacher checkpoint into a dual-rate student.
"""

from __future__ import annotations

import logging

from engine.distiller import DistillState, distill_checkpoint, distill_loop
from errors import ConfigurationError, NumericalDivergenceError
from evaluation.metrics import oracle_mse
from schemas.run_config import RunConfig
from services.checkpoint import save_checkpoint
from services.run_logging import write_csv
from .sample_node import load_model
from .train_node import build_model
from ..state import RunState

logger = logging.getLogger(__name__)

DISTILL_COLUMNS = ("step", "aux_loss", "student_loss", "w2", "wall_ms")


def student_run_config(config: RunConfig) -> RunConfig:
    """The student is always a dual-rate model built from the model section."""
    return config.model_copy(update={"model": config.model.model_copy(update={"kind": "dual_rate"})})


class DistillNode:
    def __call__(self, state: RunState) -> RunState:
        config = state.config
        if not config.distill.teacher:
            raise ConfigurationError("distill.teacher: a teacher checkpoint is required")
        teacher = load_model(config.distill.teacher, use_ema=True)
        if teacher.has_encoder:
            raise ConfigurationError("distill.teacher: the teacher must be a standard (encoder-free) model")

        limit = config.distill.teacher_max_oracle_mse
        if limit is not None and state.source.gmm is not None:
            quality = oracle_mse(teacher, state.source.gmm, config.schedule, state.rng).mean_in()
            if quality > limit:
                raise ConfigurationError(
                    f"distill.teacher_max_oracle_mse: teacher oracle MSE {quality:.4f} exceeds {limit}"
                )

        student = build_model(student_run_config(config), state.source, state.rng)
        distill_cfg = config.distill_config()
        try:
            result = distill_loop(distill_cfg, teacher, student, state.source, config.schedule, state.rng,
                                  eval_seed=config.seed)
        except NumericalDivergenceError as exc:
            if isinstance(exc.state, DistillState):
                path = save_checkpoint(state.out_path("diverged.ckpt"),
                                       distill_checkpoint(exc.state, config.schedule, None))
                state.record_output("diverged", path)
                logger.error(f"[DISTILL] diverged; state dumped to {path}")
            raise

        state.distill_state = result
        state.model = result.student_ema_model()
        ckpt = save_checkpoint(state.out_path("student.ckpt"), distill_checkpoint(result, config.schedule, state.rng))
        rows = [vars(record) for record in result.records]
        csv_path = write_csv(state.out_path("distill_metrics.csv"), DISTILL_COLUMNS, rows)
        state.record_output("checkpoint", ckpt)
        state.record_output("metrics", csv_path)
        state.metrics.update({
            "aux_updates": result.aux_updates,
            "student_updates": result.student_updates,
            "w2": result.records[-1].w2,
        })
        state.log_event("distill_node", {"variant": distill_cfg.variant, "steps": result.step})
        return state
