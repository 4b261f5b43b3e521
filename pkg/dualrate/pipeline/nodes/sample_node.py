"""
SampleNode draws samples from a trained model (or the mixture oracle).
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from engine.sampler import ancestral_sample, count_nfe
from engine.trainer import restore_train_state
from errors import ConfigurationError
from models.dual_rate import DualRateModel
from models.predictors import OraclePredictor
from services.checkpoint import load_checkpoint
from services.run_logging import write_array_csv, write_csv
from ..state import RunState

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("index", "t", "tau", "refreshed", "guided", "guided_heavy")


def load_model(path: str | Path, use_ema: bool = True) -> DualRateModel:
    train_state, _, _ = restore_train_state(load_checkpoint(path))
    return train_state.ema_model() if use_ema else train_state.model


def resolve_checkpoint(state: RunState, explicit: Optional[str]) -> Path:
    path = Path(explicit) if explicit else Path(state.output_dir) / "model.ckpt"
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} does not exist (set sampler.checkpoint or eval.checkpoint)")
    return path


def choose_labels(n_classes: int, guidance_w: float, n: int, rng: np.random.Generator) -> Optional[np.ndarray]:
    """Class labels for conditional sampling; None samples unconditionally."""
    if n_classes == 0 or guidance_w <= 0.0:
        return None
    return rng.integers(0, n_classes, size=n)


class SampleNode:
    def __call__(self, state: RunState) -> RunState:
        config = state.config
        sample_cfg = config.sample_config()
        if config.sampler.oracle:
            if state.source.gmm is None:
                raise ConfigurationError("sampler.oracle: the analytic denoiser needs data.kind = gmm")
            predictor = OraclePredictor(state.source.gmm)
        else:
            if state.model is None:
                state.model = load_model(resolve_checkpoint(state, config.sampler.checkpoint), sample_cfg.use_ema)
            predictor = state.model

        n_classes = predictor.n_classes
        labels = choose_labels(n_classes, sample_cfg.guidance_w, sample_cfg.n_samples, state.rng)
        result = ancestral_sample(predictor, labels, config.schedule, sample_cfg, state.rng)
        state.samples, state.sample_labels, state.trace = result.x, labels, result.trace

        counts = count_nfe(result.trace)
        state.metrics.update({"nfe": counts._asdict()})
        samples_path = write_array_csv(state.out_path("samples.csv"), result.x, labels=labels)
        state.record_output("samples", samples_path)
        if config.sampler.trace_out:
            rows = [
                {col: getattr(step, col) for col in TRACE_COLUMNS}
                for step in result.trace.steps
            ]
            trace_path = write_csv(state.out_path(config.sampler.trace_out), TRACE_COLUMNS, rows)
            state.record_output("trace", trace_path)
        logger.info(f"[SAMPLE] wrote {len(result.x)} samples, nfe={tuple(counts)}")
        state.log_event("sample_node", {"n": len(result.x), "nfe": list(counts)})
        return state
