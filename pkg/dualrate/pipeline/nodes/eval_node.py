"""
EvalNode scores a model: sliced W2 against fresh data, oracle MSE per log-SNR,
the diffusion bound and the inference cost.
"""

from __future__ import annotations

import logging

import numpy as np

from engine.sampler import ancestral_sample, count_nfe
from evaluation.cost import inference_cost
from evaluation.metrics import MetricsRecord, elbo_estimate, oracle_mse, sliced_w2
from models.dual_rate import DualRateModel
from schemas.run_config import RunConfig
from data.sources import DataSource
from services.plots import line_svg, scatter_svg
from services.run_logging import write_csv
from .sample_node import choose_labels, load_model, resolve_checkpoint
from ..state import RunState

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ("step", "loss", "oracle_mse", "sliced_w2", "elbo", "cost_units", "baseline_w2")
ELBO_BATCH = 1000


def score_w2(model: DualRateModel, source: DataSource, config: RunConfig, rng: np.random.Generator):
    """(generated samples, reference samples, model W2, data-vs-data W2)."""
    sample_cfg = config.sample_config().model_copy(update={"n_samples": config.eval.n_samples})
    labels = choose_labels(model.n_classes, sample_cfg.guidance_w, sample_cfg.n_samples, rng)
    generated = ancestral_sample(model, labels, config.schedule, sample_cfg, rng)
    reference = source.sample(config.eval.n_samples, rng).x
    resample = source.sample(config.eval.n_samples, rng).x
    w2 = sliced_w2(generated.x, reference, config.eval.n_projections, rng)
    baseline = sliced_w2(resample, reference, config.eval.n_projections, rng)
    return generated, reference, w2, baseline


class EvalNode:
    def __call__(self, state: RunState) -> RunState:
        config = state.config
        ev = config.eval
        step = 0
        if state.model is None:
            state.model = load_model(resolve_checkpoint(state, ev.checkpoint), config.sampler.use_ema)
        if state.train_state is not None:
            step = state.train_state.step
        model = state.model

        generated, reference, w2, baseline = score_w2(model, state.source, config, state.rng)
        counts = count_nfe(generated.trace)
        heavy = counts.heavy if model.has_encoder else 0
        guided_heavy = counts.guided_heavy if model.has_encoder else 0
        cost = inference_cost(config.cost_model(), heavy, counts.light, guided_heavy, counts.guided_light)
        elbo = elbo_estimate(model, reference[:ELBO_BATCH], config.schedule, ev.n_mc, state.rng, K=config.train.K)

        mse_summary = None
        if state.source.gmm is not None:
            grid = np.linspace(ev.lambda_lo, ev.lambda_hi, ev.lambda_points)
            report = oracle_mse(model, state.source.gmm, config.schedule, state.rng,
                                lambda_grid=grid, n_per_point=ev.n_per_point, K=config.train.K)
            mse_summary = report.mean_in()
            rows = [{"lambda": lam, "mse": m} for lam, m in zip(report.lambdas, report.mse)]
            state.record_output("mse_curve", write_csv(state.out_path("mse_curve.csv"), ("lambda", "mse"), rows))
            if ev.plots:
                line_svg(state.out_path("mse_curve.svg"), report.lambdas, [("oracle mse", report.mse)],
                         title="MSE to oracle vs log-SNR")
        if ev.plots:
            scatter_svg(state.out_path("scatter.svg"), [("ground truth", reference), ("generated", generated.x)],
                        title=f"K={config.sampler.K} k={config.sampler.k}")

        record = MetricsRecord(step=step, oracle_mse=mse_summary, sliced_w2=w2, elbo=elbo.value, cost_units=cost)
        path = write_csv(state.out_path("eval_metrics.csv"), EVAL_COLUMNS,
                         [{**record.model_dump(), "baseline_w2": baseline}])
        state.record_output("eval_metrics", path)
        state.metrics.update({
            "sliced_w2": w2,
            "baseline_w2": baseline,
            "oracle_mse": mse_summary,
            "elbo": elbo.value,
            "elbo_stderr": elbo.stderr,
            "prior_kl": elbo.prior_kl,
            "cost_units": cost,
            "nfe": counts._asdict(),
        })
        logger.info(f"[EVAL] sliced_w2={w2:.4f} (baseline {baseline:.4f}) oracle_mse={mse_summary} cost={cost:.2f}")
        state.log_event("eval_node", {"sliced_w2": w2, "baseline_w2": baseline, "cost_units": cost})
        return state
