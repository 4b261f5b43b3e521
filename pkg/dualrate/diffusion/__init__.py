"""
Noise schedules and the Gaussian forward process.
"""

from .process import (
    NoisyState,
    PosteriorParams,
    posterior_params,
    posterior_variances,
    sample_bridge,
    sample_marginal,
    sample_posterior,
)
from .timesteps import sample_distill_times, sample_training_times
from .schedule import LogSnrSchedule, LossWeight, SnrPoint, elbo_factor, loss_weight, schedule_eval

__all__ = [
    "NoisyState",
    "PosteriorParams",
    "posterior_params",
    "posterior_variances",
    "sample_bridge",
    "sample_marginal",
    "sample_posterior",
    "LogSnrSchedule",
    "LossWeight",
    "SnrPoint",
    "elbo_factor",
    "loss_weight",
    "schedule_eval",
    "sample_distill_times",
    "sample_training_times",
]
