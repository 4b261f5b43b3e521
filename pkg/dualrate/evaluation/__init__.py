"""
Metrics and cost accounting.
"""

from .cost import CostModel, inference_cost
from .metrics import (
    DEFAULT_LAMBDA_GRID,
    ElboEstimate,
    MetricsRecord,
    OracleMseReport,
    elbo_estimate,
    heavy_time_for,
    oracle_mse,
    prior_kl,
    sliced_w2,
)

__all__ = [
    "CostModel",
    "inference_cost",
    "DEFAULT_LAMBDA_GRID",
    "ElboEstimate",
    "MetricsRecord",
    "OracleMseReport",
    "elbo_estimate",
    "heavy_time_for",
    "oracle_mse",
    "prior_kl",
    "sliced_w2",
]
