"""
Inference cost accounting in user-supplied units per network evaluation.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from errors import EvaluationError


class CostModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    c_encoder: float = Field(default=108.45, ge=0.0, description="Cost per context-encoder evaluation")
    c_denoiser: float = Field(default=44.02, ge=0.0, description="Cost per denoiser evaluation")
    guidance_doubling: bool = True


def inference_cost(cost: CostModel, K: int, k: int, guided_heavy: int = 0, guided_light: int = 0) -> float:
    """(K + guided_heavy)·c_encoder + (k + guided_light)·c_denoiser"""
    if min(K, k, guided_heavy, guided_light) < 0:
        raise EvaluationError("evaluation counts must be non-negative")
    if guided_heavy > K or guided_light > k:
        raise EvaluationError(f"guided counts ({guided_heavy}, {guided_light}) exceed base counts ({K}, {k})")
    if not cost.guidance_doubling:
        guided_heavy = guided_light = 0
    return (K + guided_heavy) * cost.c_encoder + (k + guided_light) * cost.c_denoiser
