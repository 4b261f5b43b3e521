"""
Run state shared by the experiment graph's nodes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from data.sources import DataSource
from engine.distiller import DistillState
from engine.sampler import SampleTrace
from engine.trainer import TrainState
from models.dual_rate import DualRateModel
from schemas.run_config import RunConfig


class LedgerEvent(BaseModel):
    component: str
    payload: Dict[str, Any]
    label: str = "stage"


class RunState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: RunConfig
    output_dir: str
    rng: np.random.Generator

    source: Optional[DataSource] = None
    model: Optional[DualRateModel] = Field(default=None, description="Model used for sampling and evaluation")
    train_state: Optional[TrainState] = None
    distill_state: Optional[DistillState] = None

    samples: Optional[np.ndarray] = None
    sample_labels: Optional[np.ndarray] = None
    trace: Optional[SampleTrace] = None

    metrics: Dict[str, Any] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict, description="Artifact name -> path under output_dir")

    ledger: List[LedgerEvent] = Field(default_factory=list)

    def log_event(self, component: str, payload: Dict[str, Any], label: str = "stage") -> None:
        self.ledger.append(LedgerEvent(component=component, payload=payload, label=label))

    def out_path(self, name: str) -> Path:
        path = Path(self.output_dir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def record_output(self, name: str, path: Path) -> None:
        self.outputs[name] = str(path)
