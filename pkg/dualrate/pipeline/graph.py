"""
ExperimentGraph wires the node flow for each command into a sequential plan.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from config import Config
from schemas.run_config import RunConfig
from services.run_logging import write_run_summary

from .nodes import AblateNode, DataNode, DistillNode, EvalNode, SampleNode, TrainNode
from .state import RunState

logger = logging.getLogger(__name__)

Node = Callable[[RunState], RunState]


class ExperimentGraph:
    def __init__(self) -> None:
        self.data_node = DataNode()
        self.train_node = TrainNode()
        self.sample_node = SampleNode()
        self.eval_node = EvalNode()
        self.distill_node = DistillNode()
        self.ablate_node = AblateNode()

    def plan(self, command: str) -> List[Node]:
        plans: Dict[str, List[Node]] = {
            "train": [self.data_node, self.train_node],
            "sample": [self.data_node, self.sample_node],
            "distill": [self.data_node, self.distill_node],
            "eval": [self.data_node, self.eval_node],
            "ablate": [self.data_node, self.ablate_node],
        }
        return plans[command]

    def initial_state(self, config: RunConfig, output_dir: Optional[str] = None) -> RunState:
        out = output_dir or Config.output_override() or config.output_dir
        Path(out).mkdir(parents=True, exist_ok=True)
        # The single seed is fixed here, before any random draw
        return RunState(config=config, output_dir=str(out), rng=np.random.default_rng(config.seed))

    def run(self, config: RunConfig, output_dir: Optional[str] = None) -> RunState:
        state = self.initial_state(config, output_dir)
        logger.info(f"[GRAPH] command={config.command} seed={config.seed} output_dir={state.output_dir}")
        for node in self.plan(config.command):
            state = node(state)
        summary = write_run_summary(
            Path(state.output_dir),
            {
                "command": config.command,
                "seed": config.seed,
                "config": config.model_dump(mode="json"),
                "metrics": state.metrics,
                "outputs": state.outputs,
                "ledger": [event.model_dump() for event in state.ledger],
            },
        )
        if summary is not None:
            state.record_output("summary", summary)
        return state
