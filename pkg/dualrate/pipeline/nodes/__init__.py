"""
Node definitions for the experiment pipeline.
"""

from .data_node import DataNode
from .train_node import TrainNode
from .sample_node import SampleNode
from .eval_node import EvalNode
from .distill_node import DistillNode
from .ablate_node import AblateNode, run_ablation

__all__ = [
    "DataNode",
    "TrainNode",
    "SampleNode",
    "EvalNode",
    "DistillNode",
    "AblateNode",
    "run_ablation",
]
