"""
Experiment pipeline wiring: run state, nodes and the command graph.
"""

from .graph import ExperimentGraph
from .state import RunState

__all__ = ["ExperimentGraph", "RunState"]
