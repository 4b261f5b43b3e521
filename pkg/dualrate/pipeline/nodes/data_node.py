"""
DataNode builds the ground-truth data source for the run.
"""

from __future__ import annotations

from data.sources import build_data_source
from ..state import RunState


class DataNode:
    def __call__(self, state: RunState) -> RunState:
        state.source = build_data_source(state.config.data)
        state.log_event("data_node", {"kind": state.source.kind, "dim": state.source.dim,
                                      "n_classes": state.source.n_classes})
        return state
