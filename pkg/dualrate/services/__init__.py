"""
Persistence helpers: checkpoints, metric logs and SVG plots.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .plots import line_svg, scatter_svg
from .run_logging import read_csv, write_array_csv, write_csv, write_run_summary

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "line_svg",
    "scatter_svg",
    "read_csv",
    "write_array_csv",
    "write_csv",
    "write_run_summary",
]
