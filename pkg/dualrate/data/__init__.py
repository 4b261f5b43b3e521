"""
Synthetic ground-truth datasets: Gaussian mixtures and grid patterns.
"""

from .batch import DataBatch, drop_class_labels
from .gmm import GmmSpec, benchmark_gmm, gmm_log_density, gmm_sample
from .patterns import GridPatternSpec, augment_translate, class_pattern, grid_sample, translate_grid
from .sources import DataSource, build_data_source

__all__ = [
    "DataBatch",
    "drop_class_labels",
    "GmmSpec",
    "benchmark_gmm",
    "gmm_log_density",
    "gmm_sample",
    "GridPatternSpec",
    "augment_translate",
    "class_pattern",
    "grid_sample",
    "translate_grid",
    "DataSource",
    "build_data_source",
]
