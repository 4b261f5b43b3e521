"""
Data batches with class labels and CFG drop flags.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from errors import ConfigurationError


@dataclass
class DataBatch:
    x: np.ndarray
    labels: Optional[np.ndarray] = None
    class_mask: Optional[np.ndarray] = None
    n_classes: int = 0
    # Set for grid-pattern data so augmentation can reshape items
    grid_side: Optional[int] = None

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise ConfigurationError(f"labels must lie in [0, {self.n_classes})")
            if self.class_mask is None:
                self.class_mask = np.zeros(self.labels.shape[0], dtype=bool)

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def conditioning_labels(self) -> Optional[np.ndarray]:
        """Labels with dropped entries replaced by the null class index."""
        if self.labels is None:
            return None
        return np.where(self.class_mask, self.n_classes, self.labels)


def drop_class_labels(batch: DataBatch, prob: float, rng: np.random.Generator) -> DataBatch:
    if batch.labels is None:
        raise ConfigurationError("class dropout needs a labelled batch")
    drops = rng.random(len(batch)) < prob
    return replace(batch, class_mask=batch.class_mask | drops)
