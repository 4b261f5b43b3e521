"""
Tiny class-indexed stripe images in [-1, 1] and cyclic translation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from data.batch import DataBatch
from errors import ConfigurationError


@dataclass(frozen=True)
class GridPatternSpec:
    side: int = 8
    n_classes: int = 4
    noise_std: float = 0.05

    def __post_init__(self) -> None:
        if self.side < 2:
            raise ConfigurationError(f"grid side must be >= 2, got {self.side}")
        if self.n_classes < 1:
            raise ConfigurationError("grid data needs at least one class")

    @property
    def dim(self) -> int:
        return self.side * self.side


def class_pattern(spec: GridPatternSpec, label: int) -> np.ndarray:
    """Vertical cosine stripes whose phase is fixed by the class."""
    cols = np.arange(spec.side) / spec.side
    row = np.cos(2.0 * math.pi * (cols + label / spec.n_classes))
    return np.tile(row, (spec.side, 1))


def grid_sample(spec: GridPatternSpec, n: int, rng: np.random.Generator) -> DataBatch:
    labels = rng.integers(0, spec.n_classes, size=n)
    table = np.stack([class_pattern(spec, c).ravel() for c in range(spec.n_classes)])
    x = table[labels] + spec.noise_std * rng.standard_normal((n, spec.dim))
    return DataBatch(x=np.clip(x, -1.0, 1.0), labels=labels, n_classes=spec.n_classes, grid_side=spec.side)


def translate_grid(x: np.ndarray, side: int, dy: int, dx: int) -> np.ndarray:
    return np.roll(np.asarray(x).reshape(side, side), shift=(dy, dx), axis=(0, 1)).ravel()


def augment_translate(batch: DataBatch, prob: float, max_shift: int, rng: np.random.Generator) -> DataBatch:
    if batch.grid_side is None:
        raise ConfigurationError("translation augmentation only applies to grid-pattern data")
    n = len(batch)
    apply = rng.random(n) < prob
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    x = batch.x.copy()
    for i in np.flatnonzero(apply):
        x[i] = translate_grid(x[i], batch.grid_side, int(shifts[i, 0]), int(shifts[i, 1]))
    return replace(batch, x=x)
