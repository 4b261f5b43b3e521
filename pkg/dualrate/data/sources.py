"""
Dataset selection from the run config.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from data.batch import DataBatch
from data.gmm import GmmSpec, benchmark_gmm, gmm_sample
from data.patterns import GridPatternSpec, grid_sample


@dataclass(frozen=True)
class DataSource:
    spec: Union[GmmSpec, GridPatternSpec]

    @property
    def kind(self) -> str:
        return "gmm" if isinstance(self.spec, GmmSpec) else "grid"

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def n_classes(self) -> int:
        return self.spec.n_components if isinstance(self.spec, GmmSpec) else self.spec.n_classes

    @property
    def gmm(self) -> Optional[GmmSpec]:
        return self.spec if isinstance(self.spec, GmmSpec) else None

    def sample(self, n: int, rng: np.random.Generator) -> DataBatch:
        if isinstance(self.spec, GmmSpec):
            return gmm_sample(self.spec, n, rng)
        return grid_sample(self.spec, n, rng)


def build_data_source(settings) -> DataSource:
    """settings is the run config's data section."""
    if settings.kind == "grid":
        return DataSource(GridPatternSpec(side=settings.side, n_classes=settings.n_classes, noise_std=settings.noise_std))
    return DataSource(
        benchmark_gmm(
            n_components=settings.n_components,
            dim=settings.dim,
            comp_std=settings.comp_std,
            radius=settings.radius,
        )
    )
