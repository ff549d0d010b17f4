"""Nonparametric bootstrap percentile confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import BootstrapCollapseError, EstimationError


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 1000
    percentiles: tuple[float, float] = (0.025, 0.975)
    max_failure_fraction: float = 0.5

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("need at least 2 bootstrap replications")
        lo, hi = self.percentiles
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("percentiles must be ordered inside (0, 1)")


def bootstrap_percentile_ci(
    data: Dataset,
    estimator: Callable[[Dataset], float],
    config: BootstrapConfig,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Percentile interval over row resamples of the data.

    Each of the B resamples consumes its own child stream spawned up front
    from ``rng``, so the interval is bit-identical however the evaluations
    are scheduled.  Resamples where the estimator raises an EstimationError
    are dropped; more than ``max_failure_fraction`` of them failing raises
    BootstrapCollapseError.
    """
    n = data.n_subjects
    streams = rng.spawn(config.replications)
    points = []
    failures = 0
    for child in streams:
        indices = child.integers(0, n, size=n)
        try:
            points.append(float(estimator(data.take(indices))))
        except EstimationError:
            failures += 1
    if failures > config.max_failure_fraction * config.replications or not points:
        raise BootstrapCollapseError(
            f"{failures} of {config.replications} bootstrap replicates failed"
        )
    lo, hi = np.quantile(points, config.percentiles)  # linear interpolation
    return float(lo), float(hi)
