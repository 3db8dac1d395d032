"""
Wall-clock runtime of a flow estimator, one frame pair at a time.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from src.core.types import FlowField, SceneSample

logger = logging.getLogger(__name__)

MIN_REPEATS = 3


@dataclass(frozen=True)
class RuntimeStats:
    mean_ms: float
    std_ms: float
    n_timings: int

    def to_dict(self) -> Dict[str, float]:
        return {"mean_ms": self.mean_ms, "std_ms": self.std_ms, "n_timings": self.n_timings}


def bench_runtime(
    estimator: Callable[[SceneSample], FlowField],
    samples: Sequence[SceneSample],
    repeats: int = MIN_REPEATS,
) -> RuntimeStats:
    """
    Time ``estimator`` on every sample ``repeats`` times.

    One warm-up call on the first sample is discarded before timing starts.

    Raises:
        ValueError: if ``repeats < 3`` or there are no samples
    """
    if repeats < MIN_REPEATS:
        raise ValueError(f"repeats must be >= {MIN_REPEATS}, got {repeats}")
    if not samples:
        raise ValueError("bench_runtime needs at least one sample")
    estimator(samples[0])
    timings = []
    for _ in range(repeats):
        for sample in samples:
            start = time.perf_counter()
            estimator(sample)
            timings.append((time.perf_counter() - start) * 1000.0)
    stats = RuntimeStats(float(np.mean(timings)), float(np.std(timings)), len(timings))
    logger.info("Runtime over %d timings: %.3f +/- %.3f ms", stats.n_timings, stats.mean_ms, stats.std_ms)
    return stats
