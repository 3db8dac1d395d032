"""
Endpoint-error metrics.

Threeway EPE splits the points of ``cloud_t`` into three buckets (static background,
static foreground, dynamic foreground) and averages the per-bucket mean EPEs. A point
is dynamic when its ground-truth speed ``||gt|| / dt`` exceeds the threshold. Buckets
without points are left out of the average and listed in ``empty_buckets``.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, Optional, Tuple, Union

import numpy as np

from src.config import settings
from src.core.errors import EmptyCloudError, ShapeError
from src.core.types import FlowField, PointClass, SceneSample, in_area_mask

logger = logging.getLogger(__name__)

FlowLike = Union[FlowField, np.ndarray]
Estimator = Callable[[SceneSample], FlowField]


class Bucket(str, Enum):
    BACKGROUND = "bg"
    STATIC_FG = "fg_static"
    DYNAMIC_FG = "fg_dynamic"


def _vectors(flow: FlowLike) -> np.ndarray:
    return flow.vectors if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)


def residual_norms(pred: FlowLike, gt: FlowLike) -> np.ndarray:
    pred, gt = _vectors(pred), _vectors(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} are not aligned")
    return np.linalg.norm(pred - gt, axis=1)


def epe(pred: FlowLike, gt: FlowLike, mask: Optional[np.ndarray] = None) -> float:
    """Mean L2 residual over the (masked) points."""
    norms = residual_norms(pred, gt)
    if mask is not None:
        norms = norms[np.asarray(mask, dtype=bool)]
    if norms.size == 0:
        raise EmptyCloudError("EPE over an empty point set")
    return float(np.mean(norms))


def bucket_masks(
    gt: FlowLike,
    classes: np.ndarray,
    dt: float = settings.DT_SECONDS,
    speed_threshold: float = settings.DYNAMIC_SPEED_THRESHOLD,
) -> Dict[Bucket, np.ndarray]:
    """Disjoint masks covering every point."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    gt = _vectors(gt)
    classes = np.asarray(classes).reshape(-1)
    if classes.shape[0] != gt.shape[0]:
        raise ShapeError(f"{classes.shape[0]} classes for {gt.shape[0]} flow vectors")
    foreground = classes == PointClass.FOREGROUND
    dynamic = np.linalg.norm(gt, axis=1) / dt > speed_threshold
    return {
        Bucket.BACKGROUND: ~foreground,
        Bucket.STATIC_FG: foreground & ~dynamic,
        Bucket.DYNAMIC_FG: foreground & dynamic,
    }


@dataclass(frozen=True)
class ThreewayReport:
    """Per-bucket EPEs (``None`` for an empty bucket) and their mean."""

    threeway_epe: float
    fg_dynamic_epe: Optional[float]
    fg_static_epe: Optional[float]
    bg_epe: Optional[float]
    counts: Dict[str, int] = field(default_factory=dict)

    @property
    def empty_buckets(self) -> Tuple[str, ...]:
        return tuple(b.value for b in Bucket if self.counts.get(b.value, 0) == 0)

    def as_row(self) -> Dict[str, float]:
        """Report-table columns; empty buckets become NaN (blank in CSV)."""
        def value(x):
            return math.nan if x is None else x

        return {
            "threeway_epe": self.threeway_epe,
            "fg_dynamic": value(self.fg_dynamic_epe),
            "fg_static": value(self.fg_static_epe),
            "bg": value(self.bg_epe),
        }


class ThreewayAccumulator:
    """Pools residuals of many frames per bucket, in the order they are added."""

    def __init__(self, speed_threshold: float = settings.DYNAMIC_SPEED_THRESHOLD):
        self.speed_threshold = speed_threshold
        self._sums = {b: 0.0 for b in Bucket}
        self._counts = {b: 0 for b in Bucket}

    def add(self, pred: FlowLike, gt: FlowLike, classes: np.ndarray, dt: float = settings.DT_SECONDS,
            mask: Optional[np.ndarray] = None) -> None:
        norms = residual_norms(pred, gt)
        masks = bucket_masks(gt, classes, dt, self.speed_threshold)
        keep = np.ones(norms.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        for bucket, members in masks.items():
            selected = norms[members & keep]
            self._sums[bucket] += float(np.sum(selected))
            self._counts[bucket] += int(selected.size)

    def report(self) -> ThreewayReport:
        if sum(self._counts.values()) == 0:
            raise EmptyCloudError("Threeway EPE over an empty point set")
        means = {
            b: (self._sums[b] / self._counts[b] if self._counts[b] else None) for b in Bucket
        }
        present = [m for m in means.values() if m is not None]
        report = ThreewayReport(
            threeway_epe=float(np.mean(present)),
            fg_dynamic_epe=means[Bucket.DYNAMIC_FG],
            fg_static_epe=means[Bucket.STATIC_FG],
            bg_epe=means[Bucket.BACKGROUND],
            counts={b.value: self._counts[b] for b in Bucket},
        )
        if report.empty_buckets:
            logger.debug("Threeway EPE excludes empty buckets: %s", ", ".join(report.empty_buckets))
        return report


def threeway_epe(
    pred: FlowLike,
    gt: FlowLike,
    classes: np.ndarray,
    dt: float = settings.DT_SECONDS,
    speed_threshold: float = settings.DYNAMIC_SPEED_THRESHOLD,
) -> ThreewayReport:
    accumulator = ThreewayAccumulator(speed_threshold)
    accumulator.add(pred, gt, classes, dt)
    return accumulator.report()


def evaluate_estimator(
    estimator: Estimator,
    samples: Iterable[SceneSample],
    eval_half_extent: Optional[float] = None,
) -> ThreewayReport:
    """
    Threeway EPE of ``estimator`` pooled over ``samples``.

    The estimator sees each full frame pair; only points of ``cloud_t`` inside the
    evaluation crop are scored.
    """
    accumulator = ThreewayAccumulator()
    for sample in samples:
        mask = None
        if eval_half_extent is not None:
            mask = in_area_mask(sample.cloud_t.points, eval_half_extent)
        pred = estimator(sample)
        accumulator.add(pred, sample.gt_flow, sample.classes, sample.dt_seconds, mask)
    return accumulator.report()
