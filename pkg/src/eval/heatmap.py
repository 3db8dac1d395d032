"""
Residual-endpoint heatmaps for moving points.

For every point whose ground-truth speed exceeds the threshold, the BEV residual
``pred - gt`` is accumulated into a square 2-D histogram centered on zero. In rotated
mode each residual is first expressed in a frame where the ground-truth vector points
along +y, so the histogram does not depend on the direction of travel.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from src.config import settings
from src.core.errors import ShapeError
from src.core.types import FlowField

logger = logging.getLogger(__name__)

FlowLike = Union[FlowField, np.ndarray]


class HeatmapScale(str, Enum):
    LOG10 = "log10"
    ABSOLUTE = "absolute"


class HeatmapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    extent: float = 4.0  # meters per side
    bins: int = 200
    scale: HeatmapScale = HeatmapScale.LOG10
    rotated: bool = True
    speed_threshold: float = settings.DYNAMIC_SPEED_THRESHOLD  # m/s

    @field_validator("extent")
    @classmethod
    def _positive_extent(cls, value):
        if value <= 0:
            raise ValueError("extent must be > 0")
        return value

    @field_validator("bins")
    @classmethod
    def _even_bins(cls, value):
        if value < 2 or value % 2:
            raise ValueError("bins must be a positive even number")
        return value

    @property
    def center_bin(self) -> int:
        return self.bins // 2

    def file_stem(self, method: str) -> str:
        mode = "rotated" if self.rotated else "unrotated"
        scale = "log" if self.scale is HeatmapScale.LOG10 else "abs"
        return f"{method}_{mode}_{scale}"


@dataclass(frozen=True)
class Heatmap:
    """Bin counts indexed ``[row, col]``; row grows with +y, col with +x."""

    counts: np.ndarray
    spec: HeatmapSpec
    n_moving: int
    n_outside: int

    @property
    def empty(self) -> bool:
        return self.n_moving == 0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def image(self) -> np.ndarray:
        """8-bit image, top row is +y."""
        counts = self.counts.astype(np.float64)
        if self.spec.scale is HeatmapScale.LOG10:
            counts = np.log10(1.0 + counts)
        peak = counts.max()
        scaled = np.zeros_like(counts) if peak == 0 else counts / peak * 255.0
        return np.flipud(np.round(scaled).astype(np.uint8))


def _vectors(flow: FlowLike) -> np.ndarray:
    return flow.vectors if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)


def rotate_to_gt_frame(residual_xy: np.ndarray, gt_xy: np.ndarray) -> np.ndarray:
    """Express residuals in the frame where the matching ground-truth vector points along +y."""
    length = np.sqrt(gt_xy[:, 0] * gt_xy[:, 0] + gt_xy[:, 1] * gt_xy[:, 1])
    safe = np.where(length > 0, length, 1.0)
    ux = np.where(length > 0, gt_xy[:, 0] / safe, 0.0)
    uy = np.where(length > 0, gt_xy[:, 1] / safe, 1.0)
    across = residual_xy[:, 0] * uy - residual_xy[:, 1] * ux
    along = residual_xy[:, 0] * ux + residual_xy[:, 1] * uy
    return np.column_stack([across, along])


def residual_heatmap(pred: FlowLike, gt: FlowLike, dt: float, spec: HeatmapSpec = None) -> Heatmap:
    """
    Accumulate the BEV residuals of moving points.

    Args:
        pred: Predicted flow
        gt: Ground-truth flow
        dt: Frame interval in seconds
        spec: Histogram geometry, scale and rotation mode

    Returns:
        Heatmap; residuals beyond the extent are counted in ``n_outside``
    """
    spec = spec or HeatmapSpec()
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    pred, gt = _vectors(pred), _vectors(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} are not aligned")
    moving = np.linalg.norm(gt, axis=1) / dt > spec.speed_threshold
    counts = np.zeros((spec.bins, spec.bins), dtype=np.int64)
    n_moving = int(moving.sum())
    if n_moving == 0:
        logger.warning("No points above %.2f m/s; heatmap is empty", spec.speed_threshold)
        return Heatmap(counts=counts, spec=spec, n_moving=0, n_outside=0)

    residual = pred[moving, :2] - gt[moving, :2]
    if spec.rotated:
        residual = rotate_to_gt_frame(residual, gt[moving, :2])
    # bin i covers [(i - bins/2) * w, (i - bins/2 + 1) * w) with w = extent / bins
    position = residual * (spec.bins / spec.extent) + spec.bins // 2
    index = np.floor(position).astype(np.int64)
    inside = np.all((index >= 0) & (index < spec.bins), axis=1)
    np.add.at(counts, (index[inside, 1], index[inside, 0]), 1)
    return Heatmap(counts=counts, spec=spec, n_moving=n_moving, n_outside=int((~inside).sum()))


def merge_heatmaps(heatmaps) -> Heatmap:
    heatmaps = list(heatmaps)
    if not heatmaps:
        raise ValueError("merge_heatmaps needs at least one heatmap")
    spec = heatmaps[0].spec
    return Heatmap(
        counts=sum(h.counts for h in heatmaps),
        spec=spec,
        n_moving=sum(h.n_moving for h in heatmaps),
        n_outside=sum(h.n_outside for h in heatmaps),
    )


def write_pgm(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    height, width = image.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes())
    return path


def write_heatmap(heatmap: Heatmap, out_dir: Union[str, Path], method: str) -> Dict[str, Path]:
    """Write ``<method>_<rotated|unrotated>_<log|abs>.pgm`` and the raw bins as ``.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = heatmap.spec.file_stem(method)
    pgm = write_pgm(heatmap.image(), out_dir / f"{stem}.pgm")
    csv = out_dir / f"{stem}.csv"
    pd.DataFrame(heatmap.counts).to_csv(csv, index=False, header=False)
    logger.info(
        "Heatmap %s: %d moving points, %d outside the %.1f m window",
        stem, heatmap.n_moving, heatmap.n_outside, heatmap.spec.extent,
    )
    return {"pgm": pgm, "csv": csv}
