"""
Pillar rasterization: a point cloud becomes a birds-eye-view pseudoimage.

Each point is assigned to the infinitely tall voxel (pillar) containing it. Its feature
``(x - cx, y - cy, z, 1)``, with ``(cx, cy)`` the pillar center, is embedded by a shared
MLP and the embeddings are max-pooled per pillar. The pseudoimage is stored
channel-first, ``(C, H, W)``, with rows along +y and columns along +x.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from src.config import settings
from src.core.errors import ConfigMismatchError
from src.core.types import PointCloud
from src.nn import autodiff as ad
from src.nn.autodiff import Tensor
from src.nn.layers import Mlp

POINT_FEATURES = 4


class PillarConfig(BaseModel):
    """Grid geometry and backbone size of the student."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    pillar_size: float = settings.PILLAR_SIZE
    area_half_extent: float = settings.TRAIN_HALF_EXTENT
    embed_dim: int = 16
    unet_levels: int = 4
    decode_hidden: int = 32

    @model_validator(mode="after")
    def _grid_divides(self):
        if self.pillar_size <= 0 or self.area_half_extent <= 0:
            raise ValueError("pillar_size and area_half_extent must be > 0")
        if self.embed_dim < 1 or self.unet_levels < 1 or self.decode_hidden < 1:
            raise ValueError("embed_dim, unet_levels and decode_hidden must be >= 1")
        cells = 2 * self.area_half_extent / self.pillar_size
        if abs(cells - round(cells)) > 1e-6 or round(cells) < 1:
            raise ValueError(
                f"2 * area_half_extent / pillar_size = {cells:.6f} is not a positive integer"
            )
        factor = 2 ** (self.unet_levels - 1)
        if round(cells) % factor:
            raise ValueError(
                f"grid of {round(cells)} cells is not divisible by 2^(unet_levels - 1) = {factor}"
            )
        return self

    @property
    def grid_cells(self) -> int:
        return int(round(2 * self.area_half_extent / self.pillar_size))

    @property
    def channel_widths(self) -> Tuple[int, ...]:
        return tuple(self.embed_dim * 2 ** level for level in range(self.unet_levels))

    def xl(self) -> "PillarConfig":
        """Half-size pillars, doubled embedding and one extra U-Net level."""
        return self.model_copy(update={
            "pillar_size": self.pillar_size / 2,
            "embed_dim": self.embed_dim * 2,
            "unet_levels": self.unet_levels + 1,
        })

    @classmethod
    def desk_scale(cls, **overrides) -> "PillarConfig":
        values = {"area_half_extent": settings.DESK_HALF_EXTENT, "embed_dim": 8}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class Pseudoimage:
    """BEV feature grid plus the pillar of every source point."""

    features: Tensor
    rows: np.ndarray
    cols: np.ndarray

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]

    @property
    def cell_ids(self) -> np.ndarray:
        return self.rows * self.grid_shape[1] + self.cols


def grid_reach(cfg: PillarConfig) -> float:
    """Half extent widened to the float32 rounding of the boundary, the precision samples are stored at."""
    return max(cfg.area_half_extent, float(np.float32(cfg.area_half_extent)))


def pillar_indices(points: np.ndarray, cfg: PillarConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    (row, col) of the pillar containing each point.

    Points exactly on the upper boundary, or up to its float32 rounding, belong to the last cell.

    Raises:
        ConfigMismatchError: if a point lies outside the configured area
    """
    half = cfg.area_half_extent
    if len(points):
        reach = float(np.max(np.abs(points[:, :2])))
        if reach > grid_reach(cfg):
            raise ConfigMismatchError(
                f"point at {reach:.3f} m lies outside the pillar grid of half extent {half} m"
            )
    cells = cfg.grid_cells
    cols = np.floor((points[:, 0] + half) / cfg.pillar_size).astype(np.int64)
    rows = np.floor((points[:, 1] + half) / cfg.pillar_size).astype(np.int64)
    return np.clip(rows, 0, cells - 1), np.clip(cols, 0, cells - 1)


def point_features(points: np.ndarray, rows: np.ndarray, cols: np.ndarray, cfg: PillarConfig) -> np.ndarray:
    half, size = cfg.area_half_extent, cfg.pillar_size
    center_x = (cols + 0.5) * size - half
    center_y = (rows + 0.5) * size - half
    return np.column_stack([
        points[:, 0] - center_x,
        points[:, 1] - center_y,
        points[:, 2],
        np.ones(len(points)),
    ])


def pillarize(cloud: PointCloud, cfg: PillarConfig, embed: Mlp) -> Pseudoimage:
    """
    Rasterize ``cloud`` into a ``(embed_dim, H, W)`` pseudoimage.

    Args:
        cloud: Points inside the configured area (crop first)
        cfg: Grid geometry
        embed: Shared per-point embedding network ``4 -> embed_dim``

    Returns:
        Pseudoimage; empty pillars hold zero vectors
    """
    points = cloud.points
    rows, cols = pillar_indices(points, cfg)
    cells = cfg.grid_cells
    embedded = embed(Tensor(point_features(points, rows, cols, cfg)))
    pooled = ad.segment_max(embedded, rows * cells + cols, cells * cells)
    channels = embedded.shape[1]
    grid = ad.transpose(ad.reshape(pooled, (cells, cells, channels)), (2, 0, 1))
    return Pseudoimage(features=grid, rows=rows, cols=cols)
