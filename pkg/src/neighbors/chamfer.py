"""
Truncated Chamfer distance.

For each point of one cloud the distance to its nearest neighbor in the other cloud
is computed; terms whose (unsquared) distance exceeds the truncation radius are set
to zero. The default objective averages squared terms per direction and sums both
directions. Only the first cloud may carry gradients; the second is an observation.
"""

from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.config import settings
from src.core.errors import EmptyCloudError
from src.core.types import PointCloud
from src.neighbors.kdtree import KdTree
from src.nn import autodiff as ad
from src.nn.autodiff import Tensor


class ChamferConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    truncation_radius: float = settings.CHAMFER_TRUNCATION_RADIUS
    squared: bool = True
    bidirectional: bool = True

    @field_validator("truncation_radius")
    @classmethod
    def _positive_radius(cls, value):
        if value <= 0:
            raise ValueError("truncation_radius must be > 0")
        return value


def _points(cloud: Union[PointCloud, np.ndarray, Tensor]) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    if isinstance(cloud, Tensor):
        return cloud.data
    return np.asarray(cloud, dtype=np.float64)


def _direction_term(diff: Tensor, cfg: ChamferConfig) -> Tensor:
    squared = ad.reduce_sum(ad.square(diff), axis=1)
    keep = np.sqrt(squared.data) <= cfg.truncation_radius
    per_point = squared if cfg.squared else ad.sqrt(squared)
    return ad.reduce_mean(ad.mul(per_point, keep.astype(np.float64)))


def truncated_chamfer(
    a: Union[PointCloud, np.ndarray, Tensor],
    b: Union[PointCloud, np.ndarray],
    cfg: Optional[ChamferConfig] = None,
    b_tree: Optional[KdTree] = None,
) -> Tensor:
    """
    Truncated Chamfer distance between ``a`` and ``b``.

    Args:
        a: Cloud that may carry gradients (``(N, 3)`` Tensor) or a plain cloud
        b: Fixed observation cloud
        cfg: Truncation radius and aggregation choices
        b_tree: Prebuilt index over ``b``, reused across optimizer iterations

    Returns:
        Scalar Tensor; differentiable w.r.t. ``a`` when ``a`` requires grad
    """
    cfg = cfg or ChamferConfig()
    a_tensor = a if isinstance(a, Tensor) else Tensor(_points(a))
    b_points = _points(b)
    if a_tensor.shape[0] == 0 or len(b_points) == 0:
        raise EmptyCloudError("truncated_chamfer needs two non-empty clouds")

    tree_b = b_tree if b_tree is not None else KdTree(b_points)
    nearest_in_b, _ = tree_b.query(a_tensor.data)
    loss = _direction_term(ad.sub(a_tensor, b_points[nearest_in_b]), cfg)
    if cfg.bidirectional:
        nearest_in_a, _ = KdTree(a_tensor.data).query(b_points)
        loss = ad.add(loss, _direction_term(ad.sub(ad.gather(a_tensor, nearest_in_a), b_points), cfg))
    return loss
