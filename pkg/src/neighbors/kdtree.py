"""
Exact nearest-neighbor index over an immutable point cloud.

Queries go through SciPy's ``cKDTree``. Exact distance ties resolve to the lowest
point index: among the ``TIE_CANDIDATES`` closest candidates, or, when all of them
tie, among every point inside the tied radius.
"""

from typing import Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from src.core.errors import EmptyCloudError, ShapeError
from src.core.types import Point3, PointCloud

TIE_CANDIDATES = 8
# relative slack on the ball radius; candidates are re-ranked by exact distance
_BALL_SLACK = 1e-9


class KdTree:
    """Balanced 3-D spatial index; immutable after construction and safe for concurrent queries."""

    def __init__(self, cloud: Union[PointCloud, np.ndarray]):
        points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ShapeError(f"KdTree expects (N, 3) points, got {points.shape}")
        self.points = points
        self._tree = cKDTree(points, balanced_tree=True, compact_nodes=True) if len(points) else None

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Nearest stored point for each query row.

        Returns:
            (indices int64[M], distances float64[M])
        """
        if self._tree is None:
            raise EmptyCloudError("nearest-neighbor query on an empty tree")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(TIE_CANDIDATES, len(self))
        distances, indices = self._tree.query(queries, k=k)
        if k == 1:
            return indices.astype(np.int64), distances
        tied = distances == distances[:, :1]
        best = np.where(tied, indices, len(self)).min(axis=1)
        for row in np.flatnonzero(tied[:, -1]):
            best[row] = self._lowest_tied_index(queries[row], distances[row, 0])
        return best.astype(np.int64), distances[:, 0]

    def _lowest_tied_index(self, q: np.ndarray, radius: float) -> int:
        """Lowest index among all points at the minimum distance from ``q``."""
        candidates = np.asarray(
            self._tree.query_ball_point(q, radius * (1.0 + _BALL_SLACK) + _BALL_SLACK), dtype=np.int64
        )
        exact = np.linalg.norm(self.points[candidates] - q, axis=1)
        return int(candidates[exact == exact.min()].min())


def nearest(tree: KdTree, q: Union[Point3, np.ndarray]) -> Tuple[int, float]:
    """Index of, and Euclidean distance to, the stored point closest to ``q``."""
    indices, distances = tree.query(np.asarray(q, dtype=np.float64))
    return int(indices[0]), float(distances[0])
