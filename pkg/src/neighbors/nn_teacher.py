"""
Nearest-neighbor pseudo-label baseline: each point flows to its closest point in the
next frame unless that point is farther than the truncation radius.
"""

import time

import numpy as np

from src.config import settings
from src.core.types import FlowField, PointCloud, PseudoLabel
from src.neighbors.kdtree import KdTree


def nn_flow_teacher(
    cloud_t: PointCloud,
    cloud_t1: PointCloud,
    truncation_radius: float = settings.CHAMFER_TRUNCATION_RADIUS,
) -> PseudoLabel:
    cloud_t.require_non_empty("cloud_t")
    cloud_t1.require_non_empty("cloud_t1")
    start = time.perf_counter()
    indices, distances = KdTree(cloud_t1).query(cloud_t.points)
    flow = cloud_t1.points[indices] - cloud_t.points
    beyond = distances > truncation_radius
    flow[beyond] = 0.0
    return PseudoLabel(
        flow=FlowField(flow),
        teacher_name="nn",
        final_loss=float(np.mean(np.where(beyond, 0.0, distances ** 2))),
        iters_run=1,
        wall_time_ms=int((time.perf_counter() - start) * 1000),
    )
