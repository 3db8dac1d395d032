"""
Synthetic rigid-scene generator.

Produces ego-compensated, ground-free frame pairs with analytically exact scene flow.
Static structures (walls as boxes, poles as cylinders) have zero flow; every moving
object is a rigid box whose surface is sampled independently at t and t+1, so no
t point has an exact counterpart at t+1.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core.errors import EmptyCloudError
from src.core.types import (
    FlowField,
    ObjectSpec,
    PointClass,
    PointCloud,
    RigidMotion,
    SceneConfig,
    SceneSample,
    in_area_mask,
)

logger = logging.getLogger(__name__)

SENSOR_ORIGIN = np.array([0.0, 0.0, 1.8])
MIN_SENSOR_CLEARANCE = 4.0


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class _Box:
    """Box given by center, (length, width, height) and yaw; bottom face is never sampled."""

    def __init__(self, center: np.ndarray, size: np.ndarray, yaw: float):
        self.center = np.asarray(center, dtype=np.float64)
        self.size = np.asarray(size, dtype=np.float64)
        self.yaw = float(yaw)
        self.rotation = _yaw_matrix(yaw)

    def sample_surface(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        l, w, h = self.size
        # +x, -x, +y, -y, top
        areas = np.array([w * h, w * h, l * h, l * h, l * w])
        face = rng.choice(5, size=n, p=areas / areas.sum())
        u = rng.uniform(-0.5, 0.5, size=(n, 3)) * self.size
        normals = np.zeros((n, 3))
        for index, (axis, sign) in enumerate([(0, 1), (0, -1), (1, 1), (1, -1), (2, 1)]):
            on_face = face == index
            u[on_face, axis] = sign * self.size[axis] / 2
            normals[on_face, axis] = sign
        return u @ self.rotation.T + self.center, normals @ self.rotation.T

    def segment_hits(self, origin: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """True where the open segment origin -> target passes through the box (slab test)."""
        local_origin = (origin - self.center) @ self.rotation
        direction = (targets - origin) @ self.rotation
        half = self.size / 2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / direction
            t0 = (-half - local_origin) * inv
            t1 = (half - local_origin) * inv
        t_near = np.nanmax(np.minimum(t0, t1), axis=1)
        t_far = np.nanmin(np.maximum(t0, t1), axis=1)
        return (t_near <= t_far) & (t_far > 0.0) & (t_near < 1.0 - 1e-6)

    def describe(self) -> Dict:
        return {"center": self.center.tolist(), "size": self.size.tolist(), "yaw": self.yaw}


class _Cylinder:
    """Vertical pole standing on the ground plane."""

    def __init__(self, base: np.ndarray, radius: float, height: float):
        self.base = np.asarray(base, dtype=np.float64)
        self.radius = float(radius)
        self.height = float(height)

    def sample_surface(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        side_area = 2 * np.pi * self.radius * self.height
        top_area = np.pi * self.radius ** 2
        on_top = rng.uniform(size=n) < top_area / (side_area + top_area)
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        radial = np.where(on_top, self.radius * np.sqrt(rng.uniform(size=n)), self.radius)
        z = np.where(on_top, self.height, rng.uniform(0.0, self.height, size=n))
        points = np.stack([radial * np.cos(theta), radial * np.sin(theta), z], axis=1) + self.base
        normals = np.where(
            on_top[:, None],
            np.array([0.0, 0.0, 1.0]),
            np.stack([np.cos(theta), np.sin(theta), np.zeros(n)], axis=1),
        )
        return points, normals

    def describe(self) -> Dict:
        return {"base": self.base.tolist(), "radius": self.radius, "height": self.height}


def _random_position(rng: np.random.Generator, half_extent: float, margin: float) -> np.ndarray:
    limit = max(half_extent - margin, 0.5)
    for _ in range(100):
        xy = rng.uniform(-limit, limit, size=2)
        if np.linalg.norm(xy) >= min(MIN_SENSOR_CLEARANCE, limit):
            return xy
    return xy


def _build_structures(config: SceneConfig, rng: np.random.Generator) -> List:
    structures = []
    for _ in range(config.n_structures):
        if rng.uniform() < 0.6:
            size = np.array([rng.uniform(2.0, 10.0), rng.uniform(0.3, 1.5), rng.uniform(2.0, 5.0)])
            xy = _random_position(rng, config.area_half_extent, size[0] / 2)
            center = np.array([xy[0], xy[1], size[2] / 2])
            structures.append(_Box(center, size, rng.uniform(0.0, np.pi)))
        else:
            xy = _random_position(rng, config.area_half_extent, 0.5)
            structures.append(_Cylinder(np.array([xy[0], xy[1], 0.0]), rng.uniform(0.1, 0.4), rng.uniform(3.0, 8.0)))
    return structures


def _random_objects(
    config: SceneConfig, layout_rng: np.random.Generator, pair_rng: Optional[np.random.Generator]
) -> List[ObjectSpec]:
    objects = []
    for _ in range(config.n_objects):
        length = layout_rng.uniform(*config.object_size_range)
        size = (length, length * layout_rng.uniform(0.4, 0.55), layout_rng.uniform(1.4, 2.0))
        xy = _random_position(layout_rng, config.area_half_extent * 0.8, length / 2)
        heading = layout_rng.uniform(-np.pi, np.pi)
        speed = layout_rng.uniform(*config.object_speed_range)
        direction = np.array([np.cos(heading), np.sin(heading)])
        if pair_rng is not None:
            # contiguous frames: same layout, object advanced along its heading
            xy = xy + direction * speed * pair_rng.uniform(0.0, 1.2)
        velocity = (float(direction[0] * speed), float(direction[1] * speed), 0.0)
        objects.append(
            ObjectSpec(
                center=(float(xy[0]), float(xy[1]), size[2] / 2),
                size=size,
                yaw=float(heading),
                velocity=velocity,
            )
        )
    return objects


def _visible(points: np.ndarray, normals: np.ndarray, occluders: List[_Box], own: np.ndarray) -> np.ndarray:
    facing = np.einsum("ij,ij->i", normals, points - SENSOR_ORIGIN) < 0.0
    keep = facing.copy()
    for index, box in enumerate(occluders):
        others = own != index
        hits = np.zeros(len(points), dtype=bool)
        hits[others] = box.segment_hits(SENSOR_ORIGIN, points[others])
        keep &= ~hits
    return keep


def generate_scene(config: SceneConfig) -> SceneSample:
    """
    Generate one synthetic frame pair.

    Args:
        config: Scene parameters; ``seed`` fully determines the output.

    Returns:
        SceneSample in the ego-compensated frame, both clouds inside the area.

    Raises:
        EmptyCloudError: if the configuration yields no points at time t.
    """
    pair_rng = np.random.default_rng(config.seed)
    contiguous = config.layout_seed is not None
    layout_rng = np.random.default_rng(config.layout_seed) if contiguous else pair_rng

    structures = _build_structures(config, layout_rng)
    if config.objects is not None:
        specs = list(config.objects)
    else:
        specs = _random_objects(config, layout_rng, pair_rng if contiguous else None)

    boxes_t, motions = [], []
    for spec in specs:
        box = _Box(np.array(spec.center), np.array(spec.size), spec.yaw)
        motion = RigidMotion.about_center(
            box.center, spec.yaw_rate * config.dt_seconds, np.array(spec.velocity) * config.dt_seconds
        )
        boxes_t.append(box)
        motions.append(motion)
    boxes_t1 = [
        _Box(motion.apply(box.center[None, :])[0], box.size, box.yaw + spec.yaw_rate * config.dt_seconds)
        for box, motion, spec in zip(boxes_t, motions, specs)
    ]

    def sample_frame(boxes: List[_Box]):
        chunks, normals, owner = [], [], []
        if structures and config.n_background_points:
            per_structure = np.full(len(structures), config.n_background_points // len(structures))
            per_structure[: config.n_background_points % len(structures)] += 1
            for structure, count in zip(structures, per_structure):
                pts, nrm = structure.sample_surface(pair_rng, int(count))
                chunks.append(pts)
                normals.append(nrm)
                owner.append(np.full(len(pts), -1))
        for index, box in enumerate(boxes):
            pts, nrm = box.sample_surface(pair_rng, config.n_points_per_object)
            chunks.append(pts)
            normals.append(nrm)
            owner.append(np.full(len(pts), index))
        if not chunks:
            return np.zeros((0, 3)), np.zeros(0, dtype=int)
        points, owner_ids = np.concatenate(chunks), np.concatenate(owner)
        if config.occlusion_enabled:
            keep = _visible(points, np.concatenate(normals), boxes, owner_ids)
            points, owner_ids = points[keep], owner_ids[keep]
        return points, owner_ids

    points_t, owner_t = sample_frame(boxes_t)
    points_t1, _ = sample_frame(boxes_t1)

    flow = np.zeros_like(points_t)
    for index, motion in enumerate(motions):
        on_object = owner_t == index
        flow[on_object] = motion.apply(points_t[on_object]) - points_t[on_object]

    if config.lidar_noise_sigma > 0 and len(points_t1):
        points_t1 = points_t1 + pair_rng.normal(0.0, config.lidar_noise_sigma, size=points_t1.shape)

    keep_t = in_area_mask(points_t, config.area_half_extent)
    keep_t1 = in_area_mask(points_t1, config.area_half_extent)
    if not keep_t.any():
        raise EmptyCloudError(f"scene config with seed {config.seed} yields an empty cloud_t")

    classes = np.where(owner_t >= 0, PointClass.FOREGROUND, PointClass.BACKGROUND).astype(np.uint8)
    meta = {
        "seed": config.seed,
        "layout_seed": config.layout_seed,
        "structures": [structure.describe() for structure in structures],
        "objects": [
            {**spec.model_dump(), "motion": motion.to_dict()} for spec, motion in zip(specs, motions)
        ],
    }
    logger.debug(
        "Generated scene seed=%d: %d/%d points, %d objects",
        config.seed, int(keep_t.sum()), int(keep_t1.sum()), len(specs),
    )
    return SceneSample(
        cloud_t=PointCloud(points_t[keep_t], frame_id=0),
        cloud_t1=PointCloud(points_t1[keep_t1], frame_id=1),
        gt_flow=FlowField(flow[keep_t]),
        classes=classes[keep_t],
        dt_seconds=config.dt_seconds,
        meta=meta,
    )
