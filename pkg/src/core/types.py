"""
Domain types shared by every flowdistill module.

Point clouds and flow fields are thin immutable wrappers around ``(N, 3)`` float64
numpy arrays. Index ``i`` of a cloud is the identity of that point in every flow
field, class array or pseudo-label aligned to it.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from src.config import settings
from src.core.errors import EmptyCloudError, ShapeError


def _frozen_points(values: Any, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.size == 0:
        array = array.reshape(0, 3)
    if array.ndim != 2 or array.shape[1] != 3:
        raise ShapeError(f"{name} must have shape (N, 3), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite coordinates")
    array.setflags(write=False)
    return array


class Point3(NamedTuple):
    """A single point in the ego frame, meters."""

    x: float
    y: float
    z: float


class PointClass(IntEnum):
    BACKGROUND = 0
    FOREGROUND = 1


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3-D points in the ego-compensated frame."""

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_points(self.points, "PointCloud.points"))

    def __len__(self) -> int:
        return self.points.shape[0]

    def require_non_empty(self, what: str = "point cloud") -> "PointCloud":
        if len(self) == 0:
            raise EmptyCloudError(f"{what} is empty")
        return self

    def select(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[mask], self.frame_id)


@dataclass(frozen=True)
class FlowField:
    """Per-point displacement vectors (meters per frame interval) aligned to a source cloud."""

    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", _frozen_points(self.vectors, "FlowField.vectors"))

    @property
    def source_len(self) -> int:
        return self.vectors.shape[0]

    def __len__(self) -> int:
        return self.source_len

    @classmethod
    def zeros(cls, n: int) -> "FlowField":
        return cls(np.zeros((n, 3)))

    def check_aligned(self, cloud: PointCloud) -> None:
        if self.source_len != len(cloud):
            raise ShapeError(
                f"flow has {self.source_len} vectors but cloud has {len(cloud)} points"
            )


@dataclass(frozen=True)
class RigidMotion:
    """Rotation followed by translation: p -> R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(3)
        if rotation.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got {rotation.shape}")
        if not np.allclose(rotation.T @ rotation, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1")
        rotation.setflags(write=False)
        translation.setflags(write=False)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def about_center(cls, center: np.ndarray, yaw: float, translation: np.ndarray) -> "RigidMotion":
        """Yaw by ``yaw`` radians about the vertical axis through ``center``, then translate."""
        c, s = np.cos(yaw), np.sin(yaw)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        center = np.asarray(center, dtype=np.float64)
        return cls(rotation, center + np.asarray(translation, dtype=np.float64) - rotation @ center)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_dict(self) -> Dict[str, Any]:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}


@dataclass(frozen=True)
class SceneSample:
    """A frame pair with ground-truth flow and per-point classes aligned to ``cloud_t``."""

    cloud_t: PointCloud
    cloud_t1: PointCloud
    gt_flow: FlowField
    classes: np.ndarray
    dt_seconds: float = settings.DT_SECONDS
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        classes = np.array(self.classes, dtype=np.uint8).reshape(-1)
        if classes.shape[0] != len(self.cloud_t):
            raise ShapeError(
                f"classes has {classes.shape[0]} entries but cloud_t has {len(self.cloud_t)} points"
            )
        if np.any(classes > PointClass.FOREGROUND):
            raise ValueError("classes must be 0 (background) or 1 (foreground)")
        self.gt_flow.check_aligned(self.cloud_t)
        if self.dt_seconds <= 0:
            raise ValueError("dt_seconds must be positive")
        classes.setflags(write=False)
        object.__setattr__(self, "classes", classes)

    @property
    def foreground_mask(self) -> np.ndarray:
        return self.classes == PointClass.FOREGROUND


class ObjectSpec(BaseModel):
    """An explicitly placed rigid box object."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    center: Tuple[float, float, float]
    size: Tuple[float, float, float] = (4.5, 2.0, 1.6)
    yaw: float = 0.0
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # m/s
    yaw_rate: float = 0.0  # rad/s

    @field_validator("size")
    @classmethod
    def _positive_size(cls, value):
        if min(value) <= 0:
            raise ValueError("object size must be positive")
        return value


class SceneConfig(BaseModel):
    """Parameters of the synthetic rigid-scene generator."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    area_half_extent: float = settings.TRAIN_HALF_EXTENT
    n_background_points: int = 4000
    n_structures: int = 12
    n_objects: int = 4
    n_points_per_object: int = 400
    object_size_range: Tuple[float, float] = (3.0, 5.0)
    object_speed_range: Tuple[float, float] = (0.0, 15.0)
    objects: Optional[Tuple[ObjectSpec, ...]] = None
    lidar_noise_sigma: float = 0.01
    occlusion_enabled: bool = False
    dt_seconds: float = settings.DT_SECONDS
    seed: int = 0
    layout_seed: Optional[int] = None

    @field_validator("area_half_extent", "dt_seconds")
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("n_background_points", "n_structures", "n_objects", "n_points_per_object")
    @classmethod
    def _non_negative_count(cls, value):
        if value < 0:
            raise ValueError("counts must be >= 0")
        return value

    @field_validator("lidar_noise_sigma")
    @classmethod
    def _non_negative_noise(cls, value):
        if value < 0:
            raise ValueError("noise sigma must be >= 0")
        return value

    @model_validator(mode="after")
    def _ranges(self):
        low, high = self.object_speed_range
        if low < 0 or high < low:
            raise ValueError("object_speed_range must be non-negative and ordered")
        low, high = self.object_size_range
        if low <= 0 or high < low:
            raise ValueError("object_size_range must be positive and ordered")
        return self


def apply_flow(cloud: PointCloud, flow: FlowField) -> PointCloud:
    """Warp a cloud by its aligned flow; point order is preserved."""
    flow.check_aligned(cloud)
    return PointCloud(cloud.points + flow.vectors, cloud.frame_id)


def in_area_mask(points: np.ndarray, half_extent: float) -> np.ndarray:
    return (np.abs(points[:, 0]) <= half_extent) & (np.abs(points[:, 1]) <= half_extent)


def crop_to_area(sample: SceneSample, half_extent: float) -> SceneSample:
    """Keep the points of both frames inside the axis-aligned BEV box of the given half extent."""
    if not half_extent > 0:
        raise ValueError(f"half_extent must be > 0, got {half_extent}")
    keep_t = in_area_mask(sample.cloud_t.points, half_extent)
    keep_t1 = in_area_mask(sample.cloud_t1.points, half_extent)
    if not keep_t.any():
        raise EmptyCloudError(f"cropping to half extent {half_extent} m empties cloud_t")
    return SceneSample(
        cloud_t=sample.cloud_t.select(keep_t),
        cloud_t1=sample.cloud_t1.select(keep_t1),
        gt_flow=FlowField(sample.gt_flow.vectors[keep_t]),
        classes=sample.classes[keep_t],
        dt_seconds=sample.dt_seconds,
        meta=sample.meta,
    )


def remove_below_z(cloud: PointCloud, z_min: float) -> PointCloud:
    """Drop points below ``z_min``; a stand-in for map-based ground removal on external data."""
    return cloud.select(cloud.points[:, 2] >= z_min)


@dataclass(frozen=True)
class PseudoLabel:
    """Teacher-produced flow for a frame pair with provenance."""

    flow: FlowField
    teacher_name: str
    final_loss: float = 0.0
    iters_run: int = 0
    wall_time_ms: int = 0

    def __post_init__(self):
        if not self.final_loss >= 0:
            raise ValueError(f"final_loss must be >= 0, got {self.final_loss}")
