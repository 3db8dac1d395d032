"""
Per-point weighted endpoint loss for distillation.

    loss = (1 / |P_t|) * sum_p w(p) * ||pred(p) - label(p)||_2

with ``w`` from one of three schemes: uniform, semantic (background points down-weighted)
or speed-interpolated (slow points down-weighted by their label speed).
"""

from enum import Enum
from typing import Optional, Union

import numpy as np

from src.config import settings
from src.core.errors import ShapeError
from src.core.types import FlowField, PointClass
from src.nn import autodiff as ad
from src.nn.autodiff import Tensor

FlowLike = Union[FlowField, Tensor, np.ndarray]


class WeightScheme(str, Enum):
    UNIFORM = "uniform"
    SEMANTIC = "semantic"
    SPEED_INTERP = "speed_interp"


def speed_weight(speed: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Linear ramp ``1.8 s - 0.8`` clamped to [0.1, 1.0].

    The ramp reaches 0.1 at 0.5 m/s, so every speed below 0.4 m/s and up to 0.5 m/s
    gets the floor weight and every speed from 1.0 m/s gets full weight.
    """
    speed = np.asarray(speed, dtype=np.float64)
    ramp = np.clip(1.8 * speed - 0.8, settings.BACKGROUND_WEIGHT, 1.0)
    ramp = np.where(speed < settings.SPEED_WEIGHT_LOW, settings.BACKGROUND_WEIGHT, ramp)
    ramp = np.where(speed > settings.SPEED_WEIGHT_HIGH, 1.0, ramp)
    return float(ramp) if ramp.ndim == 0 else ramp


def weight(
    scheme: Union[str, WeightScheme],
    point_class: Optional[int] = None,
    label_flow: Optional[np.ndarray] = None,
    dt: float = settings.DT_SECONDS,
) -> float:
    """Weight of a single point."""
    scheme = WeightScheme(scheme)
    if scheme is WeightScheme.UNIFORM:
        return 1.0
    if scheme is WeightScheme.SEMANTIC:
        if point_class is None:
            raise ValueError("semantic weighting needs the point's class")
        return 1.0 if int(point_class) == PointClass.FOREGROUND else settings.BACKGROUND_WEIGHT
    if label_flow is None:
        raise ValueError("speed weighting needs the point's label flow")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return speed_weight(float(np.linalg.norm(label_flow)) / dt)


def weights(
    scheme: Union[str, WeightScheme],
    n_points: int,
    classes: Optional[np.ndarray] = None,
    label_flow: Optional[FlowLike] = None,
    dt: float = settings.DT_SECONDS,
) -> np.ndarray:
    """Vectorized ``weight`` over all points of a frame."""
    scheme = WeightScheme(scheme)
    if scheme is WeightScheme.UNIFORM:
        return np.ones(n_points)
    if scheme is WeightScheme.SEMANTIC:
        if classes is None:
            raise ValueError("semantic weighting needs per-point classes")
        classes = np.asarray(classes).reshape(-1)
        if classes.shape[0] != n_points:
            raise ShapeError(f"{classes.shape[0]} classes for {n_points} points")
        return np.where(classes == PointClass.FOREGROUND, 1.0, settings.BACKGROUND_WEIGHT)
    if label_flow is None:
        raise ValueError("speed weighting needs the label flow")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    vectors = _vectors(label_flow)
    if vectors.shape[0] != n_points:
        raise ShapeError(f"{vectors.shape[0]} label vectors for {n_points} points")
    return np.asarray(speed_weight(np.linalg.norm(vectors, axis=1) / dt), dtype=np.float64).reshape(-1)


def _vectors(flow: FlowLike) -> np.ndarray:
    if isinstance(flow, FlowField):
        return flow.vectors
    if isinstance(flow, Tensor):
        return flow.data
    return np.asarray(flow, dtype=np.float64)


def student_loss(pred: FlowLike, label: FlowLike, point_weights: Optional[np.ndarray] = None) -> Tensor:
    """
    Weighted mean of unsquared residual norms.

    Args:
        pred: Predicted flow; gradients flow through it when it is a Tensor
        label: Supervision flow (treated as a constant)
        point_weights: Per-point weights, uniform when omitted

    Returns:
        Scalar Tensor
    """
    pred_tensor = pred if isinstance(pred, Tensor) else Tensor(_vectors(pred))
    target = _vectors(label)
    if pred_tensor.shape != target.shape:
        raise ShapeError(f"prediction {pred_tensor.shape} and label {target.shape} are not aligned")
    if target.shape[0] == 0:
        raise ShapeError("student_loss needs at least one point")
    residual = ad.sub(pred_tensor, target)
    norms = ad.sqrt(ad.reduce_sum(ad.square(residual), axis=1))
    if point_weights is not None:
        point_weights = np.asarray(point_weights, dtype=np.float64).reshape(-1)
        if point_weights.shape[0] != target.shape[0]:
            raise ShapeError(f"{point_weights.shape[0]} weights for {target.shape[0]} points")
        norms = ad.mul(norms, point_weights)
    return ad.reduce_mean(norms)
