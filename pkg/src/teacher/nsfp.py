"""
Neural scene flow prior: test-time optimization of two coordinate MLPs.

The forward network maps each point of P_t to its flow f+; the backward network maps
the warped points back, f-. Both are trained jointly with Adam on

    CD(P_t + f+, P_{t+1}) + CD(P_t + f+ + f-, P_t)

using the truncated Chamfer distance. The returned flow is the best iterate seen,
where the zero-flow solution is evaluated first and seeds the best loss.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from src.config import settings
from src.core.errors import DivergenceError
from src.core.types import FlowField, PointCloud, PseudoLabel
from src.neighbors.chamfer import ChamferConfig, truncated_chamfer
from src.neighbors.kdtree import KdTree
from src.nn.autodiff import Tensor
from src.nn.layers import Activation, Mlp
from src.nn.optim import Adam

logger = logging.getLogger(__name__)


class TeacherConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    mlp_widths: Tuple[int, ...] = settings.TEACHER_CONFIG["mlp_widths"]
    activation: Activation = Activation(settings.TEACHER_CONFIG["activation"])
    max_iters: int = settings.TEACHER_CONFIG["max_iters"]
    lr: float = settings.TEACHER_CONFIG["lr"]
    early_stop_patience: int = settings.TEACHER_CONFIG["early_stop_patience"]
    early_stop_min_delta: float = settings.TEACHER_CONFIG["early_stop_min_delta"]
    chamfer: ChamferConfig = ChamferConfig()
    seed: int = 0

    @field_validator("mlp_widths")
    @classmethod
    def _coordinate_widths(cls, value):
        if len(value) < 2 or value[0] != 3 or value[-1] != 3:
            raise ValueError("mlp_widths must start and end at 3")
        return value

    @field_validator("max_iters", "early_stop_patience")
    @classmethod
    def _at_least_one(cls, value):
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("lr")
    @classmethod
    def _positive_lr(cls, value):
        if value <= 0:
            raise ValueError("lr must be > 0")
        return value

    @classmethod
    def full_scale(cls, **overrides) -> "TeacherConfig":
        """Eight hidden layers of width 128."""
        return cls(mlp_widths=(3,) + (128,) * 8 + (3,), **overrides)


@dataclass
class NsfpResult:
    label: PseudoLabel
    cycle_loss: float
    best_iter: int
    loss_history: List[float] = field(default_factory=list)


class NeuralSceneFlowPrior:
    """
    Per-pair flow optimizer.

    Each call to ``fit`` re-initializes both networks from ``cfg.seed``, so results
    depend only on the inputs and the configuration.
    """

    def __init__(self, cfg: TeacherConfig):
        self.cfg = cfg

    def _joint_loss(self, points, forward_net, backward_net, tree_t1, tree_t, target_t1) -> Tuple[Tensor, Tensor, Tensor]:
        x = Tensor(points)
        flow_forward = forward_net(x)
        warped = x + flow_forward
        cycled = warped + backward_net(warped)
        forward_term = truncated_chamfer(warped, target_t1, self.cfg.chamfer, tree_t1)
        cycle_term = truncated_chamfer(cycled, points, self.cfg.chamfer, tree_t)
        return forward_term + cycle_term, cycle_term, flow_forward

    def fit(self, cloud_t: PointCloud, cloud_t1: PointCloud) -> NsfpResult:
        """
        Optimize flow for one frame pair.

        Args:
            cloud_t: Source cloud P_t
            cloud_t1: Target cloud P_{t+1}

        Returns:
            NsfpResult with the best-iterate pseudo-label and the cycle term at that iterate

        Raises:
            EmptyCloudError: if either cloud is empty
            DivergenceError: if the loss becomes non-finite
        """
        cloud_t.require_non_empty("cloud_t")
        cloud_t1.require_non_empty("cloud_t1")
        cfg = self.cfg
        start = time.perf_counter()
        rng = np.random.default_rng(cfg.seed)
        forward_net = Mlp(cfg.mlp_widths, cfg.activation, rng)
        backward_net = Mlp(cfg.mlp_widths, cfg.activation, rng)
        params = {f"forward.{k}": v for k, v in forward_net.named_parameters().items()}
        params.update({f"backward.{k}": v for k, v in backward_net.named_parameters().items()})
        optimizer = Adam(params, lr=cfg.lr)

        source, target = cloud_t.points, cloud_t1.points
        tree_t1, tree_t = KdTree(target), KdTree(source)

        best_loss = truncated_chamfer(source, target, cfg.chamfer, tree_t1).item()
        best_flow = np.zeros_like(source)
        best_cycle, best_iter = 0.0, 0
        reference = np.inf
        stale, iters_run = 0, 0
        history = []

        for iteration in range(1, cfg.max_iters + 1):
            optimizer.zero_grad()
            loss, cycle_term, flow_forward = self._joint_loss(
                source, forward_net, backward_net, tree_t1, tree_t, target
            )
            value = loss.item()
            iters_run = iteration
            if not np.isfinite(value):
                raise DivergenceError("neural prior loss is not finite", iteration=iteration)
            history.append(value)
            if value < best_loss:
                best_loss, best_flow = value, flow_forward.data.copy()
                best_cycle, best_iter = cycle_term.item(), iteration
            if value < reference - cfg.early_stop_min_delta:
                reference, stale = value, 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
            loss.backward()
            optimizer.step()

        wall_time_ms = int((time.perf_counter() - start) * 1000)
        logger.debug(
            "NSFP finished after %d iterations (best %d): loss %.6f, cycle %.6f, %d ms",
            iters_run, best_iter, best_loss, best_cycle, wall_time_ms,
        )
        label = PseudoLabel(
            flow=FlowField(best_flow),
            teacher_name="nsfp",
            final_loss=max(best_loss, 0.0),
            iters_run=iters_run,
            wall_time_ms=wall_time_ms,
        )
        return NsfpResult(label=label, cycle_loss=best_cycle, best_iter=best_iter, loss_history=history)


def nsfp_optimize(cloud_t: PointCloud, cloud_t1: PointCloud, cfg: TeacherConfig) -> PseudoLabel:
    return NeuralSceneFlowPrior(cfg).fit(cloud_t, cloud_t1).label
