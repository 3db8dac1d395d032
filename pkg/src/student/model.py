"""
Feedforward student: pillar embedding, U-Net backbone and a per-point flow decoder.
"""

import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from src.config import settings
from src.core.errors import ConfigMismatchError, FormatError
from src.core.types import FlowField, PointCloud
from src.nn import autodiff as ad
from src.nn.autodiff import Tensor
from src.nn.checkpoint import load_checkpoint, save_checkpoint
from src.nn.layers import Activation, Mlp, Module
from src.student.pillars import POINT_FEATURES, PillarConfig, pillarize
from src.student.unet import UNet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SIDECAR_KIND = "flowdistill-student"


class StudentModel(Module):
    """
    Maps a frame pair to flow for every point of the first frame.

    The decoder sees each point's coordinates concatenated with the backbone feature of
    the pillar it falls in.
    """

    def __init__(self, config: PillarConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        e = config.embed_dim
        self.embed = self.add_module("embed", Mlp((POINT_FEATURES, e, e), Activation.RELU, rng))
        self.unet = self.add_module("unet", UNet(config.channel_widths, rng))
        self.decode = self.add_module(
            "decode", Mlp((3 + e, config.decode_hidden, 3), Activation.RELU, rng)
        )

    def __call__(self, cloud_t: PointCloud, cloud_t1: PointCloud) -> Tensor:
        cloud_t.require_non_empty("cloud_t")
        image_t = pillarize(cloud_t, self.config, self.embed)
        image_t1 = pillarize(cloud_t1, self.config, self.embed)
        features = self.unet(image_t.features, image_t1.features)
        channels, height, width = features.shape
        per_cell = ad.reshape(ad.transpose(features, (1, 2, 0)), (height * width, channels))
        per_point = ad.gather(per_cell, image_t.cell_ids)
        return self.decode(ad.concat([Tensor(cloud_t.points), per_point], axis=1))


def create_student_model(config: PillarConfig = None, seed: int = 0) -> StudentModel:
    """
    Factory function to create a seeded student.

    Args:
        config: Pillar grid and backbone size (full-scale defaults when omitted)
        seed: Parameter initialization seed

    Returns:
        StudentModel instance
    """
    return StudentModel(config or PillarConfig(), seed=seed)


def ensure_area_matches(model: StudentModel, half_extent: float) -> None:
    """Reject data generated for a different area than the model's grid."""
    if not np.isclose(model.config.area_half_extent, half_extent, rtol=0.0, atol=1e-9):
        raise ConfigMismatchError(
            f"model grid covers +/-{model.config.area_half_extent} m but the dataset "
            f"was generated for +/-{half_extent} m"
        )


def student_forward(model: StudentModel, cloud_t: PointCloud, cloud_t1: PointCloud) -> FlowField:
    """
    Predict flow for ``cloud_t`` as a plain, detached flow field.

    Raises:
        ConfigMismatchError: if the clouds reach outside the model's grid
    """
    return FlowField(model(cloud_t, cloud_t1).data)


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def save_student(model: StudentModel, path: PathLike) -> Path:
    """Write the ``ZFCK`` checkpoint and its JSON config sidecar."""
    path = save_checkpoint(model.state_dict(), path)
    sidecar = {
        "kind": SIDECAR_KIND,
        "pillar": model.config.model_dump(mode="json"),
        "seed": model.seed,
        "tool_version": settings.TOOL_VERSION,
    }
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    logger.info("Saved student checkpoint to %s", path)
    return path


def load_student(path: PathLike) -> StudentModel:
    path = Path(path)
    meta_path = sidecar_path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    if not meta_path.exists():
        raise FileNotFoundError(f"checkpoint sidecar not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("kind") != SIDECAR_KIND:
        raise FormatError(f"{meta_path} does not describe a student checkpoint")
    model = StudentModel(PillarConfig(**meta["pillar"]), seed=int(meta.get("seed", 0)))
    model.load_state_dict(load_checkpoint(path))
    return model
