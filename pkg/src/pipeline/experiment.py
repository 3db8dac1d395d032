"""
Experiment configuration and the stable hashes that key cached pipeline stages.

Stage hashes are chained: the label stage hash covers the dataset hash, the training
hash covers the label hash, and so on, so changing a field invalidates the stage that
consumes it and every stage after it. Fields that do not affect results
(``name``, ``jobs``, ``output_dir``) are left out.
"""

import hashlib
import json
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config import settings
from src.core.types import SceneConfig
from src.student.pillars import PillarConfig
from src.student.trainer import TrainConfig
from src.teacher.nsfp import TeacherConfig
from src.teacher.pseudolabel import TeacherKind

# Train pair seeds are seed + index; val pair seeds start at seed + VAL_SEED_OFFSET.
VAL_SEED_OFFSET = 1_000_000
LAYOUT_SEED_OFFSET = 2_000_000


class DiversityMode(str, Enum):
    CONTIGUOUS = "contiguous"
    DIVERSE = "diverse"


class ExperimentArm(str, Enum):
    DISTILL = "distill"
    ZERO_FLOW = "zero_flow"
    TEACHER = "teacher"


def stable_hash(payload: Any) -> str:
    """SHA-256 of canonical JSON (sorted keys, no whitespace)."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ExperimentConfig(BaseModel):
    """Everything one run of the distillation pipeline depends on."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "experiment"
    arm: ExperimentArm = ExperimentArm.DISTILL
    scene: SceneConfig = Field(default_factory=SceneConfig)
    train_n: int = 200
    val_n: int = 40
    diversity: DiversityMode = DiversityMode.DIVERSE
    pairs_per_layout: int = 12
    teacher: TeacherKind = TeacherKind.NSFP
    teacher_config: TeacherConfig = Field(default_factory=TeacherConfig)
    pillar: PillarConfig = Field(default_factory=PillarConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval_half_extent: float = settings.EVAL_HALF_EXTENT
    seed: int = 0
    jobs: int = 1
    output_dir: Optional[str] = None

    @field_validator("train_n", "val_n", "pairs_per_layout", "jobs")
    @classmethod
    def _positive_count(cls, value):
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @model_validator(mode="after")
    def _consistent(self):
        if self.train_n > VAL_SEED_OFFSET:
            raise ValueError(f"train_n must be <= {VAL_SEED_OFFSET} to keep train and val seeds disjoint")
        if abs(self.pillar.area_half_extent - self.scene.area_half_extent) > 1e-9:
            raise ValueError(
                f"pillar.area_half_extent ({self.pillar.area_half_extent}) must equal "
                f"scene.area_half_extent ({self.scene.area_half_extent})"
            )
        if not 0 < self.eval_half_extent <= self.scene.area_half_extent:
            raise ValueError(
                f"eval_half_extent must lie in (0, {self.scene.area_half_extent}], got {self.eval_half_extent}"
            )
        return self

    @classmethod
    def desk_scale(cls, **overrides) -> "ExperimentConfig":
        """Small-area preset sized for CPU runs of a few minutes per stage."""
        values: Dict[str, Any] = {
            "scene": SceneConfig(
                area_half_extent=settings.DESK_HALF_EXTENT,
                n_background_points=1500,
                n_structures=6,
                n_objects=3,
                n_points_per_object=250,
            ),
            "pillar": PillarConfig.desk_scale(),
            "train": TrainConfig.desk_scale(),
            "eval_half_extent": settings.DESK_EVAL_HALF_EXTENT,
        }
        values.update(overrides)
        return cls(**values)

    def pair_seed(self, split: str, index: int) -> int:
        base = self.seed if split == "train" else self.seed + VAL_SEED_OFFSET
        return base + index

    def layout_seed(self, split: str, index: int) -> Optional[int]:
        """Shared layout of a contiguous run; ``None`` (fresh layout per pair) when diverse."""
        if self.diversity is DiversityMode.DIVERSE:
            return None
        split_offset = 0 if split == "train" else VAL_SEED_OFFSET
        return self.seed + LAYOUT_SEED_OFFSET + split_offset + index // self.pairs_per_layout

    def scene_for(self, split: str, index: int) -> SceneConfig:
        return self.scene.model_copy(update={
            "seed": self.pair_seed(split, index),
            "layout_seed": self.layout_seed(split, index),
        })

    def _dump(self, *fields: str) -> Dict[str, Any]:
        return self.model_dump(mode="json", include=set(fields))

    def val_split_hash(self) -> str:
        return stable_hash({
            "scene": self._dump("scene", "diversity", "pairs_per_layout", "seed", "val_n"),
            "version": settings.SCENE_VERSION,
        })

    def dataset_hash(self) -> str:
        return stable_hash({
            "fields": self._dump("scene", "train_n", "val_n", "diversity", "pairs_per_layout", "seed"),
            "version": settings.SCENE_VERSION,
        })

    def labels_hash(self) -> str:
        return stable_hash({
            "dataset": self.dataset_hash(),
            "fields": self._dump("teacher", "teacher_config"),
            "version": settings.LABEL_VERSION,
        })

    def train_hash(self, train_limit: Optional[int] = None) -> str:
        return stable_hash({
            "labels": self.labels_hash(),
            "fields": self._dump("pillar", "train", "eval_half_extent"),
            "train_limit": train_limit,
            "version": settings.CHECKPOINT_VERSION,
        })

    def eval_hash(self, train_limit: Optional[int] = None) -> str:
        upstream = {
            ExperimentArm.DISTILL: lambda: self.train_hash(train_limit),
            ExperimentArm.TEACHER: lambda: stable_hash({"dataset": self.dataset_hash(),
                                                        "fields": self._dump("teacher", "teacher_config")}),
            ExperimentArm.ZERO_FLOW: self.dataset_hash,
        }[self.arm]()
        return stable_hash({
            "upstream": upstream,
            "fields": self._dump("arm", "eval_half_extent"),
        })

    def config_hash(self) -> str:
        return stable_hash(self.model_dump(mode="json", exclude={"name", "jobs", "output_dir"}))
