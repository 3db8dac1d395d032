"""
Distillation training loop for the student.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from src.config import settings
from src.core import dataset_io
from src.core.errors import DivergenceError, ShapeError
from src.core.types import PseudoLabel, SceneSample
from src.eval.metrics import evaluate_estimator
from src.nn.optim import Adam
from src.student.loss import WeightScheme, student_loss, weights
from src.student.model import StudentModel, student_forward
from src.teacher.pseudolabel import load_labels

logger = logging.getLogger(__name__)

EPOCH_LOG_COLUMNS = ["epoch", "threeway_epe", "fg_dynamic", "fg_static", "bg", "train_loss"]

TrainingPair = Tuple[SceneSample, PseudoLabel]
EpochCallback = Callable[[int, int], None]


class TrainConfig(BaseModel):
    """Optimization hyperparameters of the student."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = settings.STUDENT_LR
    batch_size: int = settings.STUDENT_BATCH_SIZE
    epochs: int = settings.STUDENT_EPOCHS
    scheme: WeightScheme = WeightScheme.UNIFORM
    seed: int = 0

    @field_validator("lr")
    @classmethod
    def _positive_lr(cls, value):
        if value <= 0:
            raise ValueError("lr must be > 0")
        return value

    @field_validator("batch_size")
    @classmethod
    def _positive_batch(cls, value):
        if value < 1:
            raise ValueError("batch_size must be >= 1")
        return value

    @field_validator("epochs")
    @classmethod
    def _non_negative_epochs(cls, value):
        if value < 0:
            raise ValueError("epochs must be >= 0")
        return value

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        values = {"lr": 1e-3, "batch_size": 8, "epochs": 30}
        values.update(overrides)
        return cls(**values)


@dataclass
class TrainResult:
    model: StudentModel
    epoch_log: pd.DataFrame
    batch_losses: List[float]


def _sample_weights(sample: SceneSample, label: PseudoLabel, scheme: WeightScheme) -> np.ndarray:
    return weights(scheme, len(sample.cloud_t), sample.classes, label.flow, sample.dt_seconds)


def train_student(
    model: StudentModel,
    pairs: Sequence[TrainingPair],
    cfg: TrainConfig,
    val_samples: Optional[Sequence[SceneSample]] = None,
    eval_half_extent: Optional[float] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainResult:
    """
    Fit ``model`` in place on (frame pair, pseudo-label) pairs.

    Each epoch visits the pairs in a seeded random order; the gradient of a batch is the
    mean of its per-pair gradients. After every epoch the model is scored on
    ``val_samples`` (when given) and a row is appended to the epoch log.

    Args:
        model: Student to train
        pairs: Training pairs; every label must align with its ``cloud_t``
        cfg: Hyperparameters
        val_samples: Held-out split for the per-epoch Threeway EPE
        eval_half_extent: Evaluation crop for the held-out split
        on_epoch: Called with ``(epoch, epochs)`` after each epoch

    Returns:
        TrainResult with the epoch log (columns ``EPOCH_LOG_COLUMNS``)

    Raises:
        DivergenceError: on a non-finite loss, with epoch and batch index
    """
    for sample, label in pairs:
        if len(label.flow) != len(sample.cloud_t):
            raise ShapeError(
                f"label has {len(label.flow)} vectors but its frame pair has {len(sample.cloud_t)} points"
            )
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.named_parameters(), lr=cfg.lr)
    point_weights = [_sample_weights(sample, label, cfg.scheme) for sample, label in pairs]
    rows, batch_losses = [], []

    if cfg.epochs and not pairs:
        raise ValueError("train_student needs at least one training pair")
    logger.info(
        "Training student on %d pairs for %d epochs (lr %g, batch %d, %s weights)",
        len(pairs), cfg.epochs, cfg.lr, cfg.batch_size, cfg.scheme.value,
    )
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(pairs))
        epoch_loss, epoch_count = 0.0, 0
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size), start=1):
            batch = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            batch_loss = 0.0
            for i in batch:
                sample, label = pairs[i]
                loss = student_loss(model(sample.cloud_t, sample.cloud_t1), label.flow, point_weights[i])
                value = loss.item()
                if not np.isfinite(value):
                    raise DivergenceError("student loss is not finite", epoch=epoch, batch=batch_index)
                loss.backward()
                batch_loss += value
            for param in model.parameters():
                if param.grad is not None:
                    param.grad = param.grad / len(batch)
            optimizer.step()
            batch_losses.append(batch_loss / len(batch))
            epoch_loss += batch_loss
            epoch_count += len(batch)

        row = {"epoch": epoch, "threeway_epe": np.nan, "fg_dynamic": np.nan,
               "fg_static": np.nan, "bg": np.nan, "train_loss": epoch_loss / epoch_count}
        if val_samples:
            report = evaluate_estimator(
                lambda s: student_forward(model, s.cloud_t, s.cloud_t1), val_samples, eval_half_extent
            )
            row.update(report.as_row())
        rows.append(row)
        logger.info(
            "Epoch %d/%d: train loss %.5f, val threeway EPE %.5f",
            epoch, cfg.epochs, row["train_loss"], row["threeway_epe"],
        )
        if on_epoch is not None:
            on_epoch(epoch, cfg.epochs)

    return TrainResult(model=model, epoch_log=pd.DataFrame(rows, columns=EPOCH_LOG_COLUMNS),
                       batch_losses=batch_losses)


def load_training_pairs(
    dataset_dir: Union[str, Path],
    labels_dir: Union[str, Path],
    indices: Optional[Sequence[int]] = None,
    split: str = "train",
) -> List[TrainingPair]:
    """
    Pair every frame pair of a split with its label file.

    Raises:
        FileNotFoundError: if any selected pair has no label
    """
    split_dir = Path(dataset_dir) / split
    if indices is None:
        indices = dataset_io.list_sample_indices(split_dir)
    labels = load_labels(labels_dir, list(indices))
    return [(dataset_io.load_sample(dataset_io.sample_stem(split_dir, i)), labels[i]) for i in indices]


def write_epoch_log(log: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    log.to_csv(path, index=False, float_format="%.6f")
    return path
