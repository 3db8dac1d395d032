"""
Unit tests for the student training loop.
"""

import numpy as np
import pandas as pd
import pytest

from src.core.errors import DivergenceError, ShapeError
from src.core.types import FlowField, PointCloud, PseudoLabel, SceneSample
from src.student.model import StudentModel
from src.student.trainer import (
    EPOCH_LOG_COLUMNS,
    TrainConfig,
    load_training_pairs,
    train_student,
    write_epoch_log,
)
from src.teacher.pseudolabel import pseudolabel_dataset


def make_pair(seed, shift=(0.8, 0.0, 0.0)):
    rng = np.random.default_rng(seed)
    points = rng.uniform(-2.3, 2.3, size=(30, 3))
    flow = FlowField(np.tile(shift, (30, 1)))
    sample = SceneSample(
        PointCloud(points), PointCloud(points + flow.vectors, frame_id=1), flow, classes=np.ones(30),
    )
    return sample, PseudoLabel(flow=flow, teacher_name="gt")


@pytest.fixture
def pairs():
    return [make_pair(seed) for seed in range(3)]


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lr, cfg.batch_size, cfg.epochs) == (2e-6, 64, 50)

    def test_desk_scale(self):
        cfg = TrainConfig.desk_scale(epochs=3)
        assert (cfg.lr, cfg.batch_size, cfg.epochs) == (1e-3, 8, 3)

    @pytest.mark.parametrize("overrides", [{"lr": 0.0}, {"batch_size": 0}, {"epochs": -1}])
    def test_rejects_invalid(self, overrides):
        with pytest.raises(ValueError):
            TrainConfig(**overrides)


class TestTrainStudent:
    """Test suite for train_student."""

    def test_zero_epochs_leaves_model_untouched(self, tiny_pillar_config, pairs):
        model = StudentModel(tiny_pillar_config, seed=1)
        before = model.state_dict()
        result = train_student(model, pairs, TrainConfig(epochs=0))

        assert result.epoch_log.empty
        assert list(result.epoch_log.columns) == EPOCH_LOG_COLUMNS
        for name, values in model.state_dict().items():
            np.testing.assert_array_equal(values, before[name])

    def test_loss_decreases(self, tiny_pillar_config):
        model = StudentModel(tiny_pillar_config, seed=1)
        result = train_student(model, [make_pair(0)], TrainConfig(lr=1e-2, batch_size=1, epochs=40))
        assert min(result.batch_losses[-5:]) < 0.5 * result.batch_losses[0]

    def test_deterministic(self, tiny_pillar_config, pairs):
        cfg = TrainConfig(lr=1e-3, batch_size=2, epochs=2, seed=3)
        a = train_student(StudentModel(tiny_pillar_config, seed=1), pairs, cfg)
        b = train_student(StudentModel(tiny_pillar_config, seed=1), pairs, cfg)
        assert a.batch_losses == b.batch_losses
        for name, values in a.model.state_dict().items():
            np.testing.assert_array_equal(values, b.model.state_dict()[name])

    def test_epoch_log_with_validation(self, tiny_pillar_config, pairs):
        epochs = []
        result = train_student(
            StudentModel(tiny_pillar_config), pairs, TrainConfig(lr=1e-3, batch_size=2, epochs=2),
            val_samples=[pairs[0][0]], eval_half_extent=2.0,
            on_epoch=lambda epoch, total: epochs.append((epoch, total)),
        )
        log = result.epoch_log

        assert list(log.columns) == EPOCH_LOG_COLUMNS
        assert log["epoch"].tolist() == [1, 2]
        assert log["threeway_epe"].notna().all()
        # every validation point is dynamic foreground
        assert log["bg"].isna().all()
        assert epochs == [(1, 2), (2, 2)]
        assert len(result.batch_losses) == 4

    def test_without_validation_metrics_are_nan(self, tiny_pillar_config, pairs):
        result = train_student(StudentModel(tiny_pillar_config), pairs, TrainConfig(lr=1e-3, epochs=1))
        assert result.epoch_log["threeway_epe"].isna().all()
        assert result.epoch_log["train_loss"].iloc[0] > 0

    def test_misaligned_label(self, tiny_pillar_config, pairs):
        sample, _ = pairs[0]
        bad = PseudoLabel(flow=FlowField.zeros(5), teacher_name="gt")
        with pytest.raises(ShapeError):
            train_student(StudentModel(tiny_pillar_config), [(sample, bad)], TrainConfig(epochs=1))

    def test_non_finite_loss(self, tiny_pillar_config, pairs, monkeypatch):
        from src.nn.autodiff import Tensor

        monkeypatch.setattr("src.student.trainer.student_loss", lambda *a: Tensor(np.array(np.inf)))
        with pytest.raises(DivergenceError) as exc_info:
            train_student(StudentModel(tiny_pillar_config), pairs, TrainConfig(epochs=1))
        assert (exc_info.value.epoch, exc_info.value.batch) == (1, 1)

    def test_no_pairs(self, tiny_pillar_config):
        with pytest.raises(ValueError):
            train_student(StudentModel(tiny_pillar_config), [], TrainConfig(epochs=1))


class TestTrainingPairs:
    def test_load_pairs_from_dataset(self, tiny_dataset):
        summary = pseudolabel_dataset(tiny_dataset, "gt")
        pairs = load_training_pairs(tiny_dataset, summary.labels_dir, indices=[1, 3])

        assert len(pairs) == 2
        for sample, label in pairs:
            assert len(label.flow) == len(sample.cloud_t)

    def test_missing_labels(self, tiny_dataset, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_training_pairs(tiny_dataset, tmp_path / "no-labels")

    def test_write_epoch_log(self, tmp_path):
        log = pd.DataFrame([{"epoch": 1, "threeway_epe": 0.5, "fg_dynamic": 0.9, "fg_static": 0.4,
                             "bg": 0.2, "train_loss": 1.25}], columns=EPOCH_LOG_COLUMNS)
        path = write_epoch_log(log, tmp_path / "logs" / "epochs.csv")
        assert path.read_text().splitlines()[0] == ",".join(EPOCH_LOG_COLUMNS)
