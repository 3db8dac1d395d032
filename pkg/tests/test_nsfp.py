"""
Unit tests for the neural scene flow prior teacher.
"""

import numpy as np
import pytest

from src.core.errors import DivergenceError, EmptyCloudError
from src.core.scene_generator import generate_scene
from src.core.types import PointCloud
from src.neighbors.chamfer import ChamferConfig, truncated_chamfer
from src.nn.autodiff import Tensor
from src.neighbors.kdtree import KdTree
from src.nn.layers import Activation, Mlp
from src.teacher.nsfp import NeuralSceneFlowPrior, TeacherConfig, nsfp_optimize
from tests.gradcheck import max_relative_error


@pytest.fixture
def fast_teacher():
    return TeacherConfig(mlp_widths=(3, 32, 32, 3), max_iters=60, lr=5e-3, early_stop_patience=60)


@pytest.fixture
def shifted_pair():
    rng = np.random.default_rng(2)
    points = rng.uniform(-2.0, 2.0, size=(120, 3))
    return PointCloud(points), PointCloud(points + np.array([0.4, 0.0, 0.0]), frame_id=1)


class TestTeacherConfig:
    def test_defaults(self):
        cfg = TeacherConfig()
        assert cfg.mlp_widths[0] == 3 and cfg.mlp_widths[-1] == 3
        assert cfg.chamfer.truncation_radius == 2.0

    def test_full_scale(self):
        assert TeacherConfig.full_scale().mlp_widths == (3,) + (128,) * 8 + (3,)

    @pytest.mark.parametrize("overrides", [
        {"mlp_widths": (2, 8, 3)},
        {"max_iters": 0},
        {"lr": 0.0},
        {"unknown": 1},
    ])
    def test_rejects_invalid(self, overrides):
        with pytest.raises(ValueError):
            TeacherConfig(**overrides)


class TestNeuralSceneFlowPrior:
    """Test suite for NeuralSceneFlowPrior.fit."""

    def test_never_worse_than_zero_flow(self, shifted_pair, fast_teacher):
        cloud_t, cloud_t1 = shifted_pair
        result = NeuralSceneFlowPrior(fast_teacher).fit(cloud_t, cloud_t1)
        zero_loss = truncated_chamfer(cloud_t.points, cloud_t1.points).item()

        assert result.label.final_loss <= zero_loss
        assert len(result.label.flow) == len(cloud_t)
        assert result.label.teacher_name == "nsfp"

    def test_loss_decreases(self, shifted_pair, fast_teacher):
        result = NeuralSceneFlowPrior(fast_teacher).fit(*shifted_pair)
        assert min(result.loss_history) < result.loss_history[0]

    def test_deterministic_for_seed(self, shifted_pair, fast_teacher):
        a = nsfp_optimize(*shifted_pair, fast_teacher)
        b = nsfp_optimize(*shifted_pair, fast_teacher)
        np.testing.assert_array_equal(a.flow.vectors, b.flow.vectors)

    def test_seed_changes_initialization(self, shifted_pair, fast_teacher):
        a = NeuralSceneFlowPrior(fast_teacher).fit(*shifted_pair)
        b = NeuralSceneFlowPrior(fast_teacher.model_copy(update={"seed": 9})).fit(*shifted_pair)
        assert a.loss_history[0] != b.loss_history[0]

    def test_early_stopping(self, shifted_pair):
        cfg = TeacherConfig(mlp_widths=(3, 8, 3), max_iters=500, lr=1e-9, early_stop_patience=5,
                            early_stop_min_delta=1.0)
        result = NeuralSceneFlowPrior(cfg).fit(*shifted_pair)
        assert result.label.iters_run == 6

    def test_iters_bounded(self, shifted_pair):
        cfg = TeacherConfig(mlp_widths=(3, 8, 3), max_iters=7)
        assert nsfp_optimize(*shifted_pair, cfg).iters_run == 7

    def test_identical_frames_keep_zero_flow(self, fast_teacher):
        points = np.random.default_rng(1).uniform(-2, 2, size=(60, 3))
        label = nsfp_optimize(PointCloud(points), PointCloud(points), fast_teacher)
        # zero flow already reaches loss 0; nothing can beat it
        assert np.all(label.flow.vectors == 0.0)
        assert label.final_loss == 0.0

    def test_divergence_raises(self, shifted_pair, fast_teacher, monkeypatch):
        monkeypatch.setattr("src.teacher.nsfp.truncated_chamfer", lambda *a, **k: Tensor(np.array(np.nan)))
        with pytest.raises(DivergenceError) as exc_info:
            nsfp_optimize(*shifted_pair, fast_teacher)
        assert exc_info.value.iteration == 1

    def test_empty_cloud(self, fast_teacher):
        with pytest.raises(EmptyCloudError):
            nsfp_optimize(PointCloud(np.zeros((0, 3))), PointCloud(np.ones((3, 3))), fast_teacher)

    def test_joint_loss_gradient(self):
        cfg = TeacherConfig(mlp_widths=(3, 6, 3), activation="sigmoid",
                            chamfer=ChamferConfig(truncation_radius=50.0))
        rng = np.random.default_rng(0)
        source = rng.uniform(-1.0, 1.0, size=(150, 3))
        target = source + np.array([0.3, -0.1, 0.0]) + rng.normal(0.0, 0.01, size=source.shape)
        prior = NeuralSceneFlowPrior(cfg)
        net_rng = np.random.default_rng(3)
        forward_net = Mlp(cfg.mlp_widths, Activation.SIGMOID, net_rng)
        backward_net = Mlp(cfg.mlp_widths, Activation.SIGMOID, net_rng)
        tree_t1, tree_t = KdTree(target), KdTree(source)
        loss = lambda: prior._joint_loss(source, forward_net, backward_net, tree_t1, tree_t, target)[0]
        params = list(forward_net.parameters()) + list(backward_net.parameters())
        assert max_relative_error(loss, params) <= 1e-3


@pytest.mark.slow
class TestTeacherEfficacy:
    """Pseudo-labels on single-object scenes beat zero flow by at least half."""

    def test_halves_zero_flow_error(self):
        from src.core.types import ObjectSpec, SceneConfig
        from src.eval.metrics import epe

        rng = np.random.default_rng(2024)
        for scene in range(10):
            displacement = rng.uniform(0.5, 1.5)
            heading = rng.uniform(-np.pi, np.pi)
            velocity = (displacement * np.cos(heading) / 0.1, displacement * np.sin(heading) / 0.1, 0.0)
            config = SceneConfig(
                area_half_extent=12.8, n_background_points=0, n_structures=0,
                objects=(ObjectSpec(center=(4.0, -3.0, 0.8), yaw=heading, velocity=velocity),),
                n_points_per_object=600, lidar_noise_sigma=0.01, seed=scene,
            )
            sample = generate_scene(config)
            label = nsfp_optimize(sample.cloud_t, sample.cloud_t1, TeacherConfig(seed=scene))
            zero = epe(np.zeros_like(sample.gt_flow.vectors), sample.gt_flow)
            assert epe(label.flow, sample.gt_flow) <= 0.5 * zero, f"scene {scene}"
