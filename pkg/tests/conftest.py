"""
Shared fixtures: small seeded scenes, configs and datasets that keep the fast suite quick.
"""

import numpy as np
import pytest

from src.core.scene_generator import generate_scene
from src.core.types import FlowField, ObjectSpec, PointCloud, SceneConfig, SceneSample
from src.pipeline.experiment import ExperimentConfig
from src.student.pillars import PillarConfig
from src.student.trainer import TrainConfig
from src.teacher.nsfp import TeacherConfig


@pytest.fixture
def small_scene_config():
    """A 12.8 m scene with a few hundred points and two moving objects."""
    return SceneConfig(
        area_half_extent=12.8,
        n_background_points=300,
        n_structures=4,
        n_objects=2,
        n_points_per_object=80,
        object_speed_range=(2.0, 8.0),
        seed=3,
    )


@pytest.fixture
def small_sample(small_scene_config):
    return generate_scene(small_scene_config)


@pytest.fixture
def translating_object_config():
    """One box moving 1.0 m per frame along +x, no background."""
    return SceneConfig(
        area_half_extent=12.8,
        n_background_points=0,
        n_structures=0,
        objects=(ObjectSpec(center=(3.0, 2.0, 0.8), velocity=(10.0, 0.0, 0.0)),),
        n_points_per_object=200,
        seed=11,
    )


@pytest.fixture
def handmade_sample():
    """Three foreground points moving at 0 / 0.3 / 6 m/s and two background points."""
    cloud_t = PointCloud(np.array([
        [1.0, 0.0, 0.5],
        [2.0, 1.0, 0.5],
        [3.0, -1.0, 0.5],
        [-4.0, 2.0, 1.0],
        [5.0, 5.0, 1.0],
    ]))
    flow = FlowField(np.array([
        [0.0, 0.0, 0.0],
        [0.03, 0.0, 0.0],
        [0.6, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
    ]))
    cloud_t1 = PointCloud(cloud_t.points + flow.vectors, frame_id=1)
    return SceneSample(cloud_t, cloud_t1, flow, classes=np.array([1, 1, 1, 0, 0]))


@pytest.fixture
def tiny_pillar_config():
    """8x8 grid over +/-3.2 m with a two-level U-Net."""
    return PillarConfig(pillar_size=0.8, area_half_extent=3.2, embed_dim=4, unet_levels=2, decode_hidden=8)


@pytest.fixture
def tiny_experiment_config(tmp_path):
    """A complete distill experiment small enough for the fast suite."""
    scene = SceneConfig(
        area_half_extent=6.4,
        n_background_points=120,
        n_structures=3,
        n_objects=1,
        n_points_per_object=60,
        object_speed_range=(3.0, 6.0),
    )
    return ExperimentConfig(
        name="tiny",
        scene=scene,
        train_n=4,
        val_n=2,
        teacher="gt",
        teacher_config=TeacherConfig(max_iters=5),
        pillar=PillarConfig(pillar_size=0.8, area_half_extent=6.4, embed_dim=4, unet_levels=2, decode_hidden=8),
        train=TrainConfig(lr=1e-3, batch_size=2, epochs=2),
        eval_half_extent=4.375,
        seed=5,
    )


@pytest.fixture
def tiny_dataset(tmp_path, tiny_experiment_config):
    from src.pipeline.dataset import generate_dataset

    return generate_dataset(tiny_experiment_config, tmp_path / "dataset")
