"""
Unit tests for the nearest-neighbor index, truncated Chamfer distance and the
nearest-neighbor flow teacher.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.core.errors import EmptyCloudError
from src.core.types import PointCloud
from src.neighbors.chamfer import ChamferConfig, truncated_chamfer
from src.neighbors.kdtree import KdTree, nearest
from src.neighbors.nn_teacher import nn_flow_teacher
from src.nn import autodiff as ad
from tests.gradcheck import max_relative_error


def brute_force_nearest(points, query):
    distances = np.linalg.norm(points - query, axis=1)
    best = distances.min()
    return int(np.flatnonzero(distances == best)[0]), float(best)


def brute_force_chamfer(a, b, radius=2.0):
    def direction(src, dst):
        d = np.sqrt(((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        return np.mean(np.where(d <= radius, d ** 2, 0.0))

    return direction(a, b) + direction(b, a)


coordinates = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False, width=64)


class TestKdTree:
    """Test suite for KdTree and nearest."""

    @settings(max_examples=50, deadline=None)
    @given(points=arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=coordinates),
           query=arrays(np.float64, (3,), elements=coordinates))
    def test_matches_brute_force(self, points, query):
        index, distance = nearest(KdTree(points), query)
        expected_index, expected_distance = brute_force_nearest(points, query)
        assert distance == pytest.approx(expected_distance, abs=1e-12)
        assert np.linalg.norm(points[index] - query) == pytest.approx(expected_distance, abs=1e-12)

    def test_duplicate_points_resolve_to_lowest_index(self):
        tree = KdTree(np.array([[5.0, 5.0, 5.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]))
        assert nearest(tree, np.array([1.0, 1.0, 1.2]))[0] == 1

    def test_equidistant_tie_resolves_to_lowest_index(self):
        tree = KdTree(np.array([[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        assert nearest(tree, np.zeros(3)) == (0, 1.0)

    def test_more_ties_than_candidates(self):
        # 30 points on the unit sphere around the query
        axes = np.vstack([np.eye(3), -np.eye(3)])
        points = np.vstack([np.tile(axes[::-1], (5, 1)), [[9.0, 9.0, 9.0]]])
        assert nearest(KdTree(points), np.zeros(3)) == (0, 1.0)

    def test_duplicated_integer_grid_matches_linear_scan(self):
        rng = np.random.default_rng(11)
        points = rng.integers(-2, 3, size=(300, 3)).astype(np.float64)
        queries = rng.integers(-3, 4, size=(200, 3)).astype(np.float64)
        indices, distances = KdTree(points).query(queries)
        expected = [brute_force_nearest(points, q) for q in queries]
        assert indices.tolist() == [i for i, _ in expected]
        np.testing.assert_allclose(distances, [d for _, d in expected], atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(points=arrays(np.int64, st.tuples(st.integers(1, 80), st.just(3)), elements=st.integers(-1, 1)),
           queries=arrays(np.int64, st.tuples(st.integers(1, 10), st.just(3)), elements=st.integers(-4, 4)))
    def test_heavy_duplication_resolves_like_argmin(self, points, queries):
        points = points.astype(np.float64)
        # half-integer queries make many grid points equidistant
        queries = queries.astype(np.float64) / 2.0
        indices, _ = KdTree(points).query(queries)
        assert indices.tolist() == [brute_force_nearest(points, q)[0] for q in queries]

    def test_batch_query(self):
        rng = np.random.default_rng(0)
        points, queries = rng.normal(size=(100, 3)), rng.normal(size=(30, 3))
        indices, distances = KdTree(points).query(queries)
        for q, i, d in zip(queries, indices, distances):
            assert (i, pytest.approx(d, abs=1e-12)) == brute_force_nearest(points, q)

    def test_single_point_tree(self):
        assert nearest(KdTree(np.array([[1.0, 2.0, 2.0]])), np.zeros(3)) == (0, 3.0)

    def test_empty_tree(self):
        with pytest.raises(EmptyCloudError):
            nearest(KdTree(np.zeros((0, 3))), np.zeros(3))


class TestTruncatedChamfer:
    """Test suite for truncated_chamfer."""

    def test_identical_clouds(self):
        cloud = np.random.default_rng(0).normal(size=(50, 3))
        assert truncated_chamfer(cloud, cloud).item() == 0.0

    def test_everything_beyond_radius_is_zero(self):
        assert truncated_chamfer(np.zeros((1, 3)), np.array([[3.0, 0.0, 0.0]])).item() == 0.0

    def test_single_pair_inside_radius(self):
        assert truncated_chamfer(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])).item() == pytest.approx(2.0)

    def test_unsquared_one_direction(self):
        cfg = ChamferConfig(squared=False, bidirectional=False)
        value = truncated_chamfer(np.zeros((1, 3)), np.array([[1.5, 0.0, 0.0], [0.0, 3.0, 0.0]]), cfg)
        assert value.item() == pytest.approx(1.5)

    def test_matches_quadratic_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            a = rng.uniform(-3, 3, size=(rng.integers(1, 60), 3))
            b = rng.uniform(-3, 3, size=(rng.integers(1, 60), 3))
            assert truncated_chamfer(a, b).item() == pytest.approx(brute_force_chamfer(a, b), abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(40, 3)), rng.normal(size=(25, 3))
        assert truncated_chamfer(a, b).item() == pytest.approx(truncated_chamfer(b, a).item(), abs=1e-12)

    def test_accepts_point_clouds_and_prebuilt_tree(self):
        rng = np.random.default_rng(4)
        a, b = PointCloud(rng.normal(size=(20, 3))), PointCloud(rng.normal(size=(20, 3)))
        plain = truncated_chamfer(a, b).item()
        assert truncated_chamfer(a, b, b_tree=KdTree(b)).item() == plain

    def test_gradient_wrt_first_cloud(self):
        rng = np.random.default_rng(5)
        a = ad.parameter(rng.uniform(-1, 1, size=(15, 3)))
        b = rng.uniform(-1, 1, size=(12, 3))
        assert max_relative_error(lambda: truncated_chamfer(a, b), [a]) <= 1e-4

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloudError):
            truncated_chamfer(np.zeros((0, 3)), np.ones((2, 3)))

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            ChamferConfig(truncation_radius=0.0)


class TestNnTeacher:
    """Test suite for nn_flow_teacher."""

    def test_flows_to_nearest_next_point(self):
        cloud_t = PointCloud([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
        cloud_t1 = PointCloud([[0.5, 0.0, 0.0], [20.0, 0.0, 0.0]])
        label = nn_flow_teacher(cloud_t, cloud_t1)

        np.testing.assert_array_equal(label.flow.vectors, [[0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
        assert label.teacher_name == "nn"
        assert len(label.flow) == len(cloud_t)

    def test_many_equidistant_targets_pick_lowest_index(self):
        axes = np.vstack([np.eye(3), -np.eye(3)])
        cloud_t1 = PointCloud(np.tile(axes[::-1], (3, 1)))
        label = nn_flow_teacher(PointCloud([[0.0, 0.0, 0.0]]), cloud_t1)
        np.testing.assert_array_equal(label.flow.vectors, [[0.0, 0.0, -1.0]])

    def test_radius_override(self):
        label = nn_flow_teacher(PointCloud([[0.0, 0.0, 0.0]]), PointCloud([[3.0, 0.0, 0.0]]), truncation_radius=5.0)
        np.testing.assert_array_equal(label.flow.vectors, [[3.0, 0.0, 0.0]])

    def test_empty_input(self):
        with pytest.raises(EmptyCloudError):
            nn_flow_teacher(PointCloud(np.zeros((0, 3))), PointCloud(np.ones((1, 3))))
