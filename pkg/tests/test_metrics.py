"""
Unit tests for endpoint-error metrics.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.core.errors import EmptyCloudError, ShapeError
from src.core.types import FlowField
from src.eval.metrics import (
    Bucket,
    ThreewayAccumulator,
    bucket_masks,
    epe,
    evaluate_estimator,
    residual_norms,
    threeway_epe,
)

flows = arrays(np.float64, (12, 3), elements=st.floats(-2.0, 2.0, allow_nan=False))


class TestEpe:
    """Test suite for epe."""

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        pred, gt = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        expected = sum(math.sqrt(sum((p - g) ** 2 for p, g in zip(a, b))) for a, b in zip(pred, gt)) / 50
        assert epe(pred, gt) == pytest.approx(expected, rel=1e-12)

    def test_accepts_flow_fields_and_mask(self):
        gt = FlowField(np.zeros((3, 3)))
        pred = FlowField(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 4.0]]))
        assert epe(pred, gt) == pytest.approx(7 / 3)
        assert epe(pred, gt, mask=np.array([False, True, True])) == pytest.approx(3.0)

    def test_zero_for_identical(self):
        flow = np.random.default_rng(1).normal(size=(8, 3))
        assert epe(flow, flow) == 0.0

    def test_misaligned(self):
        with pytest.raises(ShapeError):
            residual_norms(np.zeros((2, 3)), np.zeros((3, 3)))

    def test_empty(self):
        with pytest.raises(EmptyCloudError):
            epe(np.zeros((2, 3)), np.zeros((2, 3)), mask=np.zeros(2, dtype=bool))


class TestBucketMasks:
    def test_handmade_buckets(self, handmade_sample):
        masks = bucket_masks(handmade_sample.gt_flow, handmade_sample.classes)
        np.testing.assert_array_equal(masks[Bucket.BACKGROUND], [False, False, False, True, True])
        np.testing.assert_array_equal(masks[Bucket.STATIC_FG], [True, True, False, False, False])
        np.testing.assert_array_equal(masks[Bucket.DYNAMIC_FG], [False, False, True, False, False])

    @settings(max_examples=50)
    @given(gt=flows, classes=arrays(np.uint8, (12,), elements=st.integers(0, 1)))
    def test_partition(self, gt, classes):
        masks = bucket_masks(gt, classes)
        total = sum(m.astype(int) for m in masks.values())
        np.testing.assert_array_equal(total, np.ones(12, dtype=int))

    def test_speed_exactly_at_threshold_is_static(self):
        masks = bucket_masks(np.array([[0.05, 0.0, 0.0]]), np.array([1]), dt=0.1)
        assert masks[Bucket.STATIC_FG][0]

    def test_invalid_dt(self):
        with pytest.raises(ValueError):
            bucket_masks(np.zeros((1, 3)), np.array([1]), dt=0.0)


class TestThreewayEpe:
    """Test suite for threeway_epe and ThreewayAccumulator."""

    def test_handmade_report(self, handmade_sample):
        gt = handmade_sample.gt_flow.vectors
        residual = np.array([[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        report = threeway_epe(gt + residual, gt, handmade_sample.classes)

        assert report.bg_epe == pytest.approx(0.0)
        assert report.fg_static_epe == pytest.approx(0.1)
        assert report.fg_dynamic_epe == pytest.approx(0.4)
        assert report.threeway_epe == pytest.approx(0.16667, abs=1e-5)
        assert report.counts == {"bg": 2, "fg_static": 2, "fg_dynamic": 1}

    def test_empty_bucket_excluded_from_mean(self):
        gt = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        pred = gt + np.array([[0.2, 0.0, 0.0], [0.6, 0.0, 0.0]])
        report = threeway_epe(pred, gt, np.array([0, 1]))

        assert report.fg_static_epe is None
        assert report.empty_buckets == ("fg_static",)
        assert report.threeway_epe == pytest.approx(0.4)
        row = report.as_row()
        assert math.isnan(row["fg_static"])
        assert row["bg"] == pytest.approx(0.2)

    def test_pooled_over_frames(self):
        accumulator = ThreewayAccumulator()
        accumulator.add(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 3)), np.array([0]))
        accumulator.add(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), np.zeros((2, 3)), np.array([0, 0]))
        # one bucket, three points: (1 + 0 + 0) / 3
        assert accumulator.report().threeway_epe == pytest.approx(1 / 3)

    def test_nothing_to_score(self):
        with pytest.raises(EmptyCloudError):
            ThreewayAccumulator().report()


class TestEvaluateEstimator:
    def test_ground_truth_estimator_scores_zero(self, small_sample):
        report = evaluate_estimator(lambda s: s.gt_flow, [small_sample], eval_half_extent=8.75)
        assert report.threeway_epe == 0.0

    def test_crop_limits_scored_points(self, handmade_sample):
        report = evaluate_estimator(lambda s: FlowField.zeros(len(s.cloud_t)), [handmade_sample], eval_half_extent=4.5)
        # (5, 5) lies outside the crop
        assert report.counts == {"bg": 1, "fg_static": 2, "fg_dynamic": 1}
        assert report.fg_dynamic_epe == pytest.approx(0.6)
