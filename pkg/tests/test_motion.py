import numpy as np
import pytest

from depthscale.depthio import DepthMap, InstanceMask
from depthscale.errors import ValidationError
from depthscale.motion import (MotionMaskConfig, VERDICT_FLAGGED,
                               VERDICT_STATIC, VERDICT_UNDETERMINED,
                               flag_moving_instances, road_median_normalize)


def full(values):
    arr = np.asarray(values, dtype=np.float64)
    return DepthMap(arr, arr > 0)


class TestRoadMedianNormalize:
    def test_constant_depth_becomes_ones(self):
        depth = full(np.full((4, 5), 5.0))
        road = np.ones((4, 5), dtype=bool)
        out = road_median_normalize(depth, road, min_road_pixels=1)
        np.testing.assert_allclose(out.values, 1.0)

    def test_hand_median(self):
        values = np.array([[2.0, 4.0, 6.0, 8.0]])
        road = np.array([[True, True, True, False]])
        out = road_median_normalize(full(values), road, min_road_pixels=1)
        assert out.values[0, 3] == pytest.approx(2.0)  # 8 / median(2,4,6)

    def test_empty_road_rejected(self):
        depth = full(np.full((4, 5), 5.0))
        with pytest.raises(ValidationError):
            road_median_normalize(depth, np.zeros((4, 5), bool), min_road_pixels=1)

    def test_min_road_pixels_enforced(self):
        depth = full(np.full((4, 5), 5.0))
        road = np.zeros((4, 5), dtype=bool)
        road[0, :3] = True
        with pytest.raises(ValidationError):
            road_median_normalize(depth, road, min_road_pixels=10)

    def test_invalid_road_pixels_do_not_count(self):
        values = np.array([[0.0, 4.0]])
        depth = DepthMap(values, np.array([[False, True]]))
        road = np.ones((1, 2), dtype=bool)
        out = road_median_normalize(depth, road, min_road_pixels=1)
        assert out.values[0, 1] == pytest.approx(1.0)

    def test_common_rescale_cancels(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(1.0, 50.0, (6, 6))
        road = rng.random((6, 6)) > 0.4
        base = road_median_normalize(full(values), road, min_road_pixels=1)
        scaled = road_median_normalize(full(values * 37.5), road, min_road_pixels=1)
        np.testing.assert_allclose(scaled.values, base.values, rtol=1e-12)


def scene_with_two_vehicles(dev_a=3.0, dev_b=1.2):
    """Road scene: two vehicles whose unsup depth deviates by given factors."""
    h, w = 10, 12
    sup = np.full((h, w), 2.0)
    unsup = sup.copy()
    labels = np.zeros((h, w), dtype=np.int64)
    labels[2:5, 1:4] = 1    # vehicle A
    labels[6:9, 7:11] = 2   # vehicle B
    unsup[labels == 1] = 2.0 * dev_a
    unsup[labels == 2] = 2.0 * dev_b
    road = labels == 0
    instances = InstanceMask(labels, {1: "vehicle", 2: "vehicle"})
    return full(sup), full(unsup), road, instances


class TestFlagMovingInstances:
    def normalize_pair(self, sup, unsup, road):
        return (road_median_normalize(sup, road, 1),
                road_median_normalize(unsup, road, 1))

    def test_identical_maps_flag_nothing(self):
        sup, _, road, instances = scene_with_two_vehicles()
        s, u = self.normalize_pair(sup, sup, road)
        mask, verdicts = flag_moving_instances(s, u, instances)
        assert not mask.any()
        assert all(v.verdict == VERDICT_STATIC for v in verdicts)

    def test_three_x_deviation_flagged_1p2_not(self):
        sup, unsup, road, instances = scene_with_two_vehicles(3.0, 1.2)
        s, u = self.normalize_pair(sup, unsup, road)
        mask, verdicts = flag_moving_instances(s, u, instances)
        by_id = {v.instance_id: v for v in verdicts}
        # normalized sup is 1, unsup 3 -> |diff| = 2 > 1.5; 1.2 -> 0.2 < 1.5
        assert by_id[1].verdict == VERDICT_FLAGGED
        assert by_id[2].verdict == VERDICT_STATIC
        np.testing.assert_array_equal(mask, instances.labels == 1)

    def test_two_x_deviation_below_cutoff(self):
        # difference 1.0 < C=1.5, matching the published calibration of C
        sup, unsup, road, instances = scene_with_two_vehicles(2.0, 1.0)
        s, u = self.normalize_pair(sup, unsup, road)
        _, verdicts = flag_moving_instances(s, u, instances)
        assert all(v.verdict == VERDICT_STATIC for v in verdicts)

    def test_exact_fraction_boundary_is_inclusive(self):
        sup, unsup, road, instances = scene_with_two_vehicles(1.0, 1.0)
        pix = np.argwhere(instances.labels == 1)
        # vehicle A has 9 pixels; push exactly 10% of 10... use config R
        # matching one pixel out of nine
        r_pct = 100.0 / 9.0
        unsup.values[tuple(pix[0])] = 2.0 * 4.0  # one disagreeing pixel
        s, u = self.normalize_pair(sup, unsup, road)
        cfg = MotionMaskConfig(cutoff=1.5, fraction_percent=r_pct)
        _, verdicts = flag_moving_instances(s, u, instances, cfg)
        assert {v.instance_id: v.verdict for v in verdicts}[1] == VERDICT_FLAGGED
        cfg_above = MotionMaskConfig(cutoff=1.5, fraction_percent=r_pct + 1e-6)
        _, verdicts = flag_moving_instances(s, u, instances, cfg_above)
        assert {v.instance_id: v.verdict for v in verdicts}[1] == VERDICT_STATIC

    def test_no_valid_overlap_is_undetermined(self):
        sup, unsup, road, instances = scene_with_two_vehicles(3.0, 3.0)
        unsup.valid_mask[instances.labels == 1] = False
        s, u = self.normalize_pair(sup, unsup, road)
        mask, verdicts = flag_moving_instances(s, u, instances)
        by_id = {v.instance_id: v for v in verdicts}
        assert by_id[1].verdict == VERDICT_UNDETERMINED
        assert not mask[instances.labels == 1].any()

    def test_non_vehicle_instances_never_flagged(self):
        sup, unsup, road, _ = scene_with_two_vehicles(5.0, 5.0)
        labels = np.zeros(sup.values.shape, dtype=np.int64)
        labels[2:5, 1:4] = 1
        instances = InstanceMask(labels, {1: "other"})
        s, u = self.normalize_pair(sup, unsup, road)
        mask, verdicts = flag_moving_instances(s, u, instances)
        assert not mask.any() and verdicts == []

    def test_mask_is_subset_of_vehicle_pixels(self):
        rng = np.random.default_rng(1)
        sup = full(rng.uniform(1, 40, (12, 12)))
        unsup = full(rng.uniform(1, 40, (12, 12)))
        labels = rng.integers(0, 4, (12, 12)).astype(np.int64)
        present = set(np.unique(labels).tolist()) - {0}
        classes = {i: ("vehicle" if i % 2 else "road") for i in present}
        instances = InstanceMask(labels, classes)
        road = labels == 0
        s, u = self.normalize_pair(sup, unsup, road)
        mask, _ = flag_moving_instances(s, u, instances)
        vehicle_pixels = np.isin(labels, instances.vehicle_ids())
        assert not mask[~vehicle_pixels].any()

    def test_monotonic_in_cutoff_and_fraction(self):
        rng = np.random.default_rng(2)
        sup = full(np.full((16, 16), 3.0))
        unsup = full(3.0 * rng.uniform(0.5, 4.0, (16, 16)))
        labels = np.zeros((16, 16), dtype=np.int64)
        for i, (r, c) in enumerate([(0, 0), (0, 8), (8, 0), (8, 8)], start=1):
            labels[r:r + 6, c:c + 6] = i
        instances = InstanceMask(labels, {i: "vehicle" for i in range(1, 5)})
        road = labels == 0
        s, u = self.normalize_pair(sup, unsup, road)

        def flag_count(cutoff, fraction):
            cfg = MotionMaskConfig(cutoff=cutoff, fraction_percent=fraction)
            _, verdicts = flag_moving_instances(s, u, instances, cfg)
            return sum(v.flagged for v in verdicts)

        for fraction in (5.0, 10.0, 30.0, 60.0):
            counts = [flag_count(c, fraction) for c in (0.2, 0.8, 1.5, 2.5)]
            assert counts == sorted(counts, reverse=True)
        for cutoff in (0.3, 1.0, 1.5):
            counts = [flag_count(cutoff, f) for f in (5.0, 20.0, 50.0, 90.0)]
            assert counts == sorted(counts, reverse=True)

    def test_rescaling_both_maps_before_normalization_is_invariant(self):
        sup, unsup, road, instances = scene_with_two_vehicles(2.6, 1.1)
        s1, u1 = self.normalize_pair(sup, unsup, road)
        s2, u2 = self.normalize_pair(full(sup.values * 11.0),
                                     full(unsup.values * 11.0), road)
        m1, v1 = flag_moving_instances(s1, u1, instances)
        m2, v2 = flag_moving_instances(s2, u2, instances)
        np.testing.assert_array_equal(m1, m2)
        assert [v.verdict for v in v1] == [v.verdict for v in v2]


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(cutoff=0.0), dict(cutoff=-1.0),
        dict(fraction_percent=0.0), dict(fraction_percent=101.0),
        dict(min_road_pixels=0),
    ])
    def test_bad_config_rejected(self, kwargs):
        with pytest.raises(ValidationError):
            MotionMaskConfig(**kwargs)
