import math

import numpy as np
import pytest

from depthscale.depthio import CROP_GARG, CROP_NONE, DepthMap
from depthscale.errors import ValidationError
from depthscale.metrics import (CONVENTION_POOLED, MetricsReport, abs_rel,
                                abs_rel_norm, compute_metrics_report,
                                garg_crop, rmse, rmse_log, scale_ratio,
                                sq_rel, threshold_accuracy)
from reference_impls import garg_rect_ref, metrics_ref


def dm(values, kind="ground_truth"):
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    return DepthMap(arr, arr > 0, kind)


class TestAbsRel:
    def test_identity_is_zero(self):
        maps = [dm([[3.0, 7.0, 21.0]])]
        assert abs_rel(maps, maps) == 0.0

    def test_hand_case(self):
        gt = [dm([[2.0, 4.0]])]
        pred = [dm([[1.0, 2.0]])]
        assert abs_rel(pred, gt) == pytest.approx(0.5)  # mean(1/2, 2/4)

    def test_per_image_averaging_ignores_pixel_counts(self):
        gt = [dm([[10.0] * 8]), dm([[10.0]])]
        pred = [dm([[11.0] * 8]), dm([[13.0]])]
        # per-image terms 0.1 and 0.3 average to 0.2 despite 8:1 pixels
        assert abs_rel(pred, gt) == pytest.approx(0.2)

    def test_cap_excludes_far_gt(self):
        gt = [dm([[10.0, 200.0]])]
        pred = [dm([[20.0, 123.0]])]
        assert abs_rel(pred, gt, cap=80.0) == pytest.approx(1.0)

    def test_no_overlap_raises(self):
        gt = [DepthMap(np.zeros((1, 2)), np.zeros((1, 2), bool))]
        pred = [dm([[1.0, 1.0]])]
        with pytest.raises(ValidationError):
            abs_rel(pred, gt)


class TestAbsRelNorm:
    def test_constant_rescale_cancels(self):
        gt = [dm([[2.0, 4.0, 9.0]])]
        pred = [dm([[2.0 / 7, 4.0 / 7, 9.0 / 7]], "up_to_scale")]
        assert abs_rel_norm(pred, gt) == pytest.approx(0.0, abs=1e-15)

    def test_two_pixel_hand_case(self):
        gt = [dm([[2.0, 4.0]])]
        pred = [dm([[1.0, 2.0]], "up_to_scale")]
        # alpha = 3/1.5 = 2 makes the scaled prediction exact
        assert abs_rel_norm(pred, gt) == pytest.approx(0.0, abs=1e-15)

    def test_three_pixel_hand_case(self):
        gt = [dm([[2.0, 4.0, 8.0]])]
        pred = [dm([[1.0, 2.0, 2.0]], "up_to_scale")]
        # alpha = 4/2 = 2, scaled = [2, 4, 4], AbsRel = mean(0, 0, 0.5)
        assert abs_rel_norm(pred, gt) == pytest.approx(1.0 / 6.0)


class TestScaleRatio:
    def test_identity(self):
        maps = [dm([[5.0, 9.0]]), dm([[2.0, 3.0]])]
        mean, std = scale_ratio(maps, maps)
        assert mean == pytest.approx(1.0) and std == pytest.approx(0.0)

    def test_constant_underscale(self):
        gts = [dm([[5.0, 9.0]]), dm([[2.0, 3.0]])]
        preds = [dm([[4.5, 8.1]]), dm([[1.8, 2.7]])]
        mean, std = scale_ratio(preds, gts)
        assert mean == pytest.approx(0.9) and std == pytest.approx(0.0, abs=1e-12)

    def test_two_image_spread(self):
        gts = [dm([[10.0]]), dm([[10.0]])]
        preds = [dm([[8.0]]), dm([[12.0]])]
        mean, std = scale_ratio(preds, gts)
        assert mean == pytest.approx(1.0) and std == pytest.approx(0.2)


class TestThresholdAccuracy:
    def test_identity_all_ones(self):
        maps = [dm([[1.0, 50.0]])]
        assert threshold_accuracy(maps, maps) == (1.0, 1.0, 1.0)

    def test_ratio_1_3(self):
        gt = [dm([[10.0, 20.0]])]
        pred = [dm([[13.0, 26.0]])]
        d1, d2, d3 = threshold_accuracy(pred, gt)
        assert (d1, d2) == (0.0, 1.0)  # 1.3 > 1.25 but < 1.5625

    def test_half_exact_half_double(self):
        gt = [dm([[10.0, 10.0]])]
        pred = [dm([[10.0, 20.0]])]
        d1, d2, d3 = threshold_accuracy(pred, gt)
        # 2.0 exceeds 1.25^3 = 1.953125, so even delta_3 stays at one half
        assert (d1, d2, d3) == (0.5, 0.5, 0.5)


class TestPointwiseErrors:
    def test_identity_zero(self):
        maps = [dm([[4.0, 9.0]])]
        assert sq_rel(maps, maps) == 0.0
        assert rmse(maps, maps) == 0.0
        assert rmse_log(maps, maps) == 0.0

    def test_single_pixel_hand_case(self):
        gt = [dm([[4.0]])]
        pred = [dm([[2.0]])]
        assert sq_rel(pred, gt) == pytest.approx(1.0)
        assert rmse(pred, gt) == pytest.approx(2.0)
        assert rmse_log(pred, gt) == pytest.approx(math.log(2.0))

    def test_rmse_log_separates_scale(self):
        rng = np.random.default_rng(0)
        for c in (0.5, 1.3, 2.0):
            gts = [dm(rng.uniform(1, 40, (4, 5))) for _ in range(3)]
            preds = [dm(c * g.values) for g in gts]
            assert rmse_log(preds, gts) == pytest.approx(abs(math.log(c)), rel=1e-12)


class TestGargCrop:
    def test_kitti_sized(self):
        assert garg_crop(1242, 375) == (153, 371, 44, 1197)

    def test_matches_reference_on_many_sizes(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            w = int(rng.integers(1, 4000))
            h = int(rng.integers(1, 3000))
            assert garg_crop(w, h) == garg_rect_ref(w, h)

    def test_degenerate_1x1(self):
        r0, r1, c0, c1 = garg_crop(1, 1)
        assert r1 - r0 <= 1 and c1 - c0 <= 1  # empty or single pixel, no crash

    def test_crop_none_is_full_image(self):
        gt = [dm(np.full((10, 10), 5.0))]
        pred = [dm(np.full((10, 10), 5.0))]
        report = compute_metrics_report(pred, gt, crop=CROP_NONE)
        assert report.n_valid_pixels == 100


class TestReportAgainstReference:
    def test_fifty_seeded_maps_match_reference_within_1e9(self):
        rng = np.random.default_rng(42)
        for case in range(50):
            n_images = int(rng.integers(1, 5))
            gts, preds, ref_pixels = [], [], []
            crop = CROP_GARG if case % 2 else CROP_NONE
            cap = 80.0
            for _ in range(n_images):
                h, w = int(rng.integers(4, 12)), int(rng.integers(4, 12))
                gt_vals = rng.uniform(0.5, 100.0, (h, w))
                gt_valid = rng.random((h, w)) > 0.2
                pred_vals = np.abs(gt_vals / rng.uniform(50, 150)
                                   * rng.uniform(0.7, 1.3, (h, w))) + 1e-4
                pred_scaled = pred_vals * rng.uniform(50, 150)
                gts.append(DepthMap(np.where(gt_valid, gt_vals, 0.0), gt_valid))
                preds.append(DepthMap(pred_scaled, np.ones((h, w), bool),
                                      "absolute_prediction"))
                from reference_impls import collect_valid_ref
                rect = garg_rect_ref(w, h) if crop == CROP_GARG else None
                ref_pixels.append(collect_valid_ref(
                    pred_scaled.tolist(), np.where(gt_valid, gt_vals, 0.0).tolist(),
                    gt_valid.tolist(), cap, rect))
            if not any(p for p, _ in ref_pixels):
                continue
            report = compute_metrics_report(preds, gts, cap=cap, crop=crop)
            ref = metrics_ref([px for px in ref_pixels if px[0]], cap)
            assert report.abs_rel == pytest.approx(ref["abs_rel"], abs=1e-9)
            assert report.abs_rel_norm == pytest.approx(ref["abs_rel_norm"], abs=1e-9)
            assert report.sq_rel == pytest.approx(ref["sq_rel"], abs=1e-9)
            assert report.rmse == pytest.approx(ref["rmse"], abs=1e-9)
            assert report.rmse_log == pytest.approx(ref["rmse_log"], abs=1e-9)
            assert report.delta_1 == pytest.approx(ref["d1"], abs=1e-9)
            assert report.delta_2 == pytest.approx(ref["d2"], abs=1e-9)
            assert report.delta_3 == pytest.approx(ref["d3"], abs=1e-9)
            assert report.scale_ratio_mean == pytest.approx(ref["ratio"], abs=1e-9)
            assert report.scale_ratio_std == pytest.approx(ref["ratio_std"], abs=1e-9)


class TestReportProperties:
    def make_split(self, rng, n=4):
        # keep gt * 1.2 below 80 so the prediction clamp ceiling never
        # engages and cap invariance can hold exactly
        gts, preds = [], []
        for _ in range(n):
            gt_vals = rng.uniform(1.0, 60.0, (6, 8))
            valid = rng.random((6, 8)) > 0.15
            gts.append(DepthMap(np.where(valid, gt_vals, 0.0), valid))
            preds.append(DepthMap(gt_vals * rng.uniform(0.8, 1.2, (6, 8)),
                                  np.ones((6, 8), bool), "absolute_prediction"))
        return preds, gts

    def test_pixel_permutation_invariance(self):
        rng = np.random.default_rng(2)
        preds, gts = self.make_split(rng)
        base = compute_metrics_report(preds, gts)
        perm = np.random.default_rng(0).permutation(48)
        shuffle = lambda m: DepthMap(m.values.ravel()[perm].reshape(6, 8),
                                     m.valid_mask.ravel()[perm].reshape(6, 8),
                                     m.kind)
        shuffled = compute_metrics_report([shuffle(p) for p in preds],
                                          [shuffle(g) for g in gts])
        assert shuffled.to_dict()["metrics"] == pytest.approx(
            base.to_dict()["metrics"])

    def test_image_order_invariance(self):
        rng = np.random.default_rng(3)
        preds, gts = self.make_split(rng)
        base = compute_metrics_report(preds, gts)
        rev = compute_metrics_report(preds[::-1], gts[::-1])
        assert rev.to_dict()["metrics"] == pytest.approx(base.to_dict()["metrics"])

    def test_cap_invariance_when_nothing_capped(self):
        rng = np.random.default_rng(4)
        preds, gts = self.make_split(rng)  # gt < 70 < both caps
        a = compute_metrics_report(preds, gts, cap=80.0)
        b = compute_metrics_report(preds, gts, cap=1000.0)
        assert a.to_dict()["metrics"] == pytest.approx(b.to_dict()["metrics"])

    def test_abs_rel_norm_of_alpha_scaled_equals_abs_rel_single_image(self):
        rng = np.random.default_rng(5)
        gt_vals = rng.uniform(1.0, 60.0, (5, 5))
        gt = [dm(gt_vals)]
        pred_vals = gt_vals * rng.uniform(0.9, 1.1, (5, 5))
        pred = [dm(pred_vals, "up_to_scale")]
        alpha = np.median(gt_vals) / np.median(pred_vals)
        assert abs_rel_norm(pred, gt) == pytest.approx(
            abs_rel([dm(alpha * pred_vals)], gt), rel=1e-12)

    def test_delta_monotonicity_invariant_enforced(self):
        with pytest.raises(ValidationError):
            MetricsReport(abs_rel=0.1, abs_rel_norm=0.1, sq_rel=0.1, rmse=1.0,
                          rmse_log=0.1, delta_1=0.9, delta_2=0.5, delta_3=1.0,
                          scale_ratio_mean=1.0, scale_ratio_std=0.0,
                          n_images=1, n_valid_pixels=10)

    def test_pooled_convention_weights_by_pixels(self):
        gt = [dm([[10.0] * 8]), dm([[10.0]])]
        pred = [dm([[11.0] * 8]), dm([[13.0]])]
        pooled = compute_metrics_report(pred, gt, convention=CONVENTION_POOLED)
        assert pooled.abs_rel == pytest.approx((8 * 0.1 + 0.3) / 9)

    def test_csv_row_matches_header(self):
        rng = np.random.default_rng(6)
        preds, gts = self.make_split(rng)
        report = compute_metrics_report(preds, gts)
        assert len(report.csv_row().split(",")) == len(
            report.csv_header().split(","))
