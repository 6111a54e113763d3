import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthscale.camera import (CameraIntrinsics, RigidTransform,
                               adjusted_intrinsics, apply_plan_to_depth,
                               apply_plan_to_labels, apply_plan_to_rgb,
                               compute_fov, focal_for_fov,
                               plan_fov_adjustment, plan_naive_center_crop,
                               plan_naive_resize_crop, reproject_pixel,
                               resize_nearest)
from depthscale.errors import ValidationError


def square(f, w, h):
    return CameraIntrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0, w, h)


class TestComputeFov:
    def test_ninety_degrees_when_width_is_twice_focal(self):
        assert compute_fov(square(500.0, 1000, 600)) == pytest.approx(90.0)

    def test_kitti_focal_length(self):
        # independent scalar evaluation of 2*atan(1242 / 1443)
        expected = math.degrees(2.0 * math.atan(1242.0 / 1443.0))
        got = compute_fov(square(721.5, 1242, 375))
        assert got == pytest.approx(expected, abs=1e-12)
        assert 81.43 <= got <= 82.68  # published KITTI range

    def test_vertical_axis_uses_height_and_focal_y(self):
        intr = CameraIntrinsics(800.0, 400.0, 511.5, 299.5, 1024, 600)
        assert compute_fov(intr, "vertical") == pytest.approx(
            math.degrees(2 * math.atan(600 / (2 * 400.0))))

    def test_zero_width_rejected_at_construction(self):
        with pytest.raises(ValidationError):
            CameraIntrinsics(1000.0, 1000.0, 0.0, 0.0, 0, 480)

    def test_result_range(self):
        assert 0.0 < compute_fov(square(10000.0, 100, 100)) < 180.0
        assert 0.0 < compute_fov(square(1.0, 10000, 100)) < 180.0

    @given(f=st.floats(1.0, 1e5), w=st.integers(1, 10000))
    def test_round_trip_recovers_focal(self, f, w):
        fov = compute_fov(square(f, w, 100))
        assert focal_for_fov(fov, w) == pytest.approx(f, rel=1e-9)


class TestPlanFovAdjustment:
    def test_identity(self, intrinsics_640):
        plan = plan_fov_adjustment(intrinsics_640, intrinsics_640)
        assert plan.is_identity
        assert plan.source_crop_width == intrinsics_640.width

    def test_identity_with_odd_size(self):
        intr = square(721.5, 1241, 375)
        plan = plan_fov_adjustment(intr, intr)
        assert plan.is_identity

    def test_crop_width_from_focal_ratio(self):
        src = square(500.0, 2000, 1200)
        tgt = square(1000.0, 800, 600)
        plan = plan_fov_adjustment(src, tgt)
        assert plan.source_crop_width == 400  # 800 * 500/1000

    def test_padding_recorded_as_negative_crops(self):
        src = square(2000.0, 1000, 600)
        tgt = square(1000.0, 800, 600)
        plan = plan_fov_adjustment(src, tgt)
        assert plan.source_crop_width == 1600
        assert plan.crop_left == -300 and plan.crop_right == -300
        assert plan.pads

    def test_adjusted_output_hits_target_fov(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            f_s = rng.uniform(600.0, 2500.0)
            f_t = rng.uniform(600.0, 2500.0)
            src = square(f_s, int(rng.integers(400, 2000)), int(rng.integers(300, 1200)))
            tgt = square(f_t, int(rng.integers(400, 2000)), int(rng.integers(300, 1200)))
            plan = plan_fov_adjustment(src, tgt)
            out = adjusted_intrinsics(plan, src)
            assert compute_fov(out) == pytest.approx(compute_fov(tgt), abs=0.1)

    def test_composition_matches_direct(self):
        a = square(900.0, 1280, 720)
        b = square(1400.0, 1024, 600)
        c = square(1100.0, 800, 480)
        via = adjusted_intrinsics(plan_fov_adjustment(a, b), a)
        composed = adjusted_intrinsics(plan_fov_adjustment(via, c), via)
        direct = adjusted_intrinsics(plan_fov_adjustment(a, c), a)
        assert compute_fov(composed) == pytest.approx(compute_fov(direct), abs=0.1)

    def test_monotonicity_source_focal_smaller_crops(self):
        src = square(700.0, 1200, 700)
        tgt = square(1000.0, 1000, 600)
        plan = plan_fov_adjustment(src, tgt)
        assert plan.source_crop_width < tgt.width
        assert not plan.pads

    def test_crop_centered_on_principal_point(self):
        src = CameraIntrinsics(1000.0, 1000.0, 700.0, 300.0, 1200, 700)
        tgt = square(2000.0, 800, 480)
        plan = plan_fov_adjustment(src, tgt)  # crop 400x240 around (700, 300)
        assert plan.crop_left == 500 and plan.crop_right == 300
        assert plan.crop_top == 180 and plan.crop_bottom == 280


class TestApplyPlan:
    def test_identity_is_pixel_exact(self, intrinsics_640):
        plan = plan_fov_adjustment(intrinsics_640, intrinsics_640)
        rng = np.random.default_rng(0)
        depth = rng.uniform(1, 50, (384, 640))
        mask = rng.random((384, 640)) > 0.3
        out_v, out_m = apply_plan_to_depth(plan, depth, mask)
        np.testing.assert_array_equal(out_v, depth)
        np.testing.assert_array_equal(out_m, mask)
        rgb = rng.integers(0, 256, (384, 640, 3), dtype=np.uint8)
        np.testing.assert_array_equal(apply_plan_to_rgb(plan, rgb), rgb)

    def test_depth_resize_is_nearest_no_new_values(self):
        src = square(1000.0, 64, 48)
        tgt = square(1000.0, 40, 30)
        plan = plan_fov_adjustment(src, tgt)
        rng = np.random.default_rng(1)
        depth = rng.uniform(1, 50, (48, 64))
        out_v, _ = apply_plan_to_depth(plan, depth, np.ones_like(depth, bool))
        assert np.isin(out_v, depth).all()

    def test_padding_produces_invalid_depth_border(self):
        src = square(2000.0, 100, 60)
        tgt = square(1000.0, 80, 60)  # crop 160x120 > source, pads
        plan = plan_fov_adjustment(src, tgt)
        depth = np.full((60, 100), 5.0)
        out_v, out_m = apply_plan_to_depth(plan, depth, np.ones_like(depth, bool))
        assert out_m.shape == (60, 80)
        assert not out_m[:, 0].any() and not out_m[:, -1].any()
        assert out_m[30, 40]
        assert (out_v[~out_m] == 0).all()

    def test_rgb_padding_reflects(self):
        src = square(2000.0, 100, 60)
        tgt = square(1000.0, 80, 60)
        plan = plan_fov_adjustment(src, tgt)
        constant = np.full((60, 100, 3), 200, dtype=np.uint8)
        out = apply_plan_to_rgb(plan, constant)
        assert out.shape == (60, 80, 3)
        # reflection of a constant image stays constant; zero padding would
        # bleed black into the borders
        assert (out == 200).all()

    def test_reflection_pad_wider_than_source(self):
        src = square(8000.0, 100, 60)
        tgt = square(1000.0, 80, 60)  # crop 640x480, pads 270 per side
        plan = plan_fov_adjustment(src, tgt)
        rgb = np.random.default_rng(2).integers(0, 256, (60, 100, 3), dtype=np.uint8)
        out = apply_plan_to_rgb(plan, rgb)
        assert out.shape == (60, 80, 3)

    def test_labels_pad_with_fill(self):
        src = square(2000.0, 100, 60)
        tgt = square(1000.0, 80, 60)
        plan = plan_fov_adjustment(src, tgt)
        labels = np.full((60, 100), 7, dtype=np.int64)
        out = apply_plan_to_labels(plan, labels, fill=0)
        assert out.shape == (60, 80)
        assert out[0, 0] == 0 and out[30, 40] == 7

    def test_resize_nearest_identity(self):
        arr = np.arange(12).reshape(3, 4)
        np.testing.assert_array_equal(resize_nearest(arr, 4, 3), arr)


class TestNaivePlans:
    def test_center_crop_is_pure_crop(self):
        src = square(700.0, 1000, 600)
        tgt = square(1000.0, 800, 480)
        plan = plan_naive_center_crop(src, tgt)
        assert plan.source_crop_width == 800
        assert plan.source_crop_height == 480
        assert plan.crop_left == 100 and plan.crop_right == 100
        out = adjusted_intrinsics(plan, src)
        assert out.focal_x == pytest.approx(src.focal_x)  # no resize, wrong FOV

    def test_resize_crop_keeps_source_fov(self):
        src = square(700.0, 1000, 600)
        tgt = square(1000.0, 800, 480)
        plan = plan_naive_resize_crop(src, tgt)
        assert plan.source_crop_width == src.width
        out = adjusted_intrinsics(plan, src)
        assert compute_fov(out) == pytest.approx(compute_fov(src), abs=0.2)
        assert out.width == tgt.width and out.height == tgt.height


class TestReprojectPixel:
    def test_identity_pose_is_fixed_point(self, intrinsics_640):
        res = reproject_pixel((123.0, 45.0), 7.5, intrinsics_640,
                              RigidTransform.identity())
        assert (res.u, res.v) == pytest.approx((123.0, 45.0))
        assert res.depth == pytest.approx(7.5)
        assert not res.behind_camera

    def test_forward_translation_doubles_centered_offset(self, intrinsics_640):
        # Moving the camera halfway toward a fronto-parallel point doubles
        # its centered pixel coordinates. The transform maps old-frame
        # points into the new frame, so a camera advance of d/2 is
        # t_z = -d/2 on points.
        d = 10.0
        pose = RigidTransform.from_euler(translation=(0.0, 0.0, -d / 2))
        u, v = 400.0, 250.0
        res = reproject_pixel((u, v), d, intrinsics_640, pose)
        cx, cy = intrinsics_640.center_x, intrinsics_640.center_y
        assert res.u - cx == pytest.approx(2 * (u - cx))
        assert res.v - cy == pytest.approx(2 * (v - cy))

    def test_yaw_180_flags_behind_camera(self, intrinsics_640):
        pose = RigidTransform.from_euler(yaw_deg=180.0)
        res = reproject_pixel((320.0, 190.0), 5.0, intrinsics_640, pose)
        assert res.behind_camera

    def test_nonpositive_depth_rejected(self, intrinsics_640):
        with pytest.raises(ValidationError):
            reproject_pixel((1.0, 1.0), 0.0, intrinsics_640,
                            RigidTransform.identity())

    def test_homogeneous_input_normalized(self, intrinsics_640):
        res = reproject_pixel((246.0, 90.0, 2.0), 3.0, intrinsics_640,
                              RigidTransform.identity())
        assert (res.u, res.v) == pytest.approx((123.0, 45.0))


class TestIntrinsicsValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(focal_x=-1.0), dict(focal_y=0.0),
        dict(center_x=640.0), dict(center_y=-0.5),
        dict(width=-3), dict(height=0),
    ])
    def test_invalid_fields_rejected(self, kwargs):
        base = dict(focal_x=500.0, focal_y=500.0, center_x=319.5,
                    center_y=191.5, width=640, height=384)
        base.update(kwargs)
        with pytest.raises(ValidationError):
            CameraIntrinsics(**base)
