"""Pinhole-camera FOV math and source-to-target FOV adjustment geometry.

A camera domain is identified by its :class:`CameraIntrinsics`. Matching
the field of view of a source domain to a target domain is a center
crop (or pad, when the required crop exceeds the source frame) followed
by a resize to the target image size; :func:`plan_fov_adjustment`
computes the crop rectangle and :func:`apply_plan_to_depth` /
:func:`apply_plan_to_rgb` execute it on arrays.

Conventions used throughout:
  - image arrays are row-major ``(height, width)``; pixel centers sit at
    integer coordinates, so pixel ``(u, v)`` spans ``[u-0.5, u+0.5)``;
  - the camera frame is x-right, y-down, z-forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from .errors import ValidationError

HORIZONTAL = "horizontal"
VERTICAL = "vertical"

# Adjustment modes. "fov" is the geometry-preserving path; the naive
# modes replicate the two incorrect resizing strategies used as foils
# (center crop to target size / width-wise resize then height crop).
MODE_FOV = "fov"
MODE_NAIVE_CENTER_CROP = "naive_center_crop"
MODE_NAIVE_RESIZE_CROP = "naive_resize_crop"
ADJUST_MODES = (MODE_FOV, MODE_NAIVE_CENTER_CROP, MODE_NAIVE_RESIZE_CROP)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixel units.

    Attributes:
        focal_x, focal_y: focal lengths in pixels, > 0.
        center_x, center_y: principal point, inside the image.
        width, height: image size in integer pixels, > 0.
    """

    focal_x: float
    focal_y: float
    center_x: float
    center_y: float
    width: int
    height: int

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValidationError("image size must be integral pixels")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"image size must be positive, got {self.width}x{self.height}")
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise ValidationError(
                f"focal lengths must be positive, got ({self.focal_x}, {self.focal_y})")
        if not (0 <= self.center_x < self.width and 0 <= self.center_y < self.height):
            raise ValidationError(
                f"principal point ({self.center_x}, {self.center_y}) outside "
                f"{self.width}x{self.height} image")

    @property
    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K."""
        return np.array([
            [self.focal_x, 0.0, self.center_x],
            [0.0, self.focal_y, self.center_y],
            [0.0, 0.0, 1.0],
        ])

    @classmethod
    def from_fov(cls, fov_deg: float, width: int, height: int,
                 center_x: float | None = None,
                 center_y: float | None = None) -> "CameraIntrinsics":
        """Build square-pixel intrinsics from a horizontal FOV in degrees."""
        f = focal_for_fov(fov_deg, width)
        return cls(
            focal_x=f, focal_y=f,
            center_x=(width - 1) / 2.0 if center_x is None else center_x,
            center_y=(height - 1) / 2.0 if center_y is None else center_y,
            width=width, height=height,
        )


def compute_fov(intrinsics: CameraIntrinsics, axis: str = HORIZONTAL) -> float:
    """Field of view of a camera along one axis, in degrees.

    FOV = 2*atan(w / (2f)) with w the image extent and f the focal length
    on that axis. The result lies in (0, 180).
    """
    if axis == HORIZONTAL:
        extent, focal = intrinsics.width, intrinsics.focal_x
    elif axis == VERTICAL:
        extent, focal = intrinsics.height, intrinsics.focal_y
    else:
        raise ValidationError(f"unknown axis {axis!r}")
    return math.degrees(2.0 * math.atan2(extent, 2.0 * focal))


def focal_for_fov(fov_deg: float, extent: float) -> float:
    """Focal length (pixels) giving ``fov_deg`` over ``extent`` pixels."""
    if not 0.0 < fov_deg < 180.0:
        raise ValidationError(f"FOV must be in (0, 180) degrees, got {fov_deg}")
    return extent / (2.0 * math.tan(math.radians(fov_deg) / 2.0))


@dataclass(frozen=True)
class FovAdjustPlan:
    """Crop-(or pad-)then-resize recipe taking a source frame to a target frame.

    ``crop_*`` are pixels removed from each source border; negative values
    mean that many pixels of padding instead. RGB padding uses reflection,
    depth padding uses zeros (invalid); RGB resizes bilinearly, depth and
    label maps resize nearest-neighbor. These policies are fixed fields so
    a serialized plan is self-describing.
    """

    crop_left: int
    crop_top: int
    crop_right: int
    crop_bottom: int
    source_crop_width: int
    source_crop_height: int
    output_width: int
    output_height: int
    rgb_pad_mode: str = "reflection"
    depth_pad_mode: str = "zero"
    resize_filter_rgb: str = "bilinear"
    resize_filter_depth: str = "nearest"

    @property
    def is_identity(self) -> bool:
        return (self.crop_left == 0 and self.crop_top == 0
                and self.crop_right == 0 and self.crop_bottom == 0
                and self.source_crop_width == self.output_width
                and self.source_crop_height == self.output_height)

    @property
    def pads(self) -> bool:
        return min(self.crop_left, self.crop_top,
                   self.crop_right, self.crop_bottom) < 0


def _round_crop(raw: float) -> int:
    """Round a crop extent to the nearest even integer.

    Even extents make symmetric crops and pads split into integer halves.
    Exact integers are kept as-is so that a no-op adjustment (raw equal to
    the source extent) stays a pixel-exact identity even for odd sizes.
    """
    if raw == int(raw):
        return int(raw)
    return int(round(raw / 2.0)) * 2


def _crop_bounds(center: float, crop: int, source_extent: int) -> tuple[int, int]:
    """Left/right (or top/bottom) crop amounts for a crop of ``crop`` pixels
    centered on ``center``. Negative amounts are padding; when the split is
    odd the extra pixel goes to the right/bottom."""
    first = int(math.floor(center + 0.5)) - crop // 2
    if crop >= source_extent or first < 0 or first + crop > source_extent:
        # Padding is required on at least one side; split symmetrically
        # around the frame instead of the principal point so both pads
        # stay minimal.
        pad_total = crop - source_extent
        lead = -(pad_total // 2) if pad_total > 0 else first
        if pad_total > 0:
            return lead, -(pad_total - (pad_total // 2))
    lead = first
    trail = source_extent - (first + crop)
    return lead, trail


def plan_fov_adjustment(source: CameraIntrinsics,
                        target: CameraIntrinsics) -> FovAdjustPlan:
    """Plan the crop/pad + resize that matches the source FOV to the target.

    The crop extents are ``w = round(target.width * f_S / f_T)`` and
    ``h = round(target.height * f_S / f_T)`` (focal_x convention on both
    axes), centered on the source principal point. Crops larger than the
    source frame are recorded as negative crop amounts and filled by
    padding at apply time. Applying the plan and resizing to the target
    size yields an image whose effective FOV equals the target FOV up to
    crop rounding.
    """
    ratio = source.focal_x / target.focal_x
    crop_w = _round_crop(target.width * ratio)
    crop_h = _round_crop(target.height * ratio)
    if crop_w < 2 or crop_h < 2:
        raise ValidationError(
            f"degenerate focal ratio {ratio}: crop would be {crop_w}x{crop_h}")
    left, right = _crop_bounds(source.center_x, crop_w, source.width)
    top, bottom = _crop_bounds(source.center_y, crop_h, source.height)
    return FovAdjustPlan(
        crop_left=left, crop_top=top, crop_right=right, crop_bottom=bottom,
        source_crop_width=crop_w, source_crop_height=crop_h,
        output_width=target.width, output_height=target.height,
    )


def plan_naive_center_crop(source: CameraIntrinsics,
                           target: CameraIntrinsics) -> FovAdjustPlan:
    """Naive mode A: center crop the source to the target size, no resize."""
    left, right = _crop_bounds(source.center_x, target.width, source.width)
    top, bottom = _crop_bounds(source.center_y, target.height, source.height)
    return FovAdjustPlan(
        crop_left=left, crop_top=top, crop_right=right, crop_bottom=bottom,
        source_crop_width=target.width, source_crop_height=target.height,
        output_width=target.width, output_height=target.height,
    )


def plan_naive_resize_crop(source: CameraIntrinsics,
                           target: CameraIntrinsics) -> FovAdjustPlan:
    """Naive mode B: resize the source width-wise to the target width,
    then crop rows to the target height.

    Expressed as a plan, this keeps the full source width and crops a
    height band whose extent maps onto the target height after the
    width-driven uniform resize.
    """
    crop_h = _round_crop(target.height * source.width / target.width)
    top, bottom = _crop_bounds(source.center_y, crop_h, source.height)
    return FovAdjustPlan(
        crop_left=0, crop_top=top, crop_right=0, crop_bottom=bottom,
        source_crop_width=source.width, source_crop_height=crop_h,
        output_width=target.width, output_height=target.height,
    )


def plan_adjustment(source: CameraIntrinsics, target: CameraIntrinsics,
                    mode: str = MODE_FOV) -> FovAdjustPlan:
    """Dispatch to the planner for ``mode`` (see ``ADJUST_MODES``)."""
    if mode == MODE_FOV:
        return plan_fov_adjustment(source, target)
    if mode == MODE_NAIVE_CENTER_CROP:
        return plan_naive_center_crop(source, target)
    if mode == MODE_NAIVE_RESIZE_CROP:
        return plan_naive_resize_crop(source, target)
    raise ValidationError(f"unknown adjustment mode {mode!r}")


def adjusted_intrinsics(plan: FovAdjustPlan,
                        source: CameraIntrinsics) -> CameraIntrinsics:
    """True intrinsics of the image produced by applying ``plan``.

    Cropping shifts the principal point; resizing scales focal lengths
    and the principal point per axis (pixel-center convention).
    """
    sx = plan.output_width / plan.source_crop_width
    sy = plan.output_height / plan.source_crop_height
    cx = (source.center_x - plan.crop_left + 0.5) * sx - 0.5
    cy = (source.center_y - plan.crop_top + 0.5) * sy - 0.5
    # Pads larger than the frame can push the principal point outside the
    # output; clamp just inside rather than reject, the plan stays usable.
    cx = min(max(cx, 0.0), plan.output_width - 1e-9)
    cy = min(max(cy, 0.0), plan.output_height - 1e-9)
    return CameraIntrinsics(
        focal_x=source.focal_x * sx, focal_y=source.focal_y * sy,
        center_x=cx, center_y=cy,
        width=plan.output_width, height=plan.output_height,
    )


def _nearest_indices(n_out: int, n_src: int) -> np.ndarray:
    """Source indices sampled by a nearest-neighbor resize (pixel centers).

    For n_out == n_src this is the identity, making same-size resizes
    pixel-exact.
    """
    idx = np.floor((np.arange(n_out) + 0.5) * (n_src / n_out)).astype(np.intp)
    return np.clip(idx, 0, n_src - 1)


def _pad_reflect(arr: np.ndarray, pads: tuple[tuple[int, int], tuple[int, int]]) -> np.ndarray:
    """np.pad(mode="reflect") that tolerates pads wider than the array."""
    out = arr
    remaining = [list(p) for p in pads]
    while any(p[0] > 0 or p[1] > 0 for p in remaining):
        step = []
        for axis, p in enumerate(remaining):
            limit = out.shape[axis] - 1
            if limit < 1:
                raise ValidationError("cannot reflect-pad a 1-pixel axis")
            lo = min(p[0], limit)
            hi = min(p[1], limit)
            p[0] -= lo
            p[1] -= hi
            step.append((lo, hi))
        width = step + [(0, 0)] * (arr.ndim - 2)
        out = np.pad(out, width, mode="reflect")
    return out


def _crop_or_pad(arr: np.ndarray, plan: FovAdjustPlan, pad_mode: str,
                 fill=0) -> np.ndarray:
    """Extract the plan's source rectangle, padding where crops are negative."""
    top, bottom = plan.crop_top, plan.crop_bottom
    left, right = plan.crop_left, plan.crop_right
    h, w = arr.shape[:2]
    sl_rows = slice(max(top, 0), h - max(bottom, 0))
    sl_cols = slice(max(left, 0), w - max(right, 0))
    core = arr[sl_rows, sl_cols]
    pads = ((max(-top, 0), max(-bottom, 0)), (max(-left, 0), max(-right, 0)))
    if pads == ((0, 0), (0, 0)):
        return core
    if pad_mode == "reflection":
        return _pad_reflect(core, pads)
    if pad_mode == "zero":
        width = list(pads) + [(0, 0)] * (arr.ndim - 2)
        return np.pad(core, width, mode="constant", constant_values=fill)
    raise ValidationError(f"unknown pad mode {pad_mode!r}")


def resize_nearest(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbor resize of a 2D array (values, masks, or labels)."""
    rows = _nearest_indices(height, arr.shape[0])
    cols = _nearest_indices(width, arr.shape[1])
    return arr[np.ix_(rows, cols)]


def apply_plan_to_depth(plan: FovAdjustPlan, values: np.ndarray,
                        valid_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply a plan to a depth map: zero padding, nearest resize.

    Nearest-neighbor keeps every output pixel an actual source depth;
    interpolating across object boundaries would invent nonphysical
    depths. Padded regions come out invalid.

    Returns:
        (values, valid_mask) at the plan's output size.
    """
    if values.shape != valid_mask.shape:
        raise ValidationError("depth values and mask shapes differ")
    v = _crop_or_pad(values, plan, plan.depth_pad_mode, fill=0)
    m = _crop_or_pad(valid_mask, plan, plan.depth_pad_mode, fill=False)
    if v.shape != (plan.output_height, plan.output_width):
        v = resize_nearest(v, plan.output_width, plan.output_height)
        m = resize_nearest(m, plan.output_width, plan.output_height)
    return v, m


def apply_plan_to_labels(plan: FovAdjustPlan, labels: np.ndarray,
                         fill=0) -> np.ndarray:
    """Apply a plan to an integer/boolean label map (nearest, constant pad)."""
    out = _crop_or_pad(labels, plan, "zero", fill=fill)
    if out.shape != (plan.output_height, plan.output_width):
        out = resize_nearest(out, plan.output_width, plan.output_height)
    return out


def apply_plan_to_rgb(plan: FovAdjustPlan, image: np.ndarray) -> np.ndarray:
    """Apply a plan to an HxWx3 uint8 image: reflection padding, bilinear resize."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError(f"expected HxWx3 RGB array, got shape {image.shape}")
    out = _crop_or_pad(image, plan, plan.rgb_pad_mode)
    if out.shape[:2] != (plan.output_height, plan.output_width):
        pil = Image.fromarray(np.ascontiguousarray(out))
        pil = pil.resize((plan.output_width, plan.output_height),
                         Image.Resampling.BILINEAR)
        out = np.asarray(pil)
    return out


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation taking points from one camera frame to another."""

    rotation: np.ndarray    # 3x3
    translation: np.ndarray  # (3,)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_euler(cls, yaw_deg: float = 0.0, pitch_deg: float = 0.0,
                   roll_deg: float = 0.0,
                   translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Yaw about y (down), pitch about x (right), roll about z (forward)."""
        y, p, r = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
        ry = np.array([[math.cos(y), 0, math.sin(y)],
                       [0, 1, 0],
                       [-math.sin(y), 0, math.cos(y)]])
        rx = np.array([[1, 0, 0],
                       [0, math.cos(p), -math.sin(p)],
                       [0, math.sin(p), math.cos(p)]])
        rz = np.array([[math.cos(r), -math.sin(r), 0],
                       [math.sin(r), math.cos(r), 0],
                       [0, 0, 1]])
        return cls(ry @ rx @ rz, np.asarray(translation, dtype=float))


@dataclass(frozen=True)
class ReprojectedPixel:
    """Result of reprojecting one pixel into another view."""

    u: float
    v: float
    depth: float
    behind_camera: bool


def reproject_pixel(pixel, depth: float, intrinsics: CameraIntrinsics,
                    relative_pose: RigidTransform) -> ReprojectedPixel:
    """Map a homogeneous pixel at a known depth into another view.

    Back-projects ``pixel`` to the 3D point ``depth * K^-1 * p``, applies
    the rigid transform, and projects with K again. A point that lands at
    or behind the camera plane is returned flagged rather than raising,
    so callers can drop it.
    """
    if depth <= 0:
        raise ValidationError(f"depth must be positive, got {depth}")
    p = np.asarray(pixel, dtype=float)
    if p.shape == (2,):
        p = np.array([p[0], p[1], 1.0])
    if p.shape != (3,):
        raise ValidationError(f"pixel must be a 2D or homogeneous point, got {p.shape}")
    if p[2] == 0:
        raise ValidationError("pixel at infinity")
    p = p / p[2]
    k = intrinsics.matrix
    point = depth * (np.linalg.inv(k) @ p)
    moved = relative_pose.rotation @ point + relative_pose.translation
    if moved[2] <= 0:
        return ReprojectedPixel(math.nan, math.nan, moved[2], behind_camera=True)
    proj = k @ moved
    return ReprojectedPixel(proj[0] / proj[2], proj[1] / proj[2],
                            moved[2], behind_camera=False)
