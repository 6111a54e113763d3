"""Rule-based local-motion masks for moving vehicles.

Self-supervised depth networks misestimate depth on objects that move
between frames, while a supervised network does not share that failure.
After normalizing both depth maps by their road-pixel median (which
cancels any common scale), a vehicle whose normalized depths disagree by
more than ``cutoff`` on at least ``fraction_percent`` of its pixels is
flagged as moving. Flagged pixels are masked out of downstream
self-supervised training.

Boundary conventions (documented, both sides arise in practice): the
depth-difference test is strict (> cutoff), the pixel-fraction test is
inclusive (>= fraction). The fraction denominator counts pixels valid in
both maps, recorded per instance in the verdict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthio import DepthMap, InstanceMask
from .errors import ValidationError

VERDICT_FLAGGED = "flagged"
VERDICT_STATIC = "static"
VERDICT_UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class MotionMaskConfig:
    """Thresholds of the local-motion rule.

    cutoff: normalized-depth difference above which a pixel disagrees
        (1.5 reflects depth deviations beyond 50% of the road median).
    fraction_percent: minimum share of a vehicle's valid pixels that must
        disagree before the vehicle counts as moving.
    min_road_pixels: road pixels required for a usable median.
    """

    cutoff: float = 1.5
    fraction_percent: float = 10.0
    min_road_pixels: int = 100

    def __post_init__(self):
        if self.cutoff <= 0:
            raise ValidationError(f"cutoff must be positive, got {self.cutoff}")
        if not 0 < self.fraction_percent <= 100:
            raise ValidationError(
                f"fraction_percent must be in (0, 100], got {self.fraction_percent}")
        if self.min_road_pixels < 1:
            raise ValidationError("min_road_pixels must be >= 1")


@dataclass
class InstanceVerdict:
    """Per-instance outcome of the motion rule."""

    instance_id: int
    n_pixels: int
    n_valid: int
    n_above_cutoff: int
    fraction_above: float
    verdict: str

    @property
    def flagged(self) -> bool:
        return self.verdict == VERDICT_FLAGGED


def road_median_normalize(depth: DepthMap, road_mask: np.ndarray,
                          min_road_pixels: int = 100) -> DepthMap:
    """Divide every valid depth by the median depth over valid road pixels.

    Raises ValidationError when fewer than ``min_road_pixels`` road pixels
    are valid; callers batching over a split should skip such images and
    record the reason.
    """
    road_mask = np.asarray(road_mask, dtype=bool)
    if road_mask.shape != depth.values.shape:
        raise ValidationError("road mask shape differs from depth map")
    usable = road_mask & depth.valid_mask
    n = int(usable.sum())
    if n < min_road_pixels:
        raise ValidationError(
            f"only {n} valid road pixels, need at least {min_road_pixels}")
    median = float(np.median(depth.values[usable]))
    values = np.where(depth.valid_mask, depth.values / median, 0.0)
    return DepthMap(values, depth.valid_mask, depth.kind)


def flag_moving_instances(d_sup_scaled: DepthMap, d_unsup_scaled: DepthMap,
                          instances: InstanceMask,
                          config: MotionMaskConfig = MotionMaskConfig()
                          ) -> tuple[np.ndarray, list[InstanceVerdict]]:
    """Apply the motion rule to every vehicle instance.

    Args:
        d_sup_scaled / d_unsup_scaled: road-median-normalized depth maps
            from the supervised and self-supervised estimators.
        instances: instance segmentation with vehicle ids.

    Returns:
        (mask, verdicts): boolean mask covering all pixels of flagged
        vehicles, and one verdict per vehicle instance (sorted by id).
        Instances with no pixel valid in both maps get verdict
        "undetermined" and are never flagged. Non-vehicle instances are
        not evaluated.
    """
    if d_sup_scaled.values.shape != d_unsup_scaled.values.shape:
        raise ValidationError("depth map shapes differ")
    if instances.labels.shape != d_sup_scaled.values.shape:
        raise ValidationError("instance mask shape differs from depth maps")

    both_valid = d_sup_scaled.valid_mask & d_unsup_scaled.valid_mask
    diff = np.abs(d_sup_scaled.values - d_unsup_scaled.values)

    mask = np.zeros(d_sup_scaled.values.shape, dtype=bool)
    verdicts = []
    for inst_id in instances.vehicle_ids():
        pixels = instances.labels == inst_id
        valid = pixels & both_valid
        n_valid = int(valid.sum())
        if n_valid == 0:
            verdicts.append(InstanceVerdict(
                inst_id, int(pixels.sum()), 0, 0, 0.0, VERDICT_UNDETERMINED))
            continue
        n_above = int((diff[valid] > config.cutoff).sum())
        fraction = n_above / n_valid
        flagged = fraction >= config.fraction_percent / 100.0
        if flagged:
            mask |= pixels
        verdicts.append(InstanceVerdict(
            inst_id, int(pixels.sum()), n_valid, n_above, fraction,
            VERDICT_FLAGGED if flagged else VERDICT_STATIC))
    return mask, verdicts
