"""Depth-accuracy metrics over a test split.

All metrics follow the per-image-then-over-images convention: each
metric is computed per image over that image's valid pixels, then
averaged uniformly over images (so pixel counts do not weight images).
Pooled-pixel variants, which much public evaluation code uses instead,
are available behind ``convention="pooled"`` and the report records
which convention produced its numbers.

Pixel validity: a pixel participates when the GT is valid, at most
``cap`` meters, inside the evaluation crop, and the prediction is valid.
Predictions are clamped to [PRED_CLAMP_MIN, cap] before ratios and logs;
the floor avoids division blowups from near-zero predictions while
staying below any plausible ground truth.

Medians over an even pixel count are the arithmetic mean of the two
central order statistics (numpy's definition); the per-image scaling
factor alpha is sensitive to this choice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .depthio import CROP_GARG, CROP_NONE, DepthMap
from .errors import ValidationError

PRED_CLAMP_MIN = 1e-3

CONVENTION_PER_IMAGE = "per-image"
CONVENTION_POOLED = "pooled"

# Standard Eigen-protocol evaluation rectangle fractions (Garg crop).
_GARG_TOP, _GARG_BOTTOM = 0.40810811, 0.99189189
_GARG_LEFT, _GARG_RIGHT = 0.03594771, 0.96405229

# CSV column order follows the customary results-table layout.
CSV_COLUMNS = ("abs_rel", "abs_rel_norm", "sq_rel", "rmse", "rmse_log",
               "delta_1", "delta_2", "delta_3",
               "scale_ratio_mean", "scale_ratio_std",
               "n_images", "n_valid_pixels")


def garg_crop(width: int, height: int) -> tuple[int, int, int, int]:
    """Evaluation rectangle (row0, row1, col0, col1), end-exclusive.

    Rows [0.40810811*h, 0.99189189*h), cols [0.03594771*w, 0.96405229*w),
    floor-rounded. Degenerate sizes yield an empty or single-pixel
    rectangle rather than raising.
    """
    if width <= 0 or height <= 0:
        raise ValidationError(f"invalid crop target {width}x{height}")
    return (int(_GARG_TOP * height), int(_GARG_BOTTOM * height),
            int(_GARG_LEFT * width), int(_GARG_RIGHT * width))


def crop_mask(width: int, height: int, crop: str) -> np.ndarray:
    """Boolean mask of pixels inside the named evaluation crop."""
    if crop == CROP_NONE:
        return np.ones((height, width), dtype=bool)
    if crop == CROP_GARG:
        mask = np.zeros((height, width), dtype=bool)
        r0, r1, c0, c1 = garg_crop(width, height)
        mask[r0:r1, c0:c1] = True
        return mask
    raise ValidationError(f"unknown crop {crop!r}")


def _valid_pixels(pred: DepthMap, gt: DepthMap, cap: float, crop: str
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (pred, gt) float64 vectors of the pixels both maps agree on."""
    if pred.values.shape != gt.values.shape:
        raise ValidationError(
            f"prediction {pred.values.shape} and GT {gt.values.shape} shapes differ")
    keep = gt.valid_mask & pred.valid_mask & (gt.values <= cap)
    keep &= crop_mask(gt.width, gt.height, crop)
    return (pred.values[keep].astype(np.float64),
            gt.values[keep].astype(np.float64))


def _clamp(pred: np.ndarray, cap: float) -> np.ndarray:
    return np.clip(pred, PRED_CLAMP_MIN, cap)


def _per_image_terms(preds, gts, cap, crop, term_fn, skip_fn=None):
    """Evaluate ``term_fn(pred_vec, gt_vec)`` per image and return the list.

    Images with no valid pixels (or rejected by ``skip_fn``) are excluded
    and counted. Raises when no image survives.
    """
    if len(preds) != len(gts):
        raise ValidationError("prediction and GT lists differ in length")
    if len(preds) == 0:
        raise ValidationError("empty split")
    terms, n_excluded = [], 0
    for pred, gt in zip(preds, gts):
        p, g = _valid_pixels(pred, gt, cap, crop)
        if len(p) == 0 or (skip_fn is not None and skip_fn(p, g)):
            n_excluded += 1
            continue
        terms.append(term_fn(p, g))
    if not terms:
        raise ValidationError("no image has valid overlapping pixels")
    return terms, n_excluded


def _mean(terms) -> float:
    return float(np.mean(terms))


def abs_rel(preds, gts, cap: float = 80.0, crop: str = CROP_NONE) -> float:
    """Mean over images of mean |pred - gt| / gt. Predictions are absolute."""
    terms, _ = _per_image_terms(
        preds, gts, cap, crop,
        lambda p, g: float(np.mean(np.abs(_clamp(p, cap) - g) / g)))
    return _mean(terms)


def _zero_median(p: np.ndarray, g: np.ndarray) -> bool:
    return float(np.median(p)) <= 0.0


def _abs_rel_norm_term(cap):
    def term(p, g):
        alpha = np.median(g) / np.median(p)
        scaled = _clamp(alpha * p, cap)
        return float(np.mean(np.abs(scaled - g) / g))
    return term


def abs_rel_norm(preds, gts, cap: float = 80.0, crop: str = CROP_NONE) -> float:
    """AbsRel after per-image median alignment of the predictions.

    alpha = median(gt) / median(pred) per image, then AbsRel of
    alpha * pred. Invariant to any per-image positive rescaling of the
    predictions, so it scores up-to-scale predictions on equal footing.
    Images with a nonpositive prediction median are excluded and counted.
    """
    terms, _ = _per_image_terms(preds, gts, cap, crop,
                                _abs_rel_norm_term(cap), skip_fn=_zero_median)
    return _mean(terms)


def scale_ratio(preds, gts, cap: float = 80.0, crop: str = CROP_NONE
                ) -> tuple[float, float]:
    """Per-image median(pred/gt); returns (mean, population std) over images.

    1.0 means the absolute predictions are perfectly scaled. The spread
    is the std over images (reported as the +- in results tables).
    """
    terms, _ = _per_image_terms(
        preds, gts, cap, crop,
        lambda p, g: float(np.median(_clamp(p, cap) / g)))
    values = np.asarray(terms)
    return float(values.mean()), float(values.std())


def threshold_accuracy(preds, gts, cap: float = 80.0, crop: str = CROP_NONE,
                       powers=(1, 2, 3)) -> tuple[float, ...]:
    """delta_k: fraction of pixels with max(pred/gt, gt/pred) < 1.25**k,
    per image then averaged over images."""
    def term(p, g):
        ratio = np.maximum(_clamp(p, cap) / g, g / _clamp(p, cap))
        return tuple(float(np.mean(ratio < 1.25 ** k)) for k in powers)

    terms, _ = _per_image_terms(preds, gts, cap, crop, term)
    arr = np.asarray(terms)
    return tuple(float(v) for v in arr.mean(axis=0))


def sq_rel(preds, gts, cap: float = 80.0, crop: str = CROP_NONE) -> float:
    """Mean over images of mean (pred - gt)^2 / gt."""
    terms, _ = _per_image_terms(
        preds, gts, cap, crop,
        lambda p, g: float(np.mean((_clamp(p, cap) - g) ** 2 / g)))
    return _mean(terms)


def rmse(preds, gts, cap: float = 80.0, crop: str = CROP_NONE) -> float:
    """Mean over images of per-image sqrt(mean (pred - gt)^2), in meters."""
    terms, _ = _per_image_terms(
        preds, gts, cap, crop,
        lambda p, g: float(np.sqrt(np.mean((_clamp(p, cap) - g) ** 2))))
    return _mean(terms)


def rmse_log(preds, gts, cap: float = 80.0, crop: str = CROP_NONE) -> float:
    """Mean over images of per-image sqrt(mean (ln pred - ln gt)^2)."""
    terms, _ = _per_image_terms(
        preds, gts, cap, crop,
        lambda p, g: float(np.sqrt(np.mean((np.log(_clamp(p, cap)) - np.log(g)) ** 2))))
    return _mean(terms)


@dataclass
class MetricsReport:
    """All accuracy metrics of a split plus bookkeeping counts."""

    abs_rel: float
    abs_rel_norm: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta_1: float
    delta_2: float
    delta_3: float
    scale_ratio_mean: float
    scale_ratio_std: float
    n_images: int
    n_valid_pixels: int
    n_images_excluded: int = 0
    n_images_excluded_norm: int = 0
    convention: str = CONVENTION_PER_IMAGE
    cap: float = 80.0
    crop: str = CROP_NONE
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.delta_1 <= self.delta_2 <= self.delta_3):
            raise ValidationError("delta fractions must be non-decreasing")
        for name in ("abs_rel", "abs_rel_norm", "sq_rel", "rmse", "rmse_log",
                     "delta_1", "delta_2", "delta_3",
                     "scale_ratio_mean", "scale_ratio_std"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        d = {
            "schema": "depthscale-metrics v1",
            "convention": self.convention,
            "cap": self.cap,
            "crop": self.crop,
            "metrics": {name: getattr(self, name) for name in CSV_COLUMNS[:10]},
            "n_images": self.n_images,
            "n_valid_pixels": self.n_valid_pixels,
            "n_images_excluded": self.n_images_excluded,
            "n_images_excluded_norm": self.n_images_excluded_norm,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def csv_row(self) -> str:
        return ",".join(repr(getattr(self, c)) if isinstance(getattr(self, c), float)
                        else str(getattr(self, c)) for c in CSV_COLUMNS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(CSV_COLUMNS)


def compute_metrics_report(preds, gts, cap: float = 80.0, crop: str = CROP_NONE,
                           convention: str = CONVENTION_PER_IMAGE) -> MetricsReport:
    """Compute every metric of :class:`MetricsReport` in one pass.

    ``preds`` are treated as absolute for abs_rel/sq_rel/rmse/rmse_log/
    delta/scale_ratio and are median-aligned per image for abs_rel_norm,
    so the same maps serve both columns. scale_ratio is per-image by
    definition and keeps that convention even under ``pooled``.
    """
    if convention not in (CONVENTION_PER_IMAGE, CONVENTION_POOLED):
        raise ValidationError(f"unknown convention {convention!r}")

    collected = []
    n_excluded = 0
    for pred, gt in zip(preds, gts):
        p, g = _valid_pixels(pred, gt, cap, crop)
        if len(p) == 0:
            n_excluded += 1
            continue
        collected.append((p, g))
    if len(preds) != len(gts):
        raise ValidationError("prediction and GT lists differ in length")
    if not collected:
        raise ValidationError("no image has valid overlapping pixels")

    norm_term = _abs_rel_norm_term(cap)
    norm_terms = []
    n_excluded_norm = 0
    aligned_pool = []
    for p, g in collected:
        if _zero_median(p, g):
            n_excluded_norm += 1
            continue
        norm_terms.append(norm_term(p, g))
        alpha = np.median(g) / np.median(p)
        aligned_pool.append((_clamp(alpha * p, cap), g))
    if not norm_terms:
        raise ValidationError("no image has a positive prediction median")

    ratio_terms = [float(np.median(_clamp(p, cap) / g)) for p, g in collected]
    ratios = np.asarray(ratio_terms)

    if convention == CONVENTION_PER_IMAGE:
        def agg(term_fn):
            return float(np.mean([term_fn(p, g) for p, g in collected]))
        abs_rel_norm_value = float(np.mean(norm_terms))
    else:
        pool_p = np.concatenate([p for p, _ in collected])
        pool_g = np.concatenate([g for _, g in collected])

        def agg(term_fn):
            return float(term_fn(pool_p, pool_g))
        npool = (np.concatenate([p for p, _ in aligned_pool]),
                 np.concatenate([g for _, g in aligned_pool]))
        abs_rel_norm_value = float(np.mean(np.abs(npool[0] - npool[1]) / npool[1]))

    def cp(p):
        return _clamp(p, cap)

    def delta_triple(p, g):
        ratio = np.maximum(cp(p) / g, g / cp(p))
        return [float(np.mean(ratio < 1.25 ** k)) for k in (1, 2, 3)]

    if convention == CONVENTION_PER_IMAGE:
        delta_arr = np.mean([delta_triple(p, g) for p, g in collected], axis=0)
    else:
        delta_arr = delta_triple(np.concatenate([p for p, _ in collected]),
                                 np.concatenate([g for _, g in collected]))

    return MetricsReport(
        abs_rel=agg(lambda p, g: np.mean(np.abs(cp(p) - g) / g)),
        abs_rel_norm=abs_rel_norm_value,
        sq_rel=agg(lambda p, g: np.mean((cp(p) - g) ** 2 / g)),
        rmse=agg(lambda p, g: np.sqrt(np.mean((cp(p) - g) ** 2))),
        rmse_log=agg(lambda p, g: np.sqrt(np.mean((np.log(cp(p)) - np.log(g)) ** 2))),
        delta_1=float(delta_arr[0]), delta_2=float(delta_arr[1]),
        delta_3=float(delta_arr[2]),
        scale_ratio_mean=float(ratios.mean()),
        scale_ratio_std=float(ratios.std()),
        n_images=len(collected),
        n_valid_pixels=int(sum(len(p) for p, _ in collected)),
        n_images_excluded=n_excluded,
        n_images_excluded_norm=n_excluded_norm,
        convention=convention, cap=cap, crop=crop,
    )
