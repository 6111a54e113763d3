"""Robust linear fit between ground-truth depth and up-to-scale predictions.

The model is gt = slope * pred with zero intercept. Two Theil-Sen
variants are provided:

  - ``theil_sen_through_origin`` (default): the slope is the median of
    the per-sample ratios gt/pred. This honors the zero-offset model
    exactly and is invariant to corrupting strictly fewer than half of
    the ratios.
  - ``theil_sen_pairwise``: the classical estimator, the median of
    (gt_j - gt_i) / (pred_j - pred_i) over sample pairs. Pairs closer
    than ``PAIR_EPSILON`` in prediction value are skipped. When the pair
    count exceeds ``max_pairs`` the pairs are drawn by a seeded uniform
    sampler and the seed is recorded in the fit.

Medians are always exact (computed over collected values, never a
streaming approximation), so results do not depend on evaluation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

METHOD_THROUGH_ORIGIN = "theil_sen_through_origin"
METHOD_PAIRWISE = "theil_sen_pairwise"
FIT_METHODS = (METHOD_THROUGH_ORIGIN, METHOD_PAIRWISE)

# Pairs whose predictions differ by less than this are degenerate.
PAIR_EPSILON = 1e-12

DEFAULT_MAX_PAIRS = 10_000_000


@dataclass
class ScaleSamples:
    """Flat sample set: prediction/ground-truth pairs tagged by image.

    Stored as parallel arrays rather than one object per sample; test
    splits easily reach millions of valid pixels.
    """

    predicted: np.ndarray
    ground_truth: np.ndarray
    image_index: np.ndarray

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64).ravel()
        self.ground_truth = np.asarray(self.ground_truth, dtype=np.float64).ravel()
        self.image_index = np.asarray(self.image_index, dtype=np.int64).ravel()
        if not (len(self.predicted) == len(self.ground_truth) == len(self.image_index)):
            raise ValidationError("sample arrays must have equal length")
        if len(self.predicted) and (
                not np.all(self.predicted > 0) or not np.all(self.ground_truth > 0)):
            raise ValidationError("samples must have positive prediction and GT")

    def __len__(self) -> int:
        return len(self.predicted)

    @property
    def n_images(self) -> int:
        return len(np.unique(self.image_index))

    @classmethod
    def from_pairs(cls, pairs, image_index: int = 0) -> "ScaleSamples":
        """Build from an iterable of (predicted, ground_truth) tuples."""
        arr = np.asarray(list(pairs), dtype=np.float64)
        if arr.size == 0:
            arr = arr.reshape(0, 2)
        return cls(arr[:, 0], arr[:, 1],
                   np.full(len(arr), image_index, dtype=np.int64))

    def subset(self, mask: np.ndarray) -> "ScaleSamples":
        return ScaleSamples(self.predicted[mask], self.ground_truth[mask],
                            self.image_index[mask])

    def by_image(self):
        """Yield (image_index, ScaleSamples) groups in ascending index order."""
        order = np.argsort(self.image_index, kind="stable")
        idx_sorted = self.image_index[order]
        boundaries = np.flatnonzero(np.diff(idx_sorted)) + 1
        for chunk in np.split(order, boundaries):
            yield int(self.image_index[chunk[0]]), self.subset(chunk)


@dataclass
class PerImageSlopes:
    """Per-image slope statistics of a per-image fit."""

    mean: float
    std_dev: float
    values: np.ndarray
    image_indices: np.ndarray
    n_skipped_images: int = 0


@dataclass
class ScaleFit:
    """Result of a scale regression.

    ``slope`` maps up-to-scale predictions to meters. ``pearson`` is the
    sample correlation of the same (possibly filtered) samples the slope
    was fitted on.
    """

    slope: float
    method: str
    pearson: float
    n_samples: int
    n_images: int
    seed: int | None = None
    max_pairs: int | None = None
    n_pairs_used: int | None = None
    subsampled_pairs: bool = False
    per_image_slopes: PerImageSlopes | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "schema": "depthscale-fit v1",
            "slope": self.slope,
            "method": self.method,
            "pearson": self.pearson,
            "n_samples": self.n_samples,
            "n_images": self.n_images,
            "seed": self.seed,
            "max_pairs": self.max_pairs,
            "n_pairs_used": self.n_pairs_used,
            "subsampled_pairs": self.subsampled_pairs,
        }
        if self.per_image_slopes is not None:
            values = np.asarray(self.per_image_slopes.values, dtype=float)
            counts, edges = (np.histogram(values, bins=20)
                             if values.size else (np.zeros(0, int), np.zeros(0)))
            d["per_image"] = {
                "mean": self.per_image_slopes.mean,
                "std_dev": self.per_image_slopes.std_dev,
                "n_skipped_images": self.per_image_slopes.n_skipped_images,
                "image_indices": [int(v) for v in self.per_image_slopes.image_indices],
                "values": [float(v) for v in values],
                "histogram": {
                    "bin_edges": [float(v) for v in edges],
                    "counts": [int(c) for c in counts],
                },
            }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient of two sequences."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValidationError("pearson inputs must have equal length")
    if len(x) < 2:
        raise ValidationError(f"pearson needs at least 2 samples, got {len(x)}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ValidationError("pearson undefined: zero variance")
    return float(np.dot(dx, dy) / np.sqrt(sxx * syy))


def _slope_through_origin(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.median(gt / pred))


def _all_pair_slopes(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Slopes of every pair (i < j), degenerate pairs dropped.

    Enumerates row blocks rather than materializing index matrices so the
    working set stays linear in the slope count.
    """
    n = len(pred)
    chunks = []
    for i in range(n - 1):
        dx = pred[i + 1:] - pred[i]
        dy = gt[i + 1:] - gt[i]
        keep = np.abs(dx) > PAIR_EPSILON
        if keep.any():
            chunks.append(dy[keep] / dx[keep])
    if not chunks:
        return np.empty(0)
    return np.concatenate(chunks)


def _sampled_pair_slopes(pred: np.ndarray, gt: np.ndarray, max_pairs: int,
                         seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(pred), size=max_pairs)
    j = rng.integers(0, len(pred), size=max_pairs)
    dx = pred[j] - pred[i]
    keep = np.abs(dx) > PAIR_EPSILON
    return (gt[j][keep] - gt[i][keep]) / dx[keep]


def _fit_slope(pred: np.ndarray, gt: np.ndarray, method: str, max_pairs: int,
               seed: int) -> tuple[float, int | None, bool]:
    """Return (slope, n_pairs_used, subsampled) for one sample group."""
    if method == METHOD_THROUGH_ORIGIN:
        return _slope_through_origin(pred, gt), None, False
    if method != METHOD_PAIRWISE:
        raise ValidationError(f"unknown fit method {method!r}")
    n = len(pred)
    total_pairs = n * (n - 1) // 2
    if total_pairs <= max_pairs:
        slopes = _all_pair_slopes(pred, gt)
        subsampled = False
    else:
        slopes = _sampled_pair_slopes(pred, gt, max_pairs, seed)
        subsampled = True
    if len(slopes) == 0:
        raise ValidationError("all sample pairs are degenerate in prediction")
    return float(np.median(slopes)), len(slopes), subsampled


def fit_global_scale(samples: ScaleSamples, method: str = METHOD_THROUGH_ORIGIN,
                     max_pairs: int = DEFAULT_MAX_PAIRS,
                     seed: int = 0) -> ScaleFit:
    """Fit the global scale over all samples.

    Args:
        samples: positive prediction/GT pairs (at least 2).
        method: one of ``FIT_METHODS``.
        max_pairs: pairwise-method budget before seeded pair subsampling.
        seed: RNG seed for pair subsampling; recorded in the result.

    Raises:
        ValidationError: fewer than 2 samples, or every pair degenerate.
    """
    if len(samples) < 2:
        raise ValidationError(f"need at least 2 samples, got {len(samples)}")
    if max_pairs < 1:
        raise ValidationError(f"max_pairs must be >= 1, got {max_pairs}")
    slope, n_pairs, subsampled = _fit_slope(
        samples.predicted, samples.ground_truth, method, max_pairs, seed)
    try:
        r = pearson(samples.predicted, samples.ground_truth)
    except ValidationError:
        r = float("nan")  # constant samples: slope defined, correlation not
    return ScaleFit(
        slope=slope, method=method, pearson=r,
        n_samples=len(samples), n_images=samples.n_images,
        seed=seed if subsampled else None,
        max_pairs=max_pairs if method == METHOD_PAIRWISE else None,
        n_pairs_used=n_pairs, subsampled_pairs=subsampled,
    )


def fit_per_image_scales(samples: ScaleSamples,
                         method: str = METHOD_THROUGH_ORIGIN,
                         max_pairs: int = DEFAULT_MAX_PAIRS,
                         seed: int = 0) -> ScaleFit:
    """Fit one slope per image plus the global fit for side-by-side reporting.

    Images with too few samples for the method (pairwise needs 2,
    through-origin 1) are skipped and counted. Mean and std_dev are
    population statistics over the per-image slopes.
    """
    if len(samples) == 0:
        raise ValidationError("no samples")
    min_needed = 2 if method == METHOD_PAIRWISE else 1
    slopes, indices = [], []
    skipped = 0
    for image_idx, group in samples.by_image():
        if len(group) < min_needed:
            skipped += 1
            continue
        try:
            slope, _, _ = _fit_slope(group.predicted, group.ground_truth,
                                     method, max_pairs, seed)
        except ValidationError:
            skipped += 1  # e.g. all pairs degenerate within this image
            continue
        slopes.append(slope)
        indices.append(image_idx)
    if not slopes:
        raise ValidationError("no image had enough samples to fit")
    values = np.asarray(slopes)
    fit = fit_global_scale(samples, method=method, max_pairs=max_pairs, seed=seed)
    fit.per_image_slopes = PerImageSlopes(
        mean=float(values.mean()),
        std_dev=float(values.std()),
        values=values,
        image_indices=np.asarray(indices, dtype=np.int64),
        n_skipped_images=skipped,
    )
    return fit


def filter_by_absrel_norm(samples: ScaleSamples, threshold: float = 0.15
                          ) -> tuple[ScaleSamples, float, int]:
    """Drop samples whose median-aligned relative residual exceeds ``threshold``.

    Per image, alpha = median(gt) / median(pred); a sample is kept when
    |alpha * pred - gt| / gt <= threshold. Images whose prediction median
    is zero are dropped entirely and counted.

    Returns:
        (filtered samples, retained fraction over all pixels,
        number of dropped images).
    """
    if len(samples) == 0:
        raise ValidationError("no samples to filter")
    if threshold < 0:
        raise ValidationError(f"threshold must be >= 0, got {threshold}")
    keep = np.zeros(len(samples), dtype=bool)
    dropped_images = 0
    order = np.argsort(samples.image_index, kind="stable")
    idx_sorted = samples.image_index[order]
    boundaries = np.flatnonzero(np.diff(idx_sorted)) + 1
    for chunk in np.split(order, boundaries):
        pred = samples.predicted[chunk]
        gt = samples.ground_truth[chunk]
        med_pred = np.median(pred)
        if med_pred <= 0:
            dropped_images += 1
            continue
        alpha = np.median(gt) / med_pred
        residual = np.abs(alpha * pred - gt) / gt
        keep[chunk] = residual <= threshold
    retained = float(keep.sum() / len(samples))
    return samples.subset(keep), retained, dropped_images
