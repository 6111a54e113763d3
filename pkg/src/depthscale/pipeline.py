"""End-to-end stages: FOV-adjust, fit, apply, evaluate, motion masks, synth.

Every stage reads a manifest, materializes its outputs to disk next to a
new manifest, and returns the in-memory result, so each stage is
independently re-runnable and auditable. Reports contain no absolute
paths or timestamps; two runs with identical inputs and seeds produce
byte-identical trees.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import camera, depthio, metrics, motion, regression, synth
from .camera import CameraIntrinsics
from .depthio import DatasetManifest, DepthMap, ManifestEntry
from .errors import ManifestError, ValidationError

DEFAULT_PIXEL_BUDGET = 2000


@dataclass(frozen=True)
class DatasetPreset:
    """Published camera geometry of a supported capture rig."""

    name: str
    fov_deg: float
    width: int
    height: int
    camera_height_m: float

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.fov_deg, self.width, self.height)


# Horizontal FOVs and camera heights of the rigs these tools are usually
# pointed at, with their conventional full-resolution image sizes.
PRESETS = {
    "kitti": DatasetPreset("kitti", 81.43, 1242, 375, 1.65),
    "ddad1": DatasetPreset("ddad1", 47.85, 1936, 1216, 1.55),
    "nuscenes1": DatasetPreset("nuscenes1", 64.8, 1600, 900, 1.51),
    "vkitti2": DatasetPreset("vkitti2", 81.16, 1242, 375, 1.58),
}


def resolve_intrinsics(spec: str) -> CameraIntrinsics:
    """Resolve a preset name or a path to a one-line intrinsics file.

    The file format is the manifest's intrinsics line without the key:
    ``fx fy cx cy width height`` (whitespace-separated).
    """
    if spec in PRESETS:
        return PRESETS[spec].intrinsics()
    path = Path(spec)
    if not path.exists():
        raise ValidationError(
            f"{spec!r} is neither a preset ({', '.join(sorted(PRESETS))}) "
            f"nor an existing intrinsics file")
    parts = path.read_text().split()
    if len(parts) != 6:
        raise ValidationError(f"{spec}: expected 'fx fy cx cy width height'")
    try:
        fx, fy, cx, cy = (float(v) for v in parts[:4])
        w, h = (int(v) for v in parts[4:])
    except ValueError as exc:
        raise ValidationError(f"{spec}: {exc}") from exc
    return CameraIntrinsics(fx, fy, cx, cy, w, h)


def _map_entries(entries, fn, jobs: int):
    """Apply ``fn`` to (index, entry) pairs, optionally in threads.

    Results are returned in entry order regardless of completion order.
    """
    indexed = list(enumerate(entries))
    if jobs <= 1:
        return [fn(i, e) for i, e in indexed]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda ie: fn(*ie), indexed))


def run_fov_adjust(source_manifest: DatasetManifest,
                   target_intrinsics: CameraIntrinsics,
                   mode: str = camera.MODE_FOV,
                   out_dir=".", jobs: int = 1) -> DatasetManifest:
    """Transform a split's images and maps to the target camera geometry.

    In ``fov`` mode the output manifest carries the target intrinsics and
    ``geometry: fov_adjusted``; the naive modes carry the true (wrong-FOV)
    intrinsics of their output and ``geometry: uncorrected``. All present
    maps are transformed: RGB bilinearly with reflection padding, depth
    and label maps nearest-neighbor with zero padding.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = camera.plan_adjustment(source_manifest.intrinsics,
                                  target_intrinsics, mode)

    def adjust_entry(i: int, entry: ManifestEntry) -> ManifestEntry:
        stem = f"{i:05d}"
        image = depthio.read_rgb(source_manifest.resolve(entry.image_path))
        if image.shape[:2] != (source_manifest.intrinsics.height,
                               source_manifest.intrinsics.width):
            raise ValidationError(
                f"{entry.image_path}: image size {image.shape[1::-1]} does not "
                f"match manifest intrinsics")
        image_name = f"{stem}_image.png"
        depthio.write_rgb(camera.apply_plan_to_rgb(plan, image),
                          out_dir / image_name)
        new = ManifestEntry(image_path=image_name)

        def adjust_depth(rel_path, kind, out_name):
            dm = depthio.read_depth_auto(source_manifest.resolve(rel_path),
                                         kind, source_manifest.png16_divisor)
            values, mask = camera.apply_plan_to_depth(plan, dm.values, dm.valid_mask)
            out = DepthMap(values, mask, kind)
            if Path(rel_path).suffix.lower() == ".pfm":
                depthio.write_depth_pfm(out, out_dir / out_name)
            else:
                depthio.write_depth_png16(out, out_dir / out_name,
                                          source_manifest.png16_divisor)
            return out_name

        if entry.gt_depth_path is not None:
            name = f"{stem}_gt{Path(entry.gt_depth_path).suffix.lower()}"
            new.gt_depth_path = adjust_depth(entry.gt_depth_path,
                                             depthio.KIND_GROUND_TRUTH, name)
        if entry.prediction_path is not None:
            name = f"{stem}_pred{Path(entry.prediction_path).suffix.lower()}"
            new.prediction_path = adjust_depth(entry.prediction_path,
                                               source_manifest.prediction_kind, name)
        if entry.road_mask_path is not None:
            road = depthio.read_binary_mask(source_manifest.resolve(entry.road_mask_path))
            name = f"{stem}_road.png"
            depthio.write_binary_mask(camera.apply_plan_to_labels(plan, road, fill=False),
                                      out_dir / name)
            new.road_mask_path = name
        if entry.instance_mask_path is not None:
            inst = depthio.read_instance_mask(
                source_manifest.resolve(entry.instance_mask_path))
            labels = camera.apply_plan_to_labels(plan, inst.labels, fill=0)
            surviving = set(np.unique(labels).tolist())
            classes = {i: c for i, c in inst.class_of_instance.items()
                       if i in surviving}
            name = f"{stem}_instances.png"
            depthio.write_instance_mask(depthio.InstanceMask(labels, classes),
                                        out_dir / name)
            new.instance_mask_path = name
        if entry.motion_mask_path is not None:
            mm = depthio.read_binary_mask(source_manifest.resolve(entry.motion_mask_path))
            name = f"{stem}_motion.png"
            depthio.write_binary_mask(camera.apply_plan_to_labels(plan, mm, fill=False),
                                      out_dir / name)
            new.motion_mask_path = name
        return new

    new_entries = _map_entries(source_manifest.entries, adjust_entry, jobs)
    if mode == camera.MODE_FOV:
        out_intrinsics = target_intrinsics
        geometry = "fov_adjusted"
    else:
        out_intrinsics = camera.adjusted_intrinsics(plan, source_manifest.intrinsics)
        geometry = "uncorrected"
    adjusted = DatasetManifest(
        split_name=f"{source_manifest.split_name}-{mode}",
        intrinsics=out_intrinsics,
        entries=new_entries,
        depth_cap=source_manifest.depth_cap,
        eval_crop=source_manifest.eval_crop,
        prediction_kind=source_manifest.prediction_kind,
        geometry=geometry,
        png16_divisor=source_manifest.png16_divisor,
        base_dir=out_dir,
    )
    depthio.save_manifest(adjusted, out_dir / "manifest.txt")
    return adjusted


def assemble_samples(manifest: DatasetManifest,
                     budget_per_image: int = DEFAULT_PIXEL_BUDGET,
                     seed: int = 0) -> regression.ScaleSamples:
    """Collect (prediction, GT) sample pairs from a manifest.

    Pixels must be valid in both maps, inside the manifest's eval crop,
    have GT at most depth_cap, and a positive prediction. When an image
    has more pixels than ``budget_per_image`` (0 = unlimited), a seeded
    uniform subsample without replacement is taken per image.
    """
    preds, gts, indices = [], [], []
    for i, entry in enumerate(manifest.entries):
        if entry.gt_depth_path is None or entry.prediction_path is None:
            raise ManifestError(
                f"entry {i} ({entry.image_path}) lacks gt or prediction "
                f"needed for fitting")
        gt = manifest.load_gt(entry)
        pred = manifest.load_prediction(entry)
        if gt.values.shape != pred.values.shape:
            raise ValidationError(
                f"entry {i}: gt {gt.values.shape} and prediction "
                f"{pred.values.shape} shapes differ")
        keep = (gt.valid_mask & pred.valid_mask
                & (gt.values <= manifest.depth_cap) & (pred.values > 0)
                & metrics.crop_mask(gt.width, gt.height, manifest.eval_crop))
        p = pred.values[keep].astype(np.float64)
        g = gt.values[keep].astype(np.float64)
        if budget_per_image and len(p) > budget_per_image:
            rng = np.random.default_rng([seed, i])
            pick = rng.choice(len(p), size=budget_per_image, replace=False)
            pick.sort()
            p, g = p[pick], g[pick]
        preds.append(p)
        gts.append(g)
        indices.append(np.full(len(p), i, dtype=np.int64))
    if not preds:
        raise ManifestError("manifest has no entries")
    return regression.ScaleSamples(np.concatenate(preds), np.concatenate(gts),
                                   np.concatenate(indices))


def run_fit(manifest: DatasetManifest,
            method: str = regression.METHOD_THROUGH_ORIGIN,
            absrel_norm_filter: float | None = None,
            budget_per_image: int = DEFAULT_PIXEL_BUDGET,
            max_pairs: int = regression.DEFAULT_MAX_PAIRS,
            seed: int = 0, report_path=None) -> regression.ScaleFit:
    """Assemble samples, optionally filter, fit globally and per image.

    ``absrel_norm_filter`` (for example 0.15) drops samples whose
    median-aligned relative residual exceeds the threshold before
    fitting; None fits on all samples, the default for scale transfer.
    """
    samples = assemble_samples(manifest, budget_per_image, seed)
    if len(samples) == 0:
        raise ValidationError("no valid samples in manifest")
    filter_info = {"enabled": False}
    if absrel_norm_filter is not None:
        samples, retained, dropped = regression.filter_by_absrel_norm(
            samples, absrel_norm_filter)
        filter_info = {"enabled": True, "threshold": absrel_norm_filter,
                       "retained_fraction": retained,
                       "n_dropped_images": dropped}
    fit = regression.fit_per_image_scales(samples, method=method,
                                          max_pairs=max_pairs, seed=seed)
    fit.extra = {
        "split": manifest.split_name,
        "budget_per_image": budget_per_image,
        "subsampled_pixels": bool(budget_per_image),
        "absrel_norm_filter": filter_info,
        "depth_cap": manifest.depth_cap,
        "eval_crop": manifest.eval_crop,
    }
    if report_path is not None:
        Path(report_path).write_text(fit.to_json(), encoding="utf-8")
    return fit


def run_apply(manifest: DatasetManifest, scale: float,
              out_dir=".", jobs: int = 1) -> DatasetManifest:
    """Multiply every prediction by ``scale`` and write absolute maps.

    Absolute maps are written as PFM regardless of the input format to
    keep float fidelity. The new manifest declares
    ``prediction_kind: absolute_prediction``.
    """
    if scale <= 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def apply_entry(i: int, entry: ManifestEntry) -> ManifestEntry:
        if entry.prediction_path is None:
            raise ManifestError(f"entry {i} ({entry.image_path}) has no prediction")
        pred = manifest.load_prediction(entry)
        absolute = DepthMap(
            np.where(pred.valid_mask, pred.values * scale, 0.0),
            pred.valid_mask, depthio.KIND_ABSOLUTE)
        name = f"{i:05d}_pred_abs.pfm"
        depthio.write_depth_pfm(absolute, out_dir / name)
        return replace(entry,
                       image_path=str(_rebase(manifest, entry.image_path, out_dir)),
                       gt_depth_path=_rebase_opt(manifest, entry.gt_depth_path, out_dir),
                       prediction_path=name,
                       road_mask_path=_rebase_opt(manifest, entry.road_mask_path, out_dir),
                       instance_mask_path=_rebase_opt(manifest, entry.instance_mask_path, out_dir),
                       motion_mask_path=_rebase_opt(manifest, entry.motion_mask_path, out_dir))

    new_entries = _map_entries(manifest.entries, apply_entry, jobs)
    applied = DatasetManifest(
        split_name=f"{manifest.split_name}-absolute",
        intrinsics=manifest.intrinsics,
        entries=new_entries,
        depth_cap=manifest.depth_cap,
        eval_crop=manifest.eval_crop,
        prediction_kind=depthio.KIND_ABSOLUTE,
        geometry=manifest.geometry,
        png16_divisor=manifest.png16_divisor,
        base_dir=out_dir,
    )
    depthio.save_manifest(applied, out_dir / "manifest.txt")
    return applied


def _rebase(manifest: DatasetManifest, rel_path: str, out_dir: Path) -> Path:
    """Re-express a manifest-relative path relative to ``out_dir``.

    Keeps manifests free of absolute paths when the output directory sits
    near the input; falls back to the absolute path otherwise.
    """
    resolved = manifest.resolve(rel_path)
    try:
        return Path(os.path.relpath(resolved, out_dir))
    except ValueError:
        return resolved.resolve()


def _rebase_opt(manifest, rel_path, out_dir):
    return None if rel_path is None else str(_rebase(manifest, rel_path, out_dir))


def run_evaluate(manifest: DatasetManifest, cap: float | None = None,
                 crop: str | None = None,
                 convention: str = metrics.CONVENTION_PER_IMAGE,
                 report_path=None, csv_path=None) -> metrics.MetricsReport:
    """Evaluate a manifest's absolute predictions against its ground truth.

    ``cap``/``crop`` default to the manifest's own depth_cap/eval_crop.
    """
    if manifest.prediction_kind != depthio.KIND_ABSOLUTE:
        raise ValidationError(
            "evaluate needs absolute predictions; run apply-scale first "
            f"(manifest declares {manifest.prediction_kind!r})")
    preds, gts = [], []
    for i, entry in enumerate(manifest.entries):
        if entry.gt_depth_path is None or entry.prediction_path is None:
            raise ManifestError(
                f"entry {i} ({entry.image_path}) lacks gt or prediction")
        gts.append(manifest.load_gt(entry))
        preds.append(manifest.load_prediction(entry))
    report = metrics.compute_metrics_report(
        preds, gts,
        cap=manifest.depth_cap if cap is None else cap,
        crop=manifest.eval_crop if crop is None else crop,
        convention=convention)
    report.extra = {"split": manifest.split_name}
    if report_path is not None:
        Path(report_path).write_text(report.to_json(), encoding="utf-8")
    if csv_path is not None:
        Path(csv_path).write_text(
            report.csv_header() + "\n" + report.csv_row() + "\n", encoding="utf-8")
    return report


def run_motion_masks(manifest: DatasetManifest,
                     config: motion.MotionMaskConfig = motion.MotionMaskConfig(),
                     out_dir=".", jobs: int = 1) -> tuple[DatasetManifest, list]:
    """Generate local-motion masks for every entry of a manifest.

    Entries need a prediction (self-supervised, up-to-scale is fine), a
    GT or second prediction standing in for the supervised depth, a road
    mask, and an instance mask. The supervised map is taken from
    ``gt_depth_path``; both maps are road-median normalized before the
    rule. Writes one mask PNG per entry plus ``verdicts.csv`` and returns
    the updated manifest and the list of per-entry verdict lists (None
    for skipped entries).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def mask_entry(i: int, entry: ManifestEntry):
        required = {"gt_depth_path": entry.gt_depth_path,
                    "prediction_path": entry.prediction_path,
                    "road_mask_path": entry.road_mask_path,
                    "instance_mask_path": entry.instance_mask_path}
        missing = [k for k, v in required.items() if v is None]
        if missing:
            raise ManifestError(
                f"entry {i} ({entry.image_path}) lacks {', '.join(missing)}")
        d_sup = manifest.load_gt(entry)
        d_unsup = manifest.load_prediction(entry)
        road = depthio.read_binary_mask(manifest.resolve(entry.road_mask_path))
        instances = depthio.read_instance_mask(
            manifest.resolve(entry.instance_mask_path))
        try:
            sup_n = motion.road_median_normalize(d_sup, road, config.min_road_pixels)
            unsup_n = motion.road_median_normalize(d_unsup, road, config.min_road_pixels)
        except ValidationError as exc:
            return replace(entry), None, str(exc)
        mask, verdicts = motion.flag_moving_instances(sup_n, unsup_n,
                                                      instances, config)
        name = f"{i:05d}_motion.png"
        depthio.write_binary_mask(mask, out_dir / name)
        new_entry = replace(
            entry,
            image_path=str(_rebase(manifest, entry.image_path, out_dir)),
            gt_depth_path=_rebase_opt(manifest, entry.gt_depth_path, out_dir),
            prediction_path=_rebase_opt(manifest, entry.prediction_path, out_dir),
            road_mask_path=_rebase_opt(manifest, entry.road_mask_path, out_dir),
            instance_mask_path=_rebase_opt(manifest, entry.instance_mask_path, out_dir),
            motion_mask_path=name)
        return new_entry, verdicts, None

    results = _map_entries(manifest.entries, mask_entry, jobs)
    new_entries = [r[0] for r in results]
    all_verdicts = [r[1] for r in results]

    with open(out_dir / "verdicts.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entry", "image", "instance_id", "n_pixels", "n_valid",
                         "n_above_cutoff", "fraction_above", "verdict"])
        for i, (entry, verdicts, skip_reason) in enumerate(results):
            if verdicts is None:
                writer.writerow([i, manifest.entries[i].image_path, "-", "-", "-",
                                 "-", "-", f"skipped: {skip_reason}"])
                continue
            for v in verdicts:
                writer.writerow([i, manifest.entries[i].image_path, v.instance_id,
                                 v.n_pixels, v.n_valid, v.n_above_cutoff,
                                 f"{v.fraction_above:.6f}", v.verdict])

    masked = DatasetManifest(
        split_name=f"{manifest.split_name}-motion",
        intrinsics=manifest.intrinsics,
        entries=new_entries,
        depth_cap=manifest.depth_cap,
        eval_crop=manifest.eval_crop,
        prediction_kind=manifest.prediction_kind,
        geometry=manifest.geometry,
        png16_divisor=manifest.png16_divisor,
        base_dir=out_dir,
    )
    depthio.save_manifest(masked, out_dir / "manifest.txt")
    return masked, all_verdicts


# --------------------------------------------------------------------------
# Synthetic two-domain pipeline

TWO_DOMAIN_SOURCE = CameraIntrinsics.from_fov(82.0, 512, 288)
TWO_DOMAIN_TARGET = CameraIntrinsics.from_fov(55.0, 416, 256)


def _write_synthetic_split(out_dir: Path, name: str,
                           intrinsics: CameraIntrinsics,
                           gt_maps) -> DatasetManifest:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, gt in enumerate(gt_maps):
        image_name = f"{i:05d}_image.png"
        gt_name = f"{i:05d}_gt.pfm"
        depthio.write_rgb(synth.render_rgb_preview(gt), out_dir / image_name)
        depthio.write_depth_pfm(gt, out_dir / gt_name)
        entries.append(ManifestEntry(image_path=image_name, gt_depth_path=gt_name))
    manifest = DatasetManifest(
        split_name=name, intrinsics=intrinsics, entries=entries,
        depth_cap=80.0, eval_crop=depthio.CROP_NONE,
        prediction_kind=depthio.KIND_UP_TO_SCALE, geometry="native",
        base_dir=out_dir)
    depthio.save_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def _add_predictions(manifest: DatasetManifest, scale: float, jitter_std: float,
                     outlier_fraction: float, noise_std: float,
                     seed: int, stage: int) -> DatasetManifest:
    """Simulate up-to-scale predictions for every entry, in place on disk."""
    new_entries = []
    for i, entry in enumerate(manifest.entries):
        gt = manifest.load_gt(entry)
        pred = synth.simulate_up_to_scale(
            gt, scale, per_image_jitter_std=jitter_std,
            outlier_fraction=outlier_fraction, noise_std=noise_std,
            seed=seed, image_index=stage * 1_000_000 + i)
        name = f"{i:05d}_pred.pfm"
        depthio.write_depth_pfm(pred, manifest.base_dir / name)
        new_entries.append(replace(entry, prediction_path=name))
    updated = replace(manifest, entries=new_entries)
    depthio.save_manifest(updated, manifest.base_dir / "manifest.txt")
    return updated


def run_synth(out_dir, seed: int = 0, scale: float = 100.0,
              jitter_std: float = 0.05, outlier_fraction: float = 0.10,
              noise_std: float = 0.15, n_images: int = 50,
              source_intrinsics: CameraIntrinsics = TWO_DOMAIN_SOURCE,
              target_intrinsics: CameraIntrinsics = TWO_DOMAIN_TARGET,
              ) -> dict[str, Path]:
    """Emit the ready-to-run two-domain synthetic pipeline.

    Produces three manifest directories under ``out_dir``:

      - ``source/``: scenes rendered at the source intrinsics with exact
        GT (no predictions), exercising the raw-capture side.
      - ``source_adjusted/``: the source split pushed through the real
        FOV-adjustment stage, then given simulated up-to-scale
        predictions sharing the injected scale. Fit here.
      - ``target/``: different scenes rendered at the target intrinsics
        with GT and simulated predictions at the same injected scale.
        Apply the fitted scale here and evaluate.

    The same global scale on both adjusted-source and target emulates the
    shared linear ranking that joint training on FOV-aligned data
    produces. Everything is a pure function of ``seed``.
    """
    out_dir = Path(out_dir)
    source_scenes = [synth.random_scene(seed * 10_007 + i)
                     for i in range(n_images)]
    target_scenes = [synth.random_scene(seed * 10_007 + 500_000 + i)
                     for i in range(n_images)]

    source_manifest = _write_synthetic_split(
        out_dir / "source", "synth-source", source_intrinsics,
        [synth.render_depth(s, source_intrinsics) for s in source_scenes])

    adjusted = run_fov_adjust(source_manifest, target_intrinsics,
                              mode=camera.MODE_FOV,
                              out_dir=out_dir / "source_adjusted")
    adjusted = _add_predictions(adjusted, scale, jitter_std, outlier_fraction,
                                noise_std, seed, stage=1)

    target_manifest = _write_synthetic_split(
        out_dir / "target", "synth-target", target_intrinsics,
        [synth.render_depth(s, target_intrinsics) for s in target_scenes])
    target_manifest = _add_predictions(target_manifest, scale, jitter_std,
                                       outlier_fraction, noise_std, seed, stage=2)

    return {
        "source": out_dir / "source" / "manifest.txt",
        "source_adjusted": out_dir / "source_adjusted" / "manifest.txt",
        "target": out_dir / "target" / "manifest.txt",
    }
