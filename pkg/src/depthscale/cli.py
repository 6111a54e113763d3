"""Command-line front end for every pipeline stage.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 I/O error.
Failures print one machine-readable JSON line to stderr. The environment
variable ``DEPTHSCALE_SEED`` overrides seeds that are not set on the
command line. All flag defaults (cap 80 m, filter threshold 0.15,
cutoff 1.5, fraction 10%) match the method's published choices.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click

from . import __version__, camera, depthio, metrics, motion, pipeline, regression
from .errors import ValidationError

EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4

_MODE_NAMES = {
    "fov": camera.MODE_FOV,
    "naive-a": camera.MODE_NAIVE_CENTER_CROP,
    "naive-b": camera.MODE_NAIVE_RESIZE_CROP,
}


def _fail(exc: BaseException, code: int) -> None:
    click.echo(json.dumps({"error": type(exc).__name__, "exit_code": code,
                           "message": str(exc)}), err=True)
    raise SystemExit(code)


def mapped_errors(fn):
    """Translate library exceptions into documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail(exc, EXIT_VALIDATION)
        except OSError as exc:
            _fail(exc, EXIT_IO)

    return wrapper


def _resolve_seed(seed: int | None) -> int:
    """CLI flag wins; otherwise DEPTHSCALE_SEED; otherwise 0."""
    if seed is not None:
        return seed
    env = os.environ.get("DEPTHSCALE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"DEPTHSCALE_SEED must be an integer: {env!r}") from exc
    return 0


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Depth-scale transfer toolkit: FOV adjustment, robust scale fitting,
    depth metrics, local-motion masks, and a synthetic oracle."""


@cli.command("version")
def version_cmd():
    """Print the package version."""
    click.echo(f"depthscale {__version__}")


@cli.command("fov-adjust")
@click.option("--source-manifest", "manifest_path", required=True,
              type=click.Path(), help="Manifest of the split to transform.")
@click.option("--target-intrinsics", required=True,
              help="Preset name (kitti, ddad1, nuscenes1, vkitti2) or "
                   "intrinsics file 'fx fy cx cy width height' (pixels).")
@click.option("--mode", type=click.Choice(sorted(_MODE_NAMES)), default="fov",
              show_default=True,
              help="fov = FOV-preserving crop/pad+resize; naive-a = center "
                   "crop to target size; naive-b = width-wise resize then "
                   "height crop.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for transformed files and manifest.")
@click.option("--jobs", default=1, show_default=True,
              help="Worker threads for per-image work.")
@mapped_errors
def fov_adjust_cmd(manifest_path, target_intrinsics, mode, out_dir, jobs):
    """Adjust a source split to a target camera geometry."""
    manifest = depthio.load_manifest(manifest_path)
    target = pipeline.resolve_intrinsics(target_intrinsics)
    adjusted = pipeline.run_fov_adjust(manifest, target,
                                       mode=_MODE_NAMES[mode],
                                       out_dir=out_dir, jobs=jobs)
    click.echo(f"adjusted {len(adjusted.entries)} entries -> "
               f"{os.path.join(out_dir, 'manifest.txt')}")


@cli.command("fit-scale")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Manifest with ground truth and up-to-scale predictions.")
@click.option("--method", type=click.Choice(["origin", "pairwise"]),
              default="origin", show_default=True,
              help="origin = median of gt/pred ratios (zero intercept); "
                   "pairwise = classical Theil-Sen median of pair slopes.")
@click.option("--filter-absrel-norm", "filter_spec", default="off",
              show_default=True,
              help="Drop samples with median-aligned relative residual above "
                   "this fraction (e.g. 0.15), or 'off'.")
@click.option("--budget", default=pipeline.DEFAULT_PIXEL_BUDGET,
              show_default=True,
              help="Max sampled pixels per image (0 = all pixels).")
@click.option("--max-pairs", default=regression.DEFAULT_MAX_PAIRS,
              show_default=True,
              help="Pairwise-method pair budget before seeded subsampling.")
@click.option("--seed", default=None, type=int,
              help="RNG seed [default: DEPTHSCALE_SEED or 0].")
@click.option("--out", "report_path", required=True, type=click.Path(),
              help="Fit report JSON output path.")
@mapped_errors
def fit_scale_cmd(manifest_path, method, filter_spec, budget, max_pairs,
                  seed, report_path):
    """Fit the global and per-image depth scale on a source split."""
    manifest = depthio.load_manifest(manifest_path)
    if filter_spec == "off":
        threshold = None
    else:
        try:
            threshold = float(filter_spec)
        except ValueError as exc:
            raise ValidationError(
                f"--filter-absrel-norm expects a fraction or 'off', "
                f"got {filter_spec!r}") from exc
    method_name = (regression.METHOD_THROUGH_ORIGIN if method == "origin"
                   else regression.METHOD_PAIRWISE)
    fit = pipeline.run_fit(manifest, method=method_name,
                           absrel_norm_filter=threshold,
                           budget_per_image=budget, max_pairs=max_pairs,
                           seed=_resolve_seed(seed), report_path=report_path)
    click.echo(f"slope {fit.slope!r} ({fit.method}, pearson {fit.pearson:.4f}, "
               f"{fit.n_samples} samples / {fit.n_images} images) -> {report_path}")


@cli.command("apply-scale")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Manifest with up-to-scale predictions.")
@click.option("--scale", type=float, default=None,
              help="Scale factor in meters per prediction unit.")
@click.option("--fit", "fit_path", type=click.Path(), default=None,
              help="Fit report JSON to take the slope from (alternative to --scale).")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for absolute depth maps and manifest.")
@click.option("--jobs", default=1, show_default=True,
              help="Worker threads for per-image work.")
@mapped_errors
def apply_scale_cmd(manifest_path, scale, fit_path, out_dir, jobs):
    """Scale predictions into absolute depths."""
    if (scale is None) == (fit_path is None):
        raise ValidationError("provide exactly one of --scale or --fit")
    if fit_path is not None:
        with open(fit_path, "r", encoding="utf-8") as fh:
            try:
                scale = float(json.load(fh)["slope"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValidationError(f"{fit_path}: not a fit report: {exc}") from exc
    manifest = depthio.load_manifest(manifest_path)
    applied = pipeline.run_apply(manifest, scale, out_dir=out_dir, jobs=jobs)
    click.echo(f"applied scale {scale!r} to {len(applied.entries)} entries -> "
               f"{os.path.join(out_dir, 'manifest.txt')}")


@cli.command("evaluate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Manifest with absolute predictions and ground truth.")
@click.option("--cap", type=float, default=None,
              help="Depth cap in meters [default: manifest depth_cap, 80].")
@click.option("--crop", type=click.Choice([depthio.CROP_GARG, depthio.CROP_NONE]),
              default=None, help="Evaluation crop [default: manifest eval_crop].")
@click.option("--convention",
              type=click.Choice([metrics.CONVENTION_PER_IMAGE,
                                 metrics.CONVENTION_POOLED]),
              default=metrics.CONVENTION_PER_IMAGE, show_default=True,
              help="per-image = mean of per-image metrics; pooled = one "
                   "metric over all pixels.")
@click.option("--out", "report_path", required=True, type=click.Path(),
              help="Metrics report JSON output path.")
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Also write a one-row CSV in results-table column order.")
@mapped_errors
def evaluate_cmd(manifest_path, cap, crop, convention, report_path, csv_path):
    """Compute the full depth-accuracy metric suite on a split."""
    manifest = depthio.load_manifest(manifest_path)
    report = pipeline.run_evaluate(manifest, cap=cap, crop=crop,
                                   convention=convention,
                                   report_path=report_path, csv_path=csv_path)
    click.echo(f"abs_rel {report.abs_rel:.4f}  abs_rel_norm {report.abs_rel_norm:.4f}  "
               f"scale_ratio {report.scale_ratio_mean:.3f}+-{report.scale_ratio_std:.3f} "
               f"({report.n_images} images) -> {report_path}")


@cli.command("motion-mask")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Manifest with predictions, GT, road and instance masks.")
@click.option("--cutoff", default=1.5, show_default=True,
              help="Normalized-depth difference (unitless, road-median "
                   "units) above which a pixel disagrees.")
@click.option("--fraction", default=10.0, show_default=True,
              help="Percent of a vehicle's valid pixels that must disagree.")
@click.option("--min-road-pixels", default=100, show_default=True,
              help="Road pixels required for a usable median.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory for motion masks, verdicts.csv, manifest.")
@click.option("--jobs", default=1, show_default=True,
              help="Worker threads for per-image work.")
@mapped_errors
def motion_mask_cmd(manifest_path, cutoff, fraction, min_road_pixels, out_dir, jobs):
    """Generate local-motion masks flagging moving vehicles."""
    manifest = depthio.load_manifest(manifest_path)
    config = motion.MotionMaskConfig(cutoff=cutoff, fraction_percent=fraction,
                                     min_road_pixels=min_road_pixels)
    masked, verdict_lists = pipeline.run_motion_masks(manifest, config,
                                                      out_dir=out_dir, jobs=jobs)
    n_flagged = sum(v.flagged for vs in verdict_lists if vs for v in vs)
    click.echo(f"masked {len(masked.entries)} entries, {n_flagged} instances "
               f"flagged -> {os.path.join(out_dir, 'manifest.txt')}")


@cli.command("synth")
@click.option("--preset", type=click.Choice(["two-domain"]), default="two-domain",
              show_default=True, help="Synthetic pipeline layout to emit.")
@click.option("--seed", default=None, type=int,
              help="Scene/prediction seed [default: DEPTHSCALE_SEED or 0].")
@click.option("--scale", default=100.0, show_default=True,
              help="Injected global scale (meters per prediction unit).")
@click.option("--jitter", default=0.05, show_default=True,
              help="Per-image scale jitter (relative std).")
@click.option("--outliers", default=0.10, show_default=True,
              help="Fraction of pixels replaced by off-trend values.")
@click.option("--noise", default=0.15, show_default=True,
              help="Per-pixel noise (std relative to the clean prediction).")
@click.option("--images", default=50, show_default=True,
              help="Images per domain.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Output directory (gets source/, source_adjusted/, target/).")
@mapped_errors
def synth_cmd(preset, seed, scale, jitter, outliers, noise, images, out_dir):
    """Emit a ready-to-run synthetic two-domain dataset."""
    manifests = pipeline.run_synth(out_dir, seed=_resolve_seed(seed),
                                   scale=scale, jitter_std=jitter,
                                   outlier_fraction=outliers, noise_std=noise,
                                   n_images=images)
    for name, path in manifests.items():
        click.echo(f"{name}: {path}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 130
    except click.exceptions.ClickException as exc:
        click.echo(json.dumps({"error": type(exc).__name__,
                               "exit_code": EXIT_USAGE,
                               "message": exc.format_message()}), err=True)
        return EXIT_USAGE
    except SystemExit as exc:  # raised by mapped_errors via _fail
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
