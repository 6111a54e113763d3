"""Depth-scale transfer between camera domains.

Adjust the field of view of a labeled source dataset to a target camera,
fit the linear relationship between up-to-scale depth predictions and
ground truth with a robust Theil-Sen estimator, apply the fitted scale
to target predictions, and evaluate with the standard depth-accuracy
metric suite. Includes rule-based local-motion mask generation and an
analytic synthetic-scene oracle for end-to-end verification.
"""

__version__ = "0.1.0"

from .camera import (CameraIntrinsics, FovAdjustPlan, RigidTransform,
                     compute_fov, plan_fov_adjustment, reproject_pixel)
from .depthio import (DatasetManifest, DepthMap, InstanceMask, ManifestEntry,
                      load_manifest, read_depth_pfm, read_depth_png16,
                      save_manifest, write_depth_pfm, write_depth_png16)
from .errors import (DepthScaleError, FileFormatError, ManifestError,
                     ValidationError)
from .metrics import MetricsReport, compute_metrics_report, garg_crop
from .motion import MotionMaskConfig, flag_moving_instances, road_median_normalize
from .regression import (ScaleFit, ScaleSamples, filter_by_absrel_norm,
                         fit_global_scale, fit_per_image_scales, pearson)
from .synth import (Box, SyntheticScene, fov_consistency_check, render_depth,
                    simulate_up_to_scale)

__all__ = [
    "__version__",
    "CameraIntrinsics", "FovAdjustPlan", "RigidTransform",
    "compute_fov", "plan_fov_adjustment", "reproject_pixel",
    "DatasetManifest", "DepthMap", "InstanceMask", "ManifestEntry",
    "load_manifest", "save_manifest",
    "read_depth_pfm", "read_depth_png16", "write_depth_pfm", "write_depth_png16",
    "DepthScaleError", "FileFormatError", "ManifestError", "ValidationError",
    "MetricsReport", "compute_metrics_report", "garg_crop",
    "MotionMaskConfig", "flag_moving_instances", "road_median_normalize",
    "ScaleFit", "ScaleSamples", "filter_by_absrel_norm",
    "fit_global_scale", "fit_per_image_scales", "pearson",
    "Box", "SyntheticScene", "fov_consistency_check", "render_depth",
    "simulate_up_to_scale",
]
