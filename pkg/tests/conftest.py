import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for reference_impls

from depthscale.camera import CameraIntrinsics
from depthscale.depthio import (DatasetManifest, DepthMap, ManifestEntry,
                                save_manifest, write_depth_pfm, write_rgb)


@pytest.fixture
def intrinsics_640() -> CameraIntrinsics:
    return CameraIntrinsics(focal_x=500.0, focal_y=500.0,
                            center_x=319.5, center_y=191.5,
                            width=640, height=384)


def random_depth_map(rng, width=8, height=6, invalid_fraction=0.2,
                     kind="ground_truth") -> DepthMap:
    values = rng.uniform(1.0, 60.0, size=(height, width))
    valid = rng.random((height, width)) >= invalid_fraction
    values = np.where(valid, values, 0.0)
    return DepthMap(values, valid, kind)


def write_split(tmp_path: Path, maps, intrinsics, preds=None,
                split_name="test", **manifest_kwargs) -> Path:
    """Write depth maps (and optional predictions) plus a manifest."""
    tmp_path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, gt in enumerate(maps):
        img = np.zeros((gt.height, gt.width, 3), dtype=np.uint8)
        write_rgb(img, tmp_path / f"{i}_img.png")
        write_depth_pfm(gt, tmp_path / f"{i}_gt.pfm")
        entry = ManifestEntry(image_path=f"{i}_img.png",
                              gt_depth_path=f"{i}_gt.pfm")
        if preds is not None:
            write_depth_pfm(preds[i], tmp_path / f"{i}_pred.pfm")
            entry.prediction_path = f"{i}_pred.pfm"
        entries.append(entry)
    manifest = DatasetManifest(split_name=split_name, intrinsics=intrinsics,
                               entries=entries, base_dir=tmp_path,
                               **manifest_kwargs)
    path = tmp_path / "manifest.txt"
    save_manifest(manifest, path)
    return path
