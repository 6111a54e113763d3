"""Bit-exact reading and writing of depth maps, masks, and dataset manifests.

File conventions:
  - 16-bit grayscale PNG depth: ``depth = raw / divisor`` meters
    (divisor 256 by default, the KITTI ground-truth convention); a raw
    value of 0 marks an invalid pixel.
  - PFM ("Pf" grayscale float maps): the sign of the scale line encodes
    endianness, rows are stored bottom-up; non-finite values mark
    invalid pixels. Write-then-read round-trips float32 bit-exactly.
  - Instance masks: 16-bit PNG of instance ids (0 = background) with a
    sidecar JSON ``<mask>.json`` mapping id -> class name
    (vehicle/road/other).
  - Road and motion masks: 8-bit PNG, 0 = background/keep, nonzero =
    road/masked.
  - Manifests: the line-based text format described at
    :func:`load_manifest`.

Readers reject malformed input instead of coercing it: schema and format
problems raise ``FileFormatError``/``ManifestError`` (CLI exit 3),
missing or unreadable files raise ``OSError`` (CLI exit 4).
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .camera import CameraIntrinsics
from .errors import FileFormatError, ManifestError, ValidationError

KIND_GROUND_TRUTH = "ground_truth"
KIND_UP_TO_SCALE = "up_to_scale"
KIND_ABSOLUTE = "absolute_prediction"
DEPTH_KINDS = (KIND_GROUND_TRUTH, KIND_UP_TO_SCALE, KIND_ABSOLUTE)

CLASS_VEHICLE = "vehicle"
CLASS_ROAD = "road"
CLASS_OTHER = "other"
INSTANCE_CLASSES = (CLASS_VEHICLE, CLASS_ROAD, CLASS_OTHER)

CROP_NONE = "none"
CROP_GARG = "garg"

MANIFEST_HEADER = "depthscale-manifest v1"

_PNG16_MODES = ("I;16", "I;16B", "I;16L", "I;16N")


@dataclass
class DepthMap:
    """Dense per-pixel depth with a validity mask.

    ``values`` is a row-major float array in meters (or unitless ratios
    for up-to-scale predictions); ``valid_mask`` is boolean with the same
    shape. Valid pixels are strictly positive. Up-to-scale values from a
    sigmoid-headed estimator live in (0, 1], but that bound is not
    enforced since external predictions may exceed it.
    """

    values: np.ndarray
    valid_mask: np.ndarray
    kind: str = KIND_GROUND_TRUTH

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValidationError(f"depth values must be 2D, got {self.values.ndim}D")
        if self.values.shape != self.valid_mask.shape:
            raise ValidationError("depth values and valid_mask shapes differ")
        if self.kind not in DEPTH_KINDS:
            raise ValidationError(f"unknown depth kind {self.kind!r}")
        if self.valid_mask.any():
            valid_values = self.values[self.valid_mask]
            if not np.all(np.isfinite(valid_values)) or not np.all(valid_values > 0):
                raise ValidationError("valid depth pixels must be finite and > 0")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def with_kind(self, kind: str) -> "DepthMap":
        return DepthMap(self.values, self.valid_mask, kind)


@dataclass
class InstanceMask:
    """Instance-id map plus the class of each instance."""

    labels: np.ndarray
    class_of_instance: dict[int, str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValidationError("instance labels must be 2D")
        if self.labels.size and self.labels.min() < 0:
            raise ValidationError("instance ids must be non-negative")
        present = set(np.unique(self.labels).tolist())
        for inst_id, cls in self.class_of_instance.items():
            if cls not in INSTANCE_CLASSES:
                raise ValidationError(f"unknown instance class {cls!r}")
            if inst_id not in present:
                raise ValidationError(
                    f"instance id {inst_id} in class map but absent from labels")

    def vehicle_ids(self) -> list[int]:
        return sorted(i for i, c in self.class_of_instance.items()
                      if c == CLASS_VEHICLE and i != 0)


def read_depth_png16(path, scale_divisor: float = 256.0,
                     kind: str = KIND_GROUND_TRUTH) -> DepthMap:
    """Read a 16-bit single-channel PNG depth map.

    depth = raw / scale_divisor meters; raw 0 is an invalid pixel.
    """
    if scale_divisor <= 0:
        raise ValidationError(f"scale_divisor must be positive, got {scale_divisor}")
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError as exc:
        raise FileFormatError(f"{path}: not a readable image: {exc}") from exc
    if img.mode not in _PNG16_MODES:
        raise FileFormatError(
            f"{path}: expected 16-bit single-channel PNG, got mode {img.mode!r}")
    raw = np.asarray(img)
    if raw.ndim != 2:
        raise FileFormatError(f"{path}: expected a single channel, got shape {raw.shape}")
    valid = raw > 0
    values = raw.astype(np.float64) / scale_divisor
    values[~valid] = 0.0
    return DepthMap(values, valid, kind)


def write_depth_png16(depth: DepthMap, path, scale_divisor: float = 256.0) -> None:
    """Write a depth map as 16-bit PNG; invalid pixels become raw 0."""
    if scale_divisor <= 0:
        raise ValidationError(f"scale_divisor must be positive, got {scale_divisor}")
    raw = np.round(depth.values * scale_divisor)
    raw = np.clip(raw, 0, np.iinfo(np.uint16).max).astype(np.uint16)
    raw[~depth.valid_mask] = 0
    # Quantization can round a tiny valid depth down to raw 0; bump it to
    # the smallest representable value so validity survives a round-trip.
    raw[depth.valid_mask & (raw == 0)] = 1
    Image.fromarray(raw).save(path)


_PFM_DIMS_RE = re.compile(rb"^(\d+)\s+(\d+)\s*$")


def read_depth_pfm(path, kind: str = KIND_GROUND_TRUTH) -> DepthMap:
    """Read a grayscale PFM depth map; non-finite values become invalid."""
    with open(path, "rb") as fh:
        header = fh.readline().rstrip()
        if header == b"PF":
            raise FileFormatError(f"{path}: color PFM not supported for depth")
        if header != b"Pf":
            raise FileFormatError(f"{path}: not a PFM file (header {header!r})")
        dims = fh.readline()
        m = _PFM_DIMS_RE.match(dims)
        if not m:
            raise FileFormatError(f"{path}: malformed PFM dimensions line {dims!r}")
        width, height = int(m.group(1)), int(m.group(2))
        if width <= 0 or height <= 0:
            raise FileFormatError(f"{path}: non-positive PFM dimensions")
        try:
            scale = float(fh.readline())
        except ValueError as exc:
            raise FileFormatError(f"{path}: malformed PFM scale line") from exc
        if scale == 0:
            raise FileFormatError(f"{path}: PFM scale must be nonzero")
        endianness = "<" if scale < 0 else ">"
        payload = fh.read(width * height * 4)
        if len(payload) != width * height * 4:
            raise FileFormatError(f"{path}: truncated PFM payload")
    data = np.frombuffer(payload, dtype=endianness + "f4").reshape(height, width)
    data = data[::-1]  # PFM rows are stored bottom-up
    valid = np.isfinite(data) & (data > 0)
    values = np.where(valid, data, 0.0).astype(np.float32)
    return DepthMap(values, valid, kind)


def write_depth_pfm(depth: DepthMap, path) -> None:
    """Write a grayscale little-endian PFM; invalid pixels become NaN."""
    values = depth.values.astype(np.float32, copy=True)
    values[~depth.valid_mask] = np.nan
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{depth.width} {depth.height}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(values[::-1], dtype="<f4").tobytes())


def read_depth_auto(path, kind: str, scale_divisor: float = 256.0) -> DepthMap:
    """Read PFM or PNG16 depth based on the file extension."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_depth_pfm(path, kind=kind)
    if suffix == ".png":
        return read_depth_png16(path, scale_divisor=scale_divisor, kind=kind)
    raise FileFormatError(f"{path}: unsupported depth extension {suffix!r}")


def read_rgb(path) -> np.ndarray:
    """Read an image as an HxWx3 uint8 array."""
    img = Image.open(path)
    return np.asarray(img.convert("RGB"))


def write_rgb(image: np.ndarray, path) -> None:
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "RGB").save(path)


def read_binary_mask(path) -> np.ndarray:
    """Read an 8-bit mask PNG as a boolean array (nonzero = set)."""
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img) > 0


def write_binary_mask(mask: np.ndarray, path) -> None:
    """Write a boolean mask as 8-bit PNG (0 = clear, 255 = set)."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, "L").save(path)


def instance_classmap_path(mask_path) -> Path:
    return Path(str(mask_path) + ".json")


def read_instance_mask(path) -> InstanceMask:
    """Read a 16-bit instance-id PNG and its ``<path>.json`` class map."""
    img = Image.open(path)
    if img.mode not in _PNG16_MODES:
        raise FileFormatError(
            f"{path}: instance masks must be 16-bit PNG, got mode {img.mode!r}")
    labels = np.asarray(img).astype(np.int64)
    classmap_file = instance_classmap_path(path)
    if not classmap_file.exists():
        raise FileNotFoundError(f"missing instance class map {classmap_file}")
    with open(classmap_file, "r", encoding="utf-8") as fh:
        try:
            rawmap = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{classmap_file}: invalid JSON: {exc}") from exc
    try:
        class_of_instance = {int(k): str(v) for k, v in rawmap.items()}
    except (TypeError, ValueError, AttributeError) as exc:
        raise FileFormatError(
            f"{classmap_file}: expected an id->class object") from exc
    return InstanceMask(labels, class_of_instance)


def write_instance_mask(mask: InstanceMask, path) -> None:
    labels = mask.labels
    if labels.size and labels.max() > np.iinfo(np.uint16).max:
        raise ValidationError("instance ids exceed 16-bit range")
    Image.fromarray(labels.astype(np.uint16)).save(path)
    with open(instance_classmap_path(path), "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in sorted(mask.class_of_instance.items())},
                  fh, indent=0, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Dataset manifests

_ENTRY_FIELDS = ("image_path", "gt_depth_path", "prediction_path",
                 "road_mask_path", "instance_mask_path", "motion_mask_path")


@dataclass
class ManifestEntry:
    """One record of a manifest: an image and its optional companion maps.

    Paths are stored relative to the manifest file (or absolute).
    """

    image_path: str
    gt_depth_path: str | None = None
    prediction_path: str | None = None
    road_mask_path: str | None = None
    instance_mask_path: str | None = None
    motion_mask_path: str | None = None

    def fields(self) -> tuple:
        return tuple(getattr(self, name) for name in _ENTRY_FIELDS)


@dataclass
class DatasetManifest:
    """A split: intrinsics, evaluation policy, and per-image file records.

    ``geometry`` records whether images went through the FOV-preserving
    adjustment ("fov_adjusted"), a naive resize ("uncorrected"), or are
    untouched captures ("native"). ``prediction_kind`` declares what the
    prediction files contain; it is never inferred from the data.
    """

    split_name: str
    intrinsics: CameraIntrinsics
    entries: list[ManifestEntry] = field(default_factory=list)
    depth_cap: float = 80.0
    eval_crop: str = CROP_NONE
    prediction_kind: str = KIND_UP_TO_SCALE
    geometry: str = "native"
    png16_divisor: float = 256.0
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.depth_cap <= 0:
            raise ManifestError(f"depth_cap must be positive, got {self.depth_cap}")
        if self.eval_crop not in (CROP_NONE, CROP_GARG):
            raise ManifestError(f"unknown eval_crop {self.eval_crop!r}")
        if self.prediction_kind not in (KIND_UP_TO_SCALE, KIND_ABSOLUTE):
            raise ManifestError(
                f"prediction_kind must be up_to_scale or absolute_prediction, "
                f"got {self.prediction_kind!r}")
        if self.geometry not in ("native", "fov_adjusted", "uncorrected"):
            raise ManifestError(f"unknown geometry {self.geometry!r}")

    def resolve(self, rel_path: str) -> Path:
        p = Path(rel_path)
        return p if p.is_absolute() else self.base_dir / p

    def load_gt(self, entry: ManifestEntry) -> DepthMap:
        if entry.gt_depth_path is None:
            raise ManifestError(f"{entry.image_path}: no ground-truth depth")
        return read_depth_auto(self.resolve(entry.gt_depth_path),
                               KIND_GROUND_TRUTH, self.png16_divisor)

    def load_prediction(self, entry: ManifestEntry) -> DepthMap:
        if entry.prediction_path is None:
            raise ManifestError(f"{entry.image_path}: no prediction")
        return read_depth_auto(self.resolve(entry.prediction_path),
                               self.prediction_kind, self.png16_divisor)


def _check_paths_exist(manifest: DatasetManifest) -> None:
    for i, entry in enumerate(manifest.entries):
        for name in _ENTRY_FIELDS:
            rel = getattr(entry, name)
            if rel is None:
                continue
            p = manifest.resolve(rel)
            if not p.exists():
                raise FileNotFoundError(
                    f"manifest entry {i} ({entry.image_path}): "
                    f"{name} {p} does not exist")
            if name == "instance_mask_path" and not instance_classmap_path(p).exists():
                raise FileNotFoundError(
                    f"manifest entry {i} ({entry.image_path}): "
                    f"missing class map {instance_classmap_path(p)}")


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Format (tab-separated, ``#`` comments and blank lines ignored)::

        depthscale-manifest v1
        split	<name>
        intrinsics	<fx>	<fy>	<cx>	<cy>	<width>	<height>
        depth_cap	<meters>             # optional, default 80
        eval_crop	<none|garg>          # optional, default none
        prediction_kind	<up_to_scale|absolute_prediction>  # optional
        geometry	<native|fov_adjusted|uncorrected>      # optional
        png16_divisor	<divisor>        # optional, default 256
        <image>	<gt|->	<pred|->	<road|->	<instances|->	<motion|->

    Record paths are relative to the manifest's directory; ``-`` marks an
    absent optional path. Every referenced path must exist unless
    ``check_paths`` is false.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(
            f"{path}: missing header line {MANIFEST_HEADER!r}")

    header: dict[str, list[str]] = {}
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        key = parts[0]
        if key in ("split", "intrinsics", "depth_cap", "eval_crop",
                   "prediction_kind", "geometry", "png16_divisor"):
            if entries:
                raise ManifestError(
                    f"{path}:{lineno}: header line {key!r} after records")
            if key in header:
                raise ManifestError(f"{path}:{lineno}: duplicate {key!r} line")
            header[key] = parts[1:]
            continue
        if len(parts) != len(_ENTRY_FIELDS):
            raise ManifestError(
                f"{path}:{lineno}: expected {len(_ENTRY_FIELDS)} tab-separated "
                f"fields, got {len(parts)}")
        values = [None if p == "-" else p for p in parts]
        if values[0] is None:
            raise ManifestError(f"{path}:{lineno}: image path may not be '-'")
        entries.append(ManifestEntry(*values))

    if "split" not in header or len(header["split"]) != 1:
        raise ManifestError(f"{path}: missing or malformed 'split' line")
    if "intrinsics" not in header or len(header["intrinsics"]) != 6:
        raise ManifestError(f"{path}: missing or malformed 'intrinsics' line")
    try:
        fx, fy, cx, cy = (float(v) for v in header["intrinsics"][:4])
        width, height = (int(v) for v in header["intrinsics"][4:])
        intrinsics = CameraIntrinsics(fx, fy, cx, cy, width, height)
    except (ValueError, ValidationError) as exc:
        raise ManifestError(f"{path}: invalid intrinsics: {exc}") from exc

    def scalar(key: str, default: str) -> str:
        if key not in header:
            return default
        if len(header[key]) != 1:
            raise ManifestError(f"{path}: malformed {key!r} line")
        return header[key][0]

    try:
        depth_cap = float(scalar("depth_cap", "80"))
        png16_divisor = float(scalar("png16_divisor", "256"))
    except ValueError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if png16_divisor <= 0:
        raise ManifestError(f"{path}: png16_divisor must be positive")

    manifest = DatasetManifest(
        split_name=scalar("split", "unnamed"),
        intrinsics=intrinsics,
        entries=entries,
        depth_cap=depth_cap,
        eval_crop=scalar("eval_crop", CROP_NONE),
        prediction_kind=scalar("prediction_kind", KIND_UP_TO_SCALE),
        geometry=scalar("geometry", "native"),
        png16_divisor=png16_divisor,
        base_dir=path.parent,
    )
    if check_paths:
        _check_paths_exist(manifest)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest in the format read by :func:`load_manifest`."""
    path = Path(path)
    intr = manifest.intrinsics
    lines = [
        MANIFEST_HEADER,
        f"split\t{manifest.split_name}",
        "intrinsics\t" + "\t".join(
            repr(v) for v in (intr.focal_x, intr.focal_y,
                              intr.center_x, intr.center_y)
        ) + f"\t{intr.width}\t{intr.height}",
        f"depth_cap\t{manifest.depth_cap!r}",
        f"eval_crop\t{manifest.eval_crop}",
        f"prediction_kind\t{manifest.prediction_kind}",
        f"geometry\t{manifest.geometry}",
        f"png16_divisor\t{manifest.png16_divisor!r}",
    ]
    for entry in manifest.entries:
        lines.append("\t".join("-" if f is None else str(f)
                               for f in entry.fields()))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
