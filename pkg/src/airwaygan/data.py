"""Paired-dataset construction, manifests and image file I/O.

A dataset is a directory of 8-bit RGB target PNGs and 16-bit grayscale
depth PNGs plus a manifest (`manifest.header.json` + `records.jsonl`,
one JSON record per line). Pairs come either from a folder of real RGB
frames run through a depth backend, or from seeded synthetic scenes
(which additionally record ground-truth orifice masks for evaluation).
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .depth import BackendConfig, RgbImage, estimate_depth
from .errors import BuildError, InputError, ParameterError
from .scenes import generate_synthetic_scene, render_pseudo_target, sample_scene_params

TOOL_VERSION = "0.1.0"

SOURCE_TAGS = ("real", "synthetic", "virtual", "phantom")
SPLITS = ("train", "val", "test")

DEPTH_SCALE = 65535.0


# -- image file I/O -----------------------------------------------------------

def save_rgb_png(pixels: np.ndarray, path: str) -> None:
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise InputError(f"expected uint8 HxWx3 pixels, got {arr.shape} {arr.dtype}")
    Image.fromarray(arr).save(path)


def load_rgb_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB"))
    except InputError:
        raise
    except Exception as e:
        raise InputError(f"cannot read image {path}: {e}") from e


def save_depth_png16(values: np.ndarray, path: str) -> None:
    """Store a [0, 1] depth field as 16-bit grayscale PNG."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.min() < 0.0 or v.max() > 1.0:
        raise InputError("depth field must be HxW in [0, 1]")
    Image.fromarray(np.rint(v * DEPTH_SCALE).astype(np.uint16)).save(path)


def load_depth_png16(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except Exception as e:
        raise InputError(f"cannot read depth image {path}: {e}") from e
    if arr.ndim != 2:
        raise InputError(f"depth image {path} is not single-channel")
    return arr.astype(np.float64) / DEPTH_SCALE


def save_mask_png(mask: np.ndarray, path: str) -> None:
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise InputError("mask must be binary")
    Image.fromarray((m * 255).astype(np.uint8)).save(path)


def load_mask_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def resize_rgb(pixels: np.ndarray, size: int) -> np.ndarray:
    with Image.fromarray(pixels) as im:
        return np.array(im.resize((size, size), Image.BILINEAR))


# -- preprocessing -------------------------------------------------------------

def circular_crop(image, radius_fraction: float = 1.0):
    """Black out pixels outside the centered circle, endoscope-style.

    The circle radius is `radius_fraction` of half the shorter side,
    measured from the geometric pixel center. Idempotent.
    """
    if not 0.0 < radius_fraction <= 1.0:
        raise ParameterError("radius_fraction must lie in (0, 1]")
    wrap = isinstance(image, RgbImage)
    arr = image.pixels.copy() if wrap else np.asarray(image).copy()
    h, w = arr.shape[:2]
    radius = radius_fraction * min(h, w) / 2.0
    rows = np.arange(h, dtype=np.float64)[:, None] - (h - 1) / 2.0
    cols = np.arange(w, dtype=np.float64)[None, :] - (w - 1) / 2.0
    outside = np.hypot(rows, cols) > radius
    arr[outside] = 0
    return RgbImage(arr) if wrap else arr


# -- manifest ------------------------------------------------------------------

@dataclass
class ImagePair:
    id: str
    input_depth: str
    target_rgb: str
    source_tag: str
    split: str
    truth_mask: str | None = None

    def __post_init__(self):
        if self.source_tag not in SOURCE_TAGS:
            raise InputError(f"unknown source_tag {self.source_tag!r}")
        if self.split not in SPLITS:
            raise InputError(f"unknown split {self.split!r}")

    def to_dict(self) -> dict:
        d = {"id": self.id, "input_depth": self.input_depth,
             "target_rgb": self.target_rgb, "source_tag": self.source_tag,
             "split": self.split}
        if self.truth_mask is not None:
            d["truth_mask"] = self.truth_mask
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImagePair":
        return cls(id=d["id"], input_depth=d["input_depth"],
                   target_rgb=d["target_rgb"], source_tag=d["source_tag"],
                   split=d["split"], truth_mask=d.get("truth_mask"))


@dataclass
class DatasetManifest:
    records: list[ImagePair]
    preprocessing: dict
    backend_fingerprint: str
    created_at: str
    tool_version: str = TOOL_VERSION
    root: str = ""

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise InputError("manifest contains duplicate record ids")

    def split_records(self, split: str) -> list[ImagePair]:
        if split not in SPLITS:
            raise InputError(f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def resolve(self, rel_path: str) -> str:
        return os.path.join(self.root, rel_path) if self.root else rel_path

    def header_dict(self) -> dict:
        return {"preprocessing": self.preprocessing,
                "backend_fingerprint": self.backend_fingerprint,
                "created_at": self.created_at,
                "tool_version": self.tool_version,
                "n_records": len(self.records)}


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def backend_fingerprint(backend: BackendConfig) -> str:
    return hashlib.sha256(_canonical_json(backend.to_dict()).encode()).hexdigest()[:16]


def save_manifest(manifest: DatasetManifest, out_dir: str) -> str:
    """Write header + records atomically; returns the header path."""
    os.makedirs(out_dir, exist_ok=True)
    header_path = os.path.join(out_dir, "manifest.header.json")
    records_path = os.path.join(out_dir, "records.jsonl")
    tmp = records_path + ".tmp"
    with open(tmp, "w") as fh:
        for record in manifest.records:
            fh.write(_canonical_json(record.to_dict()) + "\n")
    os.replace(tmp, records_path)
    tmp = header_path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(manifest.header_dict(), sort_keys=True, indent=2) + "\n")
    os.replace(tmp, header_path)
    return header_path


def load_manifest(dataset_dir: str) -> DatasetManifest:
    header_path = os.path.join(dataset_dir, "manifest.header.json")
    records_path = os.path.join(dataset_dir, "records.jsonl")
    if not os.path.exists(header_path) or not os.path.exists(records_path):
        raise InputError(f"no manifest found under {dataset_dir}")
    with open(header_path) as fh:
        header = json.load(fh)
    records = []
    with open(records_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ImagePair.from_dict(json.loads(line)))
    return DatasetManifest(records=records,
                           preprocessing=header["preprocessing"],
                           backend_fingerprint=header["backend_fingerprint"],
                           created_at=header["created_at"],
                           tool_version=header.get("tool_version", "unknown"),
                           root=dataset_dir)


# -- split assignment ----------------------------------------------------------

def assign_splits(ids: list[str], fractions: tuple[float, float, float],
                  seed: int) -> dict[str, str]:
    """Deterministic quota split, independent of enumeration order.

    Records are ranked by a hash of (id, seed), then cut into
    train/val/test quotas sized by largest-remainder rounding, so equal
    inputs give equal assignments on any platform.
    """
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ParameterError("need three nonnegative split fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ParameterError(f"split fractions must sum to 1, got {sum(fractions)}")
    ranked = sorted(ids, key=lambda i: hashlib.sha256(
        f"{i}:{seed}".encode()).hexdigest())
    n = len(ranked)
    exact = [f * n for f in fractions]
    counts = [int(e) for e in exact]
    remainders = sorted(range(3), key=lambda k: exact[k] - counts[k], reverse=True)
    for k in remainders:
        if sum(counts) == n:
            break
        counts[k] += 1
    assignment: dict[str, str] = {}
    cursor = 0
    for split, count in zip(SPLITS, counts):
        for rid in ranked[cursor:cursor + count]:
            assignment[rid] = split
        cursor += count
    return assignment


# -- builders ------------------------------------------------------------------

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


def build_paired_dataset(rgb_dir: str, backend: BackendConfig, out_dir: str,
                         *, resolution: int = 256,
                         crop_fraction: float | None = None,
                         split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                         seed: int = 0,
                         source_tag: str = "real",
                         log=None) -> DatasetManifest:
    """Pair every readable RGB under rgb_dir with its inferred depth.

    Images are resized square, optionally circle-cropped, then run
    through the backend. Failures skip the record (logged with a
    reason); zero successes abort the build. Depth inference fans out to
    backend.max_workers threads; record order and splits stay
    deterministic regardless.
    """
    log = log or (lambda msg: None)
    names = sorted(f for f in os.listdir(rgb_dir)
                   if f.lower().endswith(_IMAGE_EXTS))
    if not names:
        raise BuildError(f"no images found under {rgb_dir}")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)

    def prepare(name: str):
        stem = os.path.splitext(name)[0]
        try:
            pixels = load_rgb_png(os.path.join(rgb_dir, name))
            pixels = resize_rgb(pixels, resolution)
            if crop_fraction is not None:
                pixels = circular_crop(pixels, crop_fraction)
            depth = estimate_depth(RgbImage(pixels), backend)
            return stem, pixels, depth, None
        except Exception as e:
            return stem, None, None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=backend.max_workers) as pool:
        prepared = list(pool.map(prepare, names))

    ok = [(stem, px, depth) for stem, px, depth, err in prepared if err is None]
    for stem, _, _, err in prepared:
        if err is not None:
            log(f"skip {stem}: {err}")
    if not ok:
        raise BuildError(f"no usable image pairs out of {len(names)} candidates")

    assignment = assign_splits([stem for stem, _, _ in ok], split_fractions, seed)
    records = []
    for stem, pixels, depth in ok:
        rgb_rel = os.path.join("images", f"{stem}.rgb.png")
        depth_rel = os.path.join("images", f"{stem}.depth.png")
        save_rgb_png(pixels, os.path.join(out_dir, rgb_rel))
        save_depth_png16(depth.values, os.path.join(out_dir, depth_rel))
        records.append(ImagePair(id=stem, input_depth=depth_rel,
                                 target_rgb=rgb_rel, source_tag=source_tag,
                                 split=assignment[stem]))
    manifest = DatasetManifest(
        records=records,
        preprocessing={"resolution": resolution, "crop_fraction": crop_fraction,
                       "split_fractions": list(split_fractions), "seed": seed},
        backend_fingerprint=backend_fingerprint(backend),
        created_at=_now(), root=out_dir)
    save_manifest(manifest, out_dir)
    return manifest


def build_synthetic_dataset(n_scenes: int, out_dir: str, *, resolution: int = 256,
                            count_range: tuple[int, int] = (1, 3),
                            radius_fractions: tuple[float, float] = (0.09, 0.2),
                            noise_amplitude: float = 0.015,
                            split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
                            seed: int = 0) -> DatasetManifest:
    """Seeded synthetic pairs with ground-truth orifice masks attached."""
    if n_scenes < 1:
        raise ParameterError("need at least one scene")
    rng = np.random.default_rng(seed)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    entries = []
    for i in range(n_scenes):
        params = sample_scene_params(rng, resolution, resolution,
                                     count_range=count_range,
                                     radius_fractions=radius_fractions,
                                     noise_amplitude=noise_amplitude)
        scene_seed = int(rng.integers(0, 2 ** 31))
        style_seed = int(rng.integers(0, 2 ** 31))
        scene = generate_synthetic_scene(params, scene_seed)
        target = render_pseudo_target(scene, style_seed)
        entries.append((f"scene_{i:05d}", scene, target))

    assignment = assign_splits([e[0] for e in entries], split_fractions, seed)
    records = []
    for stem, scene, target in entries:
        depth_rel = os.path.join("images", f"{stem}.depth.png")
        rgb_rel = os.path.join("images", f"{stem}.rgb.png")
        mask_rel = os.path.join("images", f"{stem}.mask.png")
        save_depth_png16(scene.depth.values, os.path.join(out_dir, depth_rel))
        save_rgb_png(target.pixels, os.path.join(out_dir, rgb_rel))
        save_mask_png(scene.truth_mask, os.path.join(out_dir, mask_rel))
        records.append(ImagePair(id=stem, input_depth=depth_rel,
                                 target_rgb=rgb_rel, source_tag="synthetic",
                                 split=assignment[stem], truth_mask=mask_rel))
    manifest = DatasetManifest(
        records=records,
        preprocessing={"resolution": resolution, "crop_fraction": None,
                       "count_range": list(count_range),
                       "radius_fractions": list(radius_fractions),
                       "noise_amplitude": noise_amplitude,
                       "split_fractions": list(split_fractions), "seed": seed},
        backend_fingerprint=backend_fingerprint(BackendConfig(kind="synthetic")),
        created_at=_now(), root=out_dir)
    save_manifest(manifest, out_dir)
    return manifest


def load_pair_arrays(manifest: DatasetManifest, record: ImagePair
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Load one record as (depth [0,1] HxW, target [-1,1] 3xHxW)."""
    depth = load_depth_png16(manifest.resolve(record.input_depth))
    rgb = load_rgb_png(manifest.resolve(record.target_rgb))
    if rgb.shape[:2] != depth.shape:
        raise InputError(f"record {record.id}: depth {depth.shape} and target "
                         f"{rgb.shape[:2]} shapes differ")
    target = np.transpose(rgb.astype(np.float64) / 127.5 - 1.0, (2, 0, 1))
    return depth, target
