"""Evaluation suite: structural similarity, Fréchet distance between
embedded image sets, and the anatomical Dice coefficient between input
and synthesized-image orifice segmentations.

The Fréchet embedder is pluggable. The self-contained default flattens
a 16x16 grayscale downsample; an external-embedding-command mode mirrors
the depth-backend file contract for users who want a conventional
feature extractor. Reported magnitudes depend on the embedder, so every
report records its fingerprint.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .data import DatasetManifest, load_depth_png16, load_rgb_png, save_rgb_png
from .depth import BackendConfig, RgbImage, estimate_depth
from .errors import BackendError, InputError, NumericalError
from .segmentation import SegParams, mask_pixels, segment_orifices

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    span = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(span ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _window_means(channel: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    k = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(channel, (k, k))
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a, b, value_range: float | None = None) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Stabilizers C1 = (0.01 L)^2 and C2 = (0.03 L)^2 for dynamic range L
    (255 for uint8 inputs unless given). Only fully valid windows enter
    the mean, taken over window positions and channels. Identical inputs
    score exactly 1.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise InputError(f"ssim inputs differ in shape: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    if x.ndim != 3:
        raise InputError(f"ssim expects HxW or HxWxC images, got {np.asarray(a).shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise InputError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    if value_range is None:
        value_range = 255.0 if np.asarray(a).dtype == np.uint8 else 1.0
    c1 = (SSIM_K1 * value_range) ** 2
    c2 = (SSIM_K2 * value_range) ** 2
    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    scores = []
    for ch in range(x.shape[2]):
        xc, yc = x[:, :, ch], y[:, :, ch]
        mu_x = _window_means(xc, kernel)
        mu_y = _window_means(yc, kernel)
        xx = _window_means(xc * xc, kernel) - mu_x * mu_x
        yy = _window_means(yc * yc, kernel) - mu_y * mu_y
        xy = _window_means(xc * yc, kernel) - mu_x * mu_y
        ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
                    / ((mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)))
        scores.append(ssim_map.mean())
    return float(np.mean(scores))


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix
    square root taken through the symmetric form
    (S_a^{1/2} S_b S_a^{1/2})^{1/2} via eigendecomposition, clipping
    negative eigenvalues at zero. Covariances are shrunk by
    1e-6 * trace/d on the diagonal whenever a sample set is smaller than
    twice the feature dimension.
    """
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or fa.shape[1] != fb.shape[1]:
        raise InputError("fid expects two (n, d) feature arrays of equal d")
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise NumericalError(
            "fid needs at least 2 samples per set to fit a covariance; "
            "supply more images")
    d = fa.shape[1]
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False)
    cov_b = np.cov(fb, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    for cov, n in ((cov_a, fa.shape[0]), (cov_b, fb.shape[0])):
        if n < 2 * d:
            shrink = 1e-6 * np.trace(cov) / d
            cov += shrink * np.eye(d)

    def psd_sqrt(mat: np.ndarray) -> np.ndarray:
        vals, vecs = np.linalg.eigh(mat)
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T

    root_a = psd_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh(inner)
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    delta = mu_a - mu_b
    value = float(delta @ delta + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    if not np.isfinite(value):
        raise NumericalError("fid evaluated non-finite; check feature scaling")
    return max(value, 0.0)


def dice_coefficient(a, b, epsilon: float = 1e-6) -> float:
    """2|A.B| / (|A| + |B| + eps) between binary masks.

    Two empty masks agree perfectly and score 1.0, complementing the
    loss-side convention so coefficient + loss = 1 in every case.
    """
    ma = mask_pixels(a)
    mb = mask_pixels(b)
    if ma.shape != mb.shape:
        raise InputError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    for side, m in (("first", ma), ("second", mb)):
        if not np.isin(m, (0.0, 1.0)).all():
            raise InputError(f"{side} mask is not binary")
    total = ma.sum() + mb.sum()
    if total == 0.0:
        return 1.0
    return float(2.0 * (ma * mb).sum() / (total + epsilon))


def anatomical_dice(depth01: np.ndarray, generated_rgb: np.ndarray,
                    seg_params: SegParams,
                    backend: BackendConfig | None = None,
                    epsilon: float = 1e-6) -> float:
    """Dice between the input depth's segmentation and the segmentation
    of the depth re-inferred from the generated image."""
    in_mask = segment_orifices(depth01, seg_params)
    depth_out = estimate_depth(RgbImage(generated_rgb),
                               backend or BackendConfig(kind="synthetic"))
    out_mask = segment_orifices(depth_out.values, seg_params)
    return dice_coefficient(in_mask, out_mask, epsilon)


# -- feature embedding ----------------------------------------------------------

@dataclass
class FeatureEmbedder:
    """Maps uint8 RGB images to fixed-dimension feature vectors."""

    mode: str = "identity-downsample"
    downsample_size: int = 16
    command: str | None = None
    timeout_s: float = 120.0

    def __post_init__(self):
        if self.mode not in ("identity-downsample", "external-embedding-command"):
            raise InputError(f"unknown embedder mode {self.mode!r}")
        if self.mode == "external-embedding-command" and not self.command:
            raise InputError("external embedder requires a command")

    @property
    def dimension(self) -> int | None:
        if self.mode == "identity-downsample":
            return self.downsample_size ** 2
        return None  # determined by the external command's first output

    def to_dict(self) -> dict:
        return {"mode": self.mode, "downsample_size": self.downsample_size,
                "command": self.command}

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True,
                                         separators=(",", ":")).encode()).hexdigest()[:16]

    def embed(self, images: list[np.ndarray]) -> np.ndarray:
        if self.mode == "identity-downsample":
            return np.stack([self._downsample(im) for im in images])
        return np.stack([self._external(im) for im in images])

    def _downsample(self, image: np.ndarray) -> np.ndarray:
        arr = np.asarray(image)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InputError("embedder expects HxWx3 uint8 images")
        gray = (0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1]
                + 0.114 * arr[:, :, 2]).astype(np.float64) / 255.0
        with Image.fromarray((gray * 255).astype(np.uint8)) as im:
            small = im.resize((self.downsample_size, self.downsample_size),
                              Image.BILINEAR)
            return np.array(small, dtype=np.float64).ravel() / 255.0

    def _external(self, image: np.ndarray) -> np.ndarray:
        with tempfile.TemporaryDirectory(prefix="airwaygan_embed_") as tmp:
            in_path = os.path.join(tmp, "input.png")
            out_path = os.path.join(tmp, "features.npy")
            save_rgb_png(np.asarray(image, dtype=np.uint8), in_path)
            proc = subprocess.run([self.command, in_path, out_path],
                                  capture_output=True, text=True,
                                  timeout=self.timeout_s)
            if proc.returncode != 0:
                raise BackendError("embedding command exited nonzero",
                                   command=self.command,
                                   returncode=proc.returncode, stderr=proc.stderr)
            try:
                vec = np.load(out_path)
            except Exception as e:
                raise BackendError(f"embedding output unreadable: {e}",
                                   command=self.command, stderr=proc.stderr) from e
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.size == 0:
            raise BackendError("embedding command produced an empty vector",
                               command=self.command)
        return vec


# -- evaluation -----------------------------------------------------------------

@dataclass
class PerImageRow:
    id: str
    ssim: float
    dice: float

    def to_dict(self) -> dict:
        return {"id": self.id, "ssim": self.ssim, "dice": self.dice}


@dataclass
class MetricsReport:
    fid: float
    ssim_mean: float
    dice_mean: float
    n_images: int
    n_excluded: int
    embedder_fingerprint: str
    rows: list[PerImageRow] = field(default_factory=list)
    exclusions: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"fid": self.fid, "ssim_mean": self.ssim_mean,
                "dice_mean": self.dice_mean, "n_images": self.n_images,
                "n_excluded": self.n_excluded,
                "embedder_fingerprint": self.embedder_fingerprint,
                "rows": [r.to_dict() for r in self.rows],
                "exclusions": self.exclusions}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(fid=d["fid"], ssim_mean=d["ssim_mean"], dice_mean=d["dice_mean"],
                   n_images=d["n_images"], n_excluded=d["n_excluded"],
                   embedder_fingerprint=d["embedder_fingerprint"],
                   rows=[PerImageRow(**r) for r in d.get("rows", [])],
                   exclusions=list(d.get("exclusions", [])))


def evaluate(translate_fn, manifest: DatasetManifest, split: str,
             seg_params: SegParams, embedder: FeatureEmbedder,
             *, backend: BackendConfig | None = None,
             out_dir: str | None = None,
             montage_limit: int = 8) -> MetricsReport:
    """Score every record of a split; optionally write report artifacts.

    translate_fn(record, depth01) -> uint8 RGB generated image. Per-image
    failures are logged and excluded (count recorded in the report);
    aggregates are recomputed from the per-image rows. When out_dir is
    given, writes report.json, per_image.csv and a montage grid of
    (input depth | generated | target | input mask | output mask) rows.
    """
    records = manifest.split_records(split)
    if not records:
        raise InputError(f"manifest has no records in split {split!r}")
    backend = backend or BackendConfig(kind="synthetic")
    rows: list[PerImageRow] = []
    exclusions: list[str] = []
    gen_images: list[np.ndarray] = []
    target_images: list[np.ndarray] = []
    montage_rows: list[np.ndarray] = []

    for record in records:
        try:
            depth = load_depth_png16(manifest.resolve(record.input_depth))
            target = load_rgb_png(manifest.resolve(record.target_rgb))
            generated = np.asarray(translate_fn(record, depth))
            if generated.shape != target.shape:
                raise InputError(
                    f"generated {generated.shape} vs target {target.shape}")
            score_ssim = ssim(generated, target, value_range=255.0)
            in_mask = segment_orifices(depth, seg_params)
            depth_out = estimate_depth(RgbImage(generated), backend)
            out_mask = segment_orifices(depth_out.values, seg_params)
            score_dice = dice_coefficient(in_mask, out_mask)
        except Exception as e:
            exclusions.append(f"{record.id}: {type(e).__name__}: {e}")
            continue
        rows.append(PerImageRow(id=record.id, ssim=score_ssim, dice=score_dice))
        gen_images.append(generated)
        target_images.append(target)
        if len(montage_rows) < montage_limit:
            montage_rows.append(_montage_row(depth, generated, target,
                                             in_mask.pixels, out_mask.pixels))

    if not rows:
        raise InputError(f"all {len(records)} records failed evaluation: "
                         + "; ".join(exclusions[:3]))
    fid_value = fid(embedder.embed(gen_images), embedder.embed(target_images))
    report = MetricsReport(
        fid=fid_value,
        ssim_mean=float(np.mean([r.ssim for r in rows])),
        dice_mean=float(np.mean([r.dice for r in rows])),
        n_images=len(rows),
        n_excluded=len(exclusions),
        embedder_fingerprint=embedder.fingerprint(),
        rows=rows,
        exclusions=exclusions)
    if out_dir is not None:
        write_report(report, out_dir, montage_rows)
    return report


def _to_rgb_panel(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 2:
        if arr.dtype != np.uint8:
            arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
        arr = np.stack([arr] * 3, axis=-1)
    return arr


def _montage_row(depth, generated, target, in_mask, out_mask) -> np.ndarray:
    panels = [_to_rgb_panel(depth), _to_rgb_panel(generated),
              _to_rgb_panel(target), _to_rgb_panel(in_mask),
              _to_rgb_panel(out_mask)]
    return np.concatenate(panels, axis=1)


def write_report(report: MetricsReport, out_dir: str,
                 montage_rows: list[np.ndarray] | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "per_image.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "ssim", "dice"])
        for row in report.rows:
            writer.writerow([row.id, f"{row.ssim:.6f}", f"{row.dice:.6f}"])
    if montage_rows:
        montage = np.concatenate(montage_rows, axis=0)
        save_rgb_png(montage, os.path.join(out_dir, "montage.png"))


def load_report(out_dir: str) -> MetricsReport:
    with open(os.path.join(out_dir, "report.json")) as fh:
        return MetricsReport.from_dict(json.load(fh))
