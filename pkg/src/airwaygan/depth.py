"""Depth inference from RGB frames.

Two interchangeable backends produce the single-channel depth field the
rest of the pipeline runs on: a deterministic synthetic backend (darker
pixels read as farther, matching the synthetic scene renderer) and an
external user-supplied estimator command for production depth models.

Depth polarity is fixed package-wide: 1.0 is farthest, so airway
orifices (distal structures) appear as local maxima. Every depth image
is min-max normalized per image; constant fields map to all zeros.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import BackendError, InputError

# Rec. 601 luma coefficients, shared by the numpy and tensor paths.
_LUMA = (0.299, 0.587, 0.114)

MIN_IMAGE_SIDE = 32


@dataclass
class RgbImage:
    """H x W x 3 integer image, intensities in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InputError(f"RgbImage needs HxWx3 pixels, got shape {px.shape}")
        if px.shape[0] < MIN_IMAGE_SIDE or px.shape[1] < MIN_IMAGE_SIDE:
            raise InputError(
                f"RgbImage must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {px.shape[:2]}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise InputError("RgbImage intensities must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class DepthImage:
    """H x W depth field in [0, 1] under the far=1.0 polarity convention."""

    values: np.ndarray
    polarity: str = "far=1"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError(f"DepthImage needs an HxW field, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("DepthImage values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise InputError("DepthImage values must lie in [0, 1]")
        self.values = v

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class BackendConfig:
    """How to obtain a depth image from an RGB frame.

    kind "synthetic" maps inverse luminance to depth (the renderer makes
    lumen interiors darker, so darkness reads as farness). kind
    "external" shells out to `command <input.png> <output.png>` where the
    output is a 16-bit single-channel PNG of identical resolution.
    """

    kind: str = "synthetic"
    command: str | None = None
    invert_output: bool = False
    max_workers: int = 1
    timeout_s: float = 120.0

    def __post_init__(self):
        if self.kind not in ("synthetic", "external"):
            raise InputError(f"unknown backend kind {self.kind!r}")
        if self.kind == "external" and not self.command:
            raise InputError("external backend requires a command")
        if self.max_workers < 1:
            raise InputError("max_workers must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "command": self.command,
                "invert_output": self.invert_output,
                "max_workers": self.max_workers, "timeout_s": self.timeout_s}


def normalize_depth(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; constant fields map to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InputError("depth field must be finite before normalization")
    lo = v.min()
    rng = v.max() - lo
    if rng == 0.0:
        return np.zeros_like(v)
    return (v - lo) / rng


def luminance(pixels: np.ndarray) -> np.ndarray:
    """Rec. 601 luma in [0, 1] from uint8 RGB pixels."""
    px = np.asarray(pixels, dtype=np.float64) / 255.0
    return _LUMA[0] * px[..., 0] + _LUMA[1] * px[..., 1] + _LUMA[2] * px[..., 2]


def synthetic_depth(image: RgbImage) -> DepthImage:
    """Deterministic inverse-luminance depth: darker pixels are farther."""
    return DepthImage(normalize_depth(1.0 - luminance(image.pixels)))


def synthetic_depth_tensor(rgb: "ad.Tensor") -> "ad.Tensor":
    """Differentiable twin of the synthetic backend.

    Takes a (3, H, W) tensor in [-1, 1] and returns the normalized (H, W)
    depth field. The min-max normalization contributes subgradients at
    the extremal pixels; constant inputs yield a detached zero field.
    """
    lum01 = (ad.mul(rgb[0], _LUMA[0]) + ad.mul(rgb[1], _LUMA[1])
             + ad.mul(rgb[2], _LUMA[2]) + 1.0) * 0.5
    inv = 1.0 - lum01
    lo = ad.amin(inv)
    hi = ad.amax(inv)
    rng = float(hi.data - lo.data)
    if rng == 0.0:
        return ad.Tensor(np.zeros_like(inv.data))
    return (inv - lo) / (hi - lo)


def _run_external(cfg: BackendConfig, image: RgbImage) -> DepthImage:
    from .data import load_depth_png16, save_rgb_png  # local import avoids a cycle

    with tempfile.TemporaryDirectory(prefix="airwaygan_depth_") as tmp:
        in_path = os.path.join(tmp, "input.png")
        out_path = os.path.join(tmp, "depth.png")
        save_rgb_png(image.pixels, in_path)
        cmd = [cfg.command, in_path, out_path]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True,
                                  timeout=cfg.timeout_s)
        except FileNotFoundError as e:
            raise BackendError("depth backend command not found",
                               command=cfg.command, stderr=str(e)) from e
        except subprocess.TimeoutExpired as e:
            raise BackendError("depth backend timed out",
                               command=cfg.command, stderr=str(e)) from e
        if proc.returncode != 0:
            raise BackendError("depth backend exited nonzero",
                               command=" ".join(cmd), returncode=proc.returncode,
                               stderr=proc.stderr)
        if not os.path.exists(out_path):
            raise BackendError("depth backend produced no output file",
                               command=" ".join(cmd), stderr=proc.stderr)
        try:
            raw = load_depth_png16(out_path)
        except Exception as e:
            raise BackendError(f"depth backend output unreadable: {e}",
                               command=" ".join(cmd), stderr=proc.stderr) from e
    if raw.shape != (image.height, image.width):
        raise BackendError(
            f"depth backend output shape {raw.shape} does not match input "
            f"{(image.height, image.width)}", command=cfg.command)
    if cfg.invert_output:
        raw = 1.0 - raw
    return DepthImage(normalize_depth(raw))


def estimate_depth(image: RgbImage, backend: BackendConfig) -> DepthImage:
    """Infer a normalized depth image with the configured backend.

    Output shape always equals the input shape; a deterministic backend
    yields a deterministic result. External command failures surface as
    BackendError with the command's diagnostics attached.
    """
    if not isinstance(image, RgbImage):
        image = RgbImage(np.asarray(image))
    if backend.kind == "synthetic":
        return synthetic_depth(image)
    return _run_external(backend, image)
