"""Deterministic synthetic bronchoscopy-like scenes.

Each scene is a smooth depth field with one to three lumen "wells"
(depth increasing toward the far opening) plus seeded low-frequency
noise, together with the exact ground-truth orifice mask. Scenes give
the segmentation and training code a controlled oracle: every lumen
center is a strict local depth maximum within its radius by
construction (noise is tapered to zero toward the centers), and the
pseudo-RGB rendering keeps the orifice geometry recoverable from
luminance alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from .depth import DepthImage, RgbImage, normalize_depth
from .errors import ParameterError

# Depth field composition constants. The cone cap on top of each
# plateau well keeps the center a strict maximum even against the
# background gradient and residual noise.
_BACKGROUND_BASE = 0.15
_BACKGROUND_AMPLITUDE = 0.04
_WELL_DEPTH = 0.5
_CAP_FRACTION = 0.12
_MAX_NOISE_AMPLITUDE = 0.05


@dataclass
class SceneParams:
    """Geometry of a synthetic scene: lumen discs inside an H x W frame."""

    height: int
    width: int
    centers: tuple[tuple[int, int], ...]
    radii: tuple[float, ...]
    noise_amplitude: float = 0.015
    overlap_tolerance: float = 0.0

    def __post_init__(self):
        self.centers = tuple((int(r), int(c)) for r, c in self.centers)
        self.radii = tuple(float(r) for r in self.radii)
        n = len(self.centers)
        if not 1 <= n <= 3:
            raise ParameterError(f"lumen count must be 1..3, got {n}")
        if len(self.radii) != n:
            raise ParameterError("one radius per lumen center required")
        if self.height < 32 or self.width < 32:
            raise ParameterError("scene must be at least 32x32")
        for (row, col), radius in zip(self.centers, self.radii):
            if radius < 3:
                raise ParameterError(f"lumen radius {radius} too small (min 3)")
            if not (radius <= row <= self.height - 1 - radius
                    and radius <= col <= self.width - 1 - radius):
                raise ParameterError(
                    f"lumen at {(row, col)} with radius {radius} leaves the frame")
        for i in range(n):
            for j in range(i + 1, n):
                dist = float(np.hypot(self.centers[i][0] - self.centers[j][0],
                                      self.centers[i][1] - self.centers[j][1]))
                min_dist = self.radii[i] + self.radii[j] - self.overlap_tolerance
                if dist < min_dist:
                    raise ParameterError(
                        f"lumen discs {i} and {j} overlap beyond tolerance "
                        f"(distance {dist:.1f} < {min_dist:.1f}); masks would be ambiguous")
        if not 0.0 <= self.noise_amplitude <= _MAX_NOISE_AMPLITUDE:
            raise ParameterError(
                f"noise_amplitude must be in [0, {_MAX_NOISE_AMPLITUDE}]")

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width,
                "centers": [list(c) for c in self.centers],
                "radii": list(self.radii),
                "noise_amplitude": self.noise_amplitude,
                "overlap_tolerance": self.overlap_tolerance}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneParams":
        return cls(height=d["height"], width=d["width"],
                   centers=tuple(tuple(c) for c in d["centers"]),
                   radii=tuple(d["radii"]),
                   noise_amplitude=d.get("noise_amplitude", 0.015),
                   overlap_tolerance=d.get("overlap_tolerance", 0.0))


@dataclass
class SyntheticScene:
    depth: DepthImage
    truth_mask: np.ndarray  # uint8 {0,1}, one component per lumen
    params: SceneParams
    seed: int


def _center_distances(params: SceneParams) -> list[np.ndarray]:
    rows = np.arange(params.height, dtype=np.float64)[:, None]
    cols = np.arange(params.width, dtype=np.float64)[None, :]
    return [np.hypot(rows - r0, cols - c0) for r0, c0 in params.centers]


def _background(params: SceneParams) -> np.ndarray:
    rows = np.arange(params.height, dtype=np.float64)[:, None]
    cols = np.arange(params.width, dtype=np.float64)[None, :]
    cr, cc = (params.height - 1) / 2.0, (params.width - 1) / 2.0
    d = np.hypot(rows - cr, cols - cc)
    return _BACKGROUND_BASE + _BACKGROUND_AMPLITUDE * (1.0 - (d / d.max()) ** 2)


def _well_field(params: SceneParams) -> np.ndarray:
    """Plateau wells with a cone cap at each center.

    The sigmoid plateau makes value-based clustering recover the full
    disc; the cone keeps the center pixel a strict maximum under uint8
    rendering and seeded noise.
    """
    well = np.zeros((params.height, params.width), dtype=np.float64)
    for dist, radius in zip(_center_distances(params), params.radii):
        edge_width = max(1.2, 0.08 * radius)
        plateau = expit((radius - dist) / edge_width)
        cap = np.maximum(0.0, 1.0 - 2.0 * dist / radius)
        well += _WELL_DEPTH * (plateau + _CAP_FRACTION * cap)
    return well


def _noise_taper(params: SceneParams) -> np.ndarray:
    """1 outside the lumens, decaying quadratically to 0 at each center."""
    taper = np.ones((params.height, params.width), dtype=np.float64)
    for dist, radius in zip(_center_distances(params), params.radii):
        taper = np.minimum(taper, np.clip((dist / radius) ** 2, 0.0, 1.0))
    return taper


def generate_synthetic_scene(params: SceneParams, seed: int) -> SyntheticScene:
    """Deterministic scene for (params, seed): depth field plus truth mask."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((params.height, params.width))
    smooth = gaussian_filter(raw, sigma=2.0, mode="reflect")
    peak = np.abs(smooth).max()
    noise = np.zeros_like(smooth) if peak == 0 else smooth / peak * params.noise_amplitude

    depth = _background(params) + _well_field(params) + noise * _noise_taper(params)

    mask = np.zeros((params.height, params.width), dtype=np.uint8)
    for dist, radius in zip(_center_distances(params), params.radii):
        mask[dist <= radius] = 1

    return SyntheticScene(depth=DepthImage(normalize_depth(depth)),
                          truth_mask=mask, params=params, seed=int(seed))


def render_pseudo_target(scene: SyntheticScene, style_seed: int) -> RgbImage:
    """Deterministic pseudo-RGB rendering of a scene.

    Tissue gets a seeded color and low-frequency texture; lumen
    interiors are darkened following the well shape, with extra cone
    emphasis so the center pixel stays strictly darkest after uint8
    quantization.
    """
    params = scene.params
    rng = np.random.default_rng(style_seed)
    base = np.array([170 + rng.integers(0, 41),
                     85 + rng.integers(0, 31),
                     90 + rng.integers(0, 31)], dtype=np.float64)

    # Convex blend of plateau and cone keeps darkness strictly maximal at
    # the center pixel (no clipping plateau); tissue shading stays within
    # the segmentation prominence floor so texture bumps never read as
    # orifices after depth re-inference.
    well = _well_field(params)
    well_norm = well / well.max()
    cone = np.zeros((params.height, params.width), dtype=np.float64)
    for dist, radius in zip(_center_distances(params), params.radii):
        cone = np.maximum(cone, np.maximum(0.0, 1.0 - 2.0 * dist / radius))
    darkness = 0.85 * well_norm + 0.15 * cone

    rows = np.arange(params.height, dtype=np.float64)[:, None]
    cols = np.arange(params.width, dtype=np.float64)[None, :]
    cr, cc = (params.height - 1) / 2.0, (params.width - 1) / 2.0
    vignette = 1.0 - 0.04 * (np.hypot(rows - cr, cols - cc)
                             / np.hypot(cr, cc)) ** 2

    texture = gaussian_filter(rng.standard_normal((params.height, params.width)),
                              sigma=3.0, mode="reflect")
    peak = np.abs(texture).max()
    texture = np.zeros_like(texture) if peak == 0 else texture / peak * 4.0

    factor = vignette * (1.0 - 0.85 * darkness)
    img = base[None, None, :] * factor[:, :, None]
    img += (texture * (1.0 - well_norm))[:, :, None]
    return RgbImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))


def sample_scene_params(rng: np.random.Generator, height: int, width: int,
                        count_range: tuple[int, int] = (1, 3),
                        radius_fractions: tuple[float, float] = (0.09, 0.2),
                        noise_amplitude: float = 0.015,
                        max_tries: int = 500) -> SceneParams:
    """Draw random scene geometry with non-overlapping, in-frame lumens.

    Deterministic for a given generator state. Rejection-samples center
    placements; radii shrink geometrically if a draw cannot be placed.
    """
    lo, hi = count_range
    if not (1 <= lo <= hi <= 3):
        raise ParameterError("count_range must lie within [1, 3]")
    count = int(rng.integers(lo, hi + 1))
    side = min(height, width)
    r_lo = max(4.0, radius_fractions[0] * side)
    r_hi = max(r_lo, radius_fractions[1] * side)
    radii = sorted(rng.uniform(r_lo, r_hi, size=count), reverse=True)

    shrink = 1.0
    while True:
        scaled = [max(4.0, r * shrink) for r in radii]
        centers: list[tuple[int, int]] = []
        placed = True
        for radius in scaled:
            margin = int(np.ceil(radius)) + 2
            ok = False
            for _ in range(max_tries):
                row = int(rng.integers(margin, height - margin))
                col = int(rng.integers(margin, width - margin))
                if all(np.hypot(row - r0, col - c0) >= radius + r0_rad + 4.0
                       for (r0, c0), r0_rad in zip(centers, scaled)):
                    centers.append((row, col))
                    ok = True
                    break
            if not ok:
                placed = False
                break
        if placed:
            return SceneParams(height=height, width=width,
                               centers=tuple(centers),
                               radii=tuple(scaled[:len(centers)]),
                               noise_amplitude=noise_amplitude)
        shrink *= 0.85
        if shrink < 0.3:
            raise ParameterError(
                f"could not place {count} lumens in a {height}x{width} frame")
