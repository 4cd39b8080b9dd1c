"""Training-free bronchial orifice segmentation on depth images.

Pipeline: local-extrema detection (orifice centers sit at depth maxima
under the far=1 polarity), minimum-distance non-maximum suppression,
then k-means over per-pixel depth values seeded at the surviving peaks
plus one background centroid. Deterministic end to end: no random
initialization anywhere, so the segmentation can serve as a training
signal. A softmin relaxation of the converged cluster assignment
provides the differentiable variant used inside the anatomical loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from . import autodiff as ad
from .depth import DepthImage
from .errors import InputError


@dataclass
class SegParams:
    """Tunable knobs of the segmentation pipeline (all config-overridable)."""

    extrema_neighborhood_radius: int = 7
    nms_min_distance: float = 16.0
    peak_min_prominence: float = 0.15
    kmeans_max_iters: int = 50
    soft_temperature: float = 0.05

    def __post_init__(self):
        if self.extrema_neighborhood_radius < 1:
            raise InputError("extrema_neighborhood_radius must be >= 1")
        if self.nms_min_distance < 1:
            raise InputError("nms_min_distance must be >= 1")
        if self.peak_min_prominence <= 0:
            raise InputError("peak_min_prominence must be positive")
        if self.kmeans_max_iters < 1:
            raise InputError("kmeans_max_iters must be >= 1")
        if self.soft_temperature <= 0:
            raise InputError("soft_temperature must be positive")

    def to_dict(self) -> dict:
        return {"extrema_neighborhood_radius": self.extrema_neighborhood_radius,
                "nms_min_distance": self.nms_min_distance,
                "peak_min_prominence": self.peak_min_prominence,
                "kmeans_max_iters": self.kmeans_max_iters,
                "soft_temperature": self.soft_temperature}

    @classmethod
    def from_dict(cls, d: dict) -> "SegParams":
        return cls(**d)


@dataclass(frozen=True)
class Peak:
    row: int
    col: int
    depth_value: float


@dataclass
class OrificeMask:
    """Binary per-pixel orifice labels (1 = orifice)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise InputError(f"OrificeMask needs an HxW array, got {px.shape}")
        if not np.isin(px, (0, 1)).all():
            raise InputError("OrificeMask pixels must be 0 or 1")
        self.pixels = px.astype(np.uint8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class SoftMask:
    """Relaxed orifice assignment in [0, 1]; threshold at 0.5 for a hard mask."""

    pixels: np.ndarray
    temperature: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise InputError(f"SoftMask needs an HxW array, got {px.shape}")
        if px.min() < 0.0 or px.max() > 1.0:
            raise InputError("SoftMask pixels must lie in [0, 1]")
        self.pixels = px

    def threshold(self) -> OrificeMask:
        return OrificeMask((self.pixels > 0.5).astype(np.uint8))


def _depth_values(depth) -> np.ndarray:
    if isinstance(depth, DepthImage):
        return depth.values
    v = np.asarray(depth, dtype=np.float64)
    if v.ndim != 2:
        raise InputError(f"expected an HxW depth field, got shape {v.shape}")
    return v


def _disc_footprint(radius: int) -> np.ndarray:
    span = np.arange(-radius, radius + 1)
    return (span[:, None] ** 2 + span[None, :] ** 2) <= radius * radius


def find_local_extrema(depth, params: SegParams) -> list[Peak]:
    """Depth maxima within a circular neighborhood, above a prominence floor.

    A pixel qualifies when it is >= every value within
    `extrema_neighborhood_radius` (Euclidean, window clipped at borders)
    and exceeds the image minimum by at least `peak_min_prominence` of
    the depth range. Returned sorted by depth descending, ties by
    (row, col).
    """
    values = _depth_values(depth)
    vmin = values.min()
    vrange = values.max() - vmin
    if vrange <= 0.0:
        return []
    threshold = vmin + params.peak_min_prominence * vrange
    footprint = _disc_footprint(params.extrema_neighborhood_radius)
    neighborhood_max = maximum_filter(values, footprint=footprint, mode="nearest")
    rows, cols = np.nonzero((values >= neighborhood_max) & (values >= threshold))
    peaks = [Peak(int(r), int(c), float(values[r, c])) for r, c in zip(rows, cols)]
    peaks.sort(key=lambda p: (-p.depth_value, p.row, p.col))
    return peaks


def non_max_suppress(peaks: list[Peak], d_min: float) -> list[Peak]:
    """Greedy suppression: keep peaks in descending depth order, dropping
    any within Euclidean distance < d_min of an already kept one. The
    globally deepest peak always survives.
    """
    ordered = sorted(peaks, key=lambda p: (-p.depth_value, p.row, p.col))
    kept: list[Peak] = []
    for p in ordered:
        if all(np.hypot(p.row - q.row, p.col - q.col) >= d_min for q in kept):
            kept.append(p)
    return kept


def _kmeans_1d(values: np.ndarray, init_centroids: np.ndarray,
               max_iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations on scalar features with fixed deterministic init.

    Ties in the assignment go to the lowest centroid index; empty
    clusters keep their previous centroid. Returns (labels, centroids).
    """
    flat = values.ravel()
    centroids = np.asarray(init_centroids, dtype=np.float64).copy()
    labels = np.argmin(np.abs(flat[:, None] - centroids[None, :]), axis=1)
    for _ in range(max_iters):
        for k in range(centroids.size):
            members = flat[labels == k]
            if members.size:
                centroids[k] = members.mean()
        new_labels = np.argmin(np.abs(flat[:, None] - centroids[None, :]), axis=1)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centroids


def kmeans_segment(depth, peaks: list[Peak], params: SegParams) -> OrificeMask:
    """Depth-value k-means seeded at the peaks, one extra background cluster.

    k = len(peaks) + 1; peak centroids start at the peaks' depth values
    and the background centroid at the image minimum. Pixels assigned to
    any peak centroid form the orifice mask.
    """
    if not peaks:
        raise InputError("kmeans_segment requires at least one peak")
    values = _depth_values(depth)
    init = np.array([p.depth_value for p in peaks] + [values.min()])
    labels, _ = _kmeans_1d(values, init, params.kmeans_max_iters)
    mask = (labels < len(peaks)).astype(np.uint8).reshape(values.shape)
    return OrificeMask(mask)


def segment_orifices(depth, params: SegParams | None = None) -> OrificeMask:
    """Full pipeline: extrema -> suppression -> seeded k-means.

    Images with no surviving peaks (e.g. facing a wall) yield the
    all-zero mask rather than an error.
    """
    params = params or SegParams()
    values = _depth_values(depth)
    peaks = non_max_suppress(find_local_extrema(values, params),
                             params.nms_min_distance)
    if not peaks:
        return OrificeMask(np.zeros(values.shape, dtype=np.uint8))
    return kmeans_segment(values, peaks, params)


def converged_centroids(depth, params: SegParams | None = None
                        ) -> tuple[np.ndarray, int]:
    """Converged k-means centroids plus the number of peak-seeded ones.

    Returns (centroids, n_peak); n_peak == 0 means no peaks survived and
    the soft mask is identically zero.
    """
    params = params or SegParams()
    values = _depth_values(depth)
    peaks = non_max_suppress(find_local_extrema(values, params),
                             params.nms_min_distance)
    if not peaks:
        return np.empty(0), 0
    init = np.array([p.depth_value for p in peaks] + [values.min()])
    _, centroids = _kmeans_1d(values, init, params.kmeans_max_iters)
    return centroids, len(peaks)


def soft_assignment(values: np.ndarray, centroids: np.ndarray,
                    n_peak: int, temperature: float) -> np.ndarray:
    """Softmin over centroid distances, summed over the peak centroids.

    Weights exp(-|d - c| / temperature); the exp scores are shifted by
    the per-pixel best score before normalization, which cancels in the
    ratio and is therefore exact.
    """
    scores = -np.abs(values[..., None] - centroids[None, None, :]) / temperature
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    return weights[..., :n_peak].sum(axis=-1) / weights.sum(axis=-1)


def soft_assignment_tensor(depth_t: "ad.Tensor", centroids: np.ndarray,
                           n_peak: int, temperature: float) -> "ad.Tensor":
    """Differentiable twin of :func:`soft_assignment`.

    The converged centroids are treated as constants; gradients flow
    only through the per-pixel depth values. The per-pixel stability
    shift is detached, which is exact because it cancels in the ratio.
    """
    values = depth_t.data
    shift = (-np.abs(values[..., None] - centroids[None, None, :])
             / temperature).max(axis=-1)
    weights = []
    for c in centroids:
        dist = ad.absolute(depth_t - float(c))
        weights.append(ad.exp(ad.mul(dist, -1.0 / temperature) - shift))
    numerator = weights[0] if n_peak == 1 else ad.add(weights[0], weights[1])
    for w in weights[2:n_peak]:
        numerator = ad.add(numerator, w)
    denominator = weights[0]
    for w in weights[1:]:
        denominator = ad.add(denominator, w)
    return ad.div(numerator, denominator)


def soft_segment(depth, params: SegParams | None = None) -> SoftMask:
    """Differentiable relaxation of :func:`segment_orifices`.

    Runs the hard pipeline to convergence, then replaces the argmin
    assignment by a softmin at the configured temperature, summed over
    the peak centroids. As temperature -> 0 the soft mask approaches the
    hard one; pixels whose assignment margin exceeds the temperature
    already agree after thresholding. No peaks -> all-zero mask.
    """
    params = params or SegParams()
    values = _depth_values(depth)
    centroids, n_peak = converged_centroids(values, params)
    if n_peak == 0:
        return SoftMask(np.zeros(values.shape), params.soft_temperature)
    soft = soft_assignment(values, centroids, n_peak, params.soft_temperature)
    return SoftMask(soft, params.soft_temperature)


def mask_pixels(mask) -> np.ndarray:
    """Unwrap OrificeMask / SoftMask / bare arrays to a float field."""
    if isinstance(mask, OrificeMask):
        return mask.pixels.astype(np.float64)
    if isinstance(mask, SoftMask):
        return mask.pixels
    return np.asarray(mask, dtype=np.float64)
