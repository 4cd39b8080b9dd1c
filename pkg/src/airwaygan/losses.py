"""Loss terms of the constrained translation objective.

The full generator objective is

    total_g = sum_k [ gan_g_k + lambda_fm * fm_k ] + lambda_dice * dice

over the three discriminator scales k, where `dice` penalizes loss of
orifice overlap between the input depth's segmentation and the
segmentation of the depth re-inferred from the generated image. The
discriminator side is the summed per-scale adversarial term.

Two adversarial variants are provided: the log form (scores are
probabilities, discriminator term maximized, generator trained with the
non-saturating surrogate) and a least-squares switch (raw scores,
everything minimized).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .depth import BackendConfig, RgbImage, estimate_depth, synthetic_depth_tensor
from .errors import InputError, NumericalError
from .segmentation import (SegParams, converged_centroids, mask_pixels,
                           segment_orifices, soft_assignment_tensor)

GAN_VARIANTS = ("log", "least-squares")

# Stability floor inside the log variant's logarithms.
LOG_SCORE_FLOOR = 1e-7


@dataclass
class LossWeights:
    lambda_fm: float = 10.0
    lambda_dice: float = 1.0
    epsilon: float = 1e-6
    gan_variant: str = "log"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InputError("epsilon must be positive")
        for name in ("lambda_fm", "lambda_dice"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InputError(f"{name} must be finite and >= 0")
        if self.gan_variant not in GAN_VARIANTS:
            raise InputError(f"gan_variant must be one of {GAN_VARIANTS}")

    def to_dict(self) -> dict:
        return {"lambda_fm": self.lambda_fm, "lambda_dice": self.lambda_dice,
                "epsilon": self.epsilon, "gan_variant": self.gan_variant}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


@dataclass
class LossBreakdown:
    """All objective terms for one batch; sums carry the per-scale parts."""

    gan_g: float
    gan_d: float
    fm: float
    dice: float
    total_g: float
    total_d: float
    gan_g_per_scale: tuple[float, ...] = field(default=())
    gan_d_per_scale: tuple[float, ...] = field(default=())
    fm_per_scale: tuple[float, ...] = field(default=())

    def identity_gap(self, weights: LossWeights) -> float:
        """|total_g - (sum_k gan_g_k + lambda_fm * sum_k fm_k + lambda_dice * dice)|"""
        recomputed = (sum(self.gan_g_per_scale)
                      + weights.lambda_fm * sum(self.fm_per_scale)
                      + weights.lambda_dice * self.dice)
        return abs(self.total_g - recomputed)

    def to_dict(self) -> dict:
        return {"gan_g": self.gan_g, "gan_d": self.gan_d, "fm": self.fm,
                "dice": self.dice, "total_g": self.total_g, "total_d": self.total_d,
                "gan_g_per_scale": list(self.gan_g_per_scale),
                "gan_d_per_scale": list(self.gan_d_per_scale),
                "fm_per_scale": list(self.fm_per_scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossBreakdown":
        return cls(gan_g=d["gan_g"], gan_d=d["gan_d"], fm=d["fm"], dice=d["dice"],
                   total_g=d["total_g"], total_d=d["total_d"],
                   gan_g_per_scale=tuple(d.get("gan_g_per_scale", ())),
                   gan_d_per_scale=tuple(d.get("gan_d_per_scale", ())),
                   fm_per_scale=tuple(d.get("fm_per_scale", ())))


def score_activation(raw: Tensor, variant: str) -> Tensor:
    """Map raw discriminator outputs to the variant's score space."""
    if variant == "log":
        return ad.sigmoid(raw)
    if variant == "least-squares":
        return ad.as_tensor(raw)
    raise InputError(f"unknown gan variant {variant!r}")


def gan_loss(real_scores, fake_scores, variant: str = "log",
             floor: float = LOG_SCORE_FLOOR) -> tuple[Tensor, Tensor]:
    """Adversarial terms for one scale: (generator term, discriminator term).

    Log variant: scores are probabilities in (0, 1); the discriminator
    term E[log D(x,y)] + E[log(1 - D(x,G(x)))] is the quantity being
    maximized, and the generator term is the non-saturating
    -E[log D(x,G(x))] to be minimized. Least-squares variant: raw
    scores, both terms are squared-error losses to minimize. Means run
    over batch and score-map positions.
    """
    r, f = ad.as_tensor(real_scores), ad.as_tensor(fake_scores)
    if not (np.isfinite(r.data).all() and np.isfinite(f.data).all()):
        raise NumericalError("gan_loss received non-finite scores")
    if variant == "log":
        r_c = ad.clamp(r, floor, 1.0 - floor)
        f_c = ad.clamp(f, floor, 1.0 - floor)
        d_term = ad.add(ad.tmean(ad.log(r_c)), ad.tmean(ad.log(1.0 - f_c)))
        g_term = -ad.tmean(ad.log(f_c))
        return g_term, d_term
    if variant == "least-squares":
        d_term = ad.add(ad.tmean((r - 1.0) ** 2), ad.tmean(f ** 2))
        g_term = ad.tmean((f - 1.0) ** 2)
        return g_term, d_term
    raise InputError(f"unknown gan variant {variant!r}")


def feature_matching_loss(real_features, fake_features) -> Tensor:
    """Per-layer normalized L1 between real and generated activations.

    sum_m (1/N_m) * ||feat_m(x, y) - feat_m(x, G(x))||_1 with N_m the
    per-sample element count of layer m, averaged over the batch. The
    real branch is treated as constant: no gradient reaches the
    discriminator through this loss.
    """
    if len(real_features) != len(fake_features):
        raise InputError(
            f"feature list lengths differ: {len(real_features)} vs {len(fake_features)}")
    total = None
    for m, (real, fake) in enumerate(zip(real_features, fake_features)):
        real = real.detach() if isinstance(real, Tensor) else ad.as_tensor(real)
        fake = ad.as_tensor(fake)
        if real.data.shape != fake.data.shape:
            raise InputError(
                f"layer {m} feature shapes differ: {real.data.shape} vs {fake.data.shape}")
        n_m = int(np.prod(real.data.shape[1:]))
        per_sample = ad.tsum(ad.absolute(fake - real),
                             axis=tuple(range(1, real.data.ndim)))
        term = ad.tmean(per_sample) * (1.0 / n_m)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise InputError("feature lists are empty")
    return total


def dice_loss(mask_in, mask_out, epsilon: float = 1e-6):
    """1 - 2|A.B| / (|A| + |B| + eps) over pixels; soft or hard masks.

    Symmetric, bounded in [0, 1]. Two all-empty masks score 0 (an
    orifice-free frame that stays orifice-free is consistent, not
    penalized). Returns a Tensor when either input carries gradients,
    otherwise a float.
    """
    a = mask_in if isinstance(mask_in, Tensor) else ad.Tensor(mask_pixels(mask_in))
    b = mask_out if isinstance(mask_out, Tensor) else ad.Tensor(mask_pixels(mask_out))
    if a.data.shape != b.data.shape:
        raise InputError(f"mask shapes differ: {a.data.shape} vs {b.data.shape}")
    for side, t in (("first", a), ("second", b)):
        if t.data.min() < 0.0 or t.data.max() > 1.0:
            raise InputError(f"{side} mask has values outside [0, 1]")
    tensor_mode = a.requires_grad or b.requires_grad
    if float(a.data.sum() + b.data.sum()) == 0.0:
        return ad.Tensor(np.zeros(())) if tensor_mode else 0.0
    overlap = ad.tsum(ad.mul(a, b))
    denom = ad.tsum(a) + ad.tsum(b) + epsilon
    loss = 1.0 - (2.0 * overlap) / denom
    return loss if tensor_mode else float(loss.data)


def to_uint8_rgb(image: np.ndarray) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    arr = np.transpose(np.asarray(image), (1, 2, 0))
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def anatomical_constraint_loss(input_depth, generated, seg_params: SegParams,
                               *, mode: str = "differentiable",
                               epsilon: float = 1e-6,
                               backend: BackendConfig | None = None):
    """Orifice-overlap penalty between input and generated frames.

    input_depth: (B, 1, H, W) or (B, H, W) normalized depth batch. The
    input-side mask is the hard segmentation (a constant anatomical
    prior). generated: (B, 3, H, W) images in [-1, 1].

    mode "differentiable" re-infers depth from the generated tensor via
    the synthetic luminance path and scores the soft segmentation, so
    gradients flow into the generator (converged k-means centroids are
    treated as constants). mode "score-only" renders to uint8, runs the
    configured backend and the hard segmentation, and returns a
    gradient-free value; this is the only option for non-differentiable
    external backends.

    Returns (batch-mean loss, per-sample values).
    """
    if mode not in ("differentiable", "score-only"):
        raise InputError(f"unknown dice mode {mode!r}")
    depths = np.asarray(input_depth, dtype=np.float64)
    if depths.ndim == 4:
        depths = depths[:, 0]
    if depths.ndim != 3:
        raise InputError(f"expected a depth batch, got shape {depths.shape}")
    gen = generated if isinstance(generated, Tensor) else ad.Tensor(np.asarray(generated))
    if gen.data.ndim != 4 or gen.data.shape[0] != depths.shape[0]:
        raise InputError(
            f"generated batch {gen.data.shape} does not match depth batch {depths.shape}")

    per_sample: list[float] = []
    terms: list[Tensor] = []
    for b in range(depths.shape[0]):
        in_mask = segment_orifices(depths[b], seg_params).pixels.astype(np.float64)
        if mode == "differentiable":
            depth_t = synthetic_depth_tensor(gen[b])
            centroids, n_peak = converged_centroids(depth_t.data, seg_params)
            if n_peak == 0:
                out_soft = ad.Tensor(np.zeros_like(depth_t.data))
            else:
                out_soft = soft_assignment_tensor(depth_t, centroids, n_peak,
                                                  seg_params.soft_temperature)
            loss_b = dice_loss(ad.Tensor(in_mask), out_soft, epsilon)
            if not isinstance(loss_b, Tensor):
                loss_b = ad.Tensor(np.asarray(float(loss_b)))
        else:
            rgb = RgbImage(to_uint8_rgb(gen.data[b]))
            depth_out = estimate_depth(rgb, backend or BackendConfig(kind="synthetic"))
            out_mask = segment_orifices(depth_out.values, seg_params)
            loss_b = ad.Tensor(np.asarray(dice_loss(in_mask, out_mask, epsilon)))
        per_sample.append(float(loss_b.data))
        terms.append(loss_b)

    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    mean = total * (1.0 / len(terms))
    return mean, per_sample


def _finite_or_raise(value: float, term: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite loss term: {term} = {value}")
    return float(value)


def discriminator_objective(bank_real, bank_fake, variant: str
                            ) -> tuple[Tensor, list[float]]:
    """Summed per-scale discriminator term and its per-scale values.

    The returned tensor is the optimization loss (negated for the log
    variant, whose stated term is maximized).
    """
    d_terms: list[Tensor] = []
    for (real_raw, _), (fake_raw, _) in zip(bank_real, bank_fake):
        real_s = score_activation(real_raw, variant)
        fake_s = score_activation(fake_raw, variant)
        _, d_k = gan_loss(real_s, fake_s, variant)
        d_terms.append(d_k)
    summed = d_terms[0]
    for t in d_terms[1:]:
        summed = ad.add(summed, t)
    per_scale = [_finite_or_raise(float(t.data), f"gan_d scale {k + 1}")
                 for k, t in enumerate(d_terms)]
    opt_loss = -summed if variant == "log" else summed
    return opt_loss, per_scale


def generator_objective(bank_real, bank_fake, dice_term, weights: LossWeights
                        ) -> tuple[Tensor, dict]:
    """Full generator loss: adversarial + weighted feature matching + dice.

    bank_real features act as constants; dice_term may be a Tensor
    (differentiable mode) or a float (score-only / precomputed).
    """
    gan_parts: list[Tensor] = []
    fm_parts: list[Tensor] = []
    for (real_raw, real_feats), (fake_raw, fake_feats) in zip(bank_real, bank_fake):
        fake_s = score_activation(fake_raw, weights.gan_variant)
        real_s = score_activation(real_raw, weights.gan_variant).detach()
        g_k, _ = gan_loss(real_s, fake_s, weights.gan_variant)
        gan_parts.append(g_k)
        fm_parts.append(feature_matching_loss(real_feats, fake_feats))
    total = gan_parts[0]
    for t in gan_parts[1:]:
        total = ad.add(total, t)
    if weights.lambda_fm != 0.0:
        fm_sum = fm_parts[0]
        for t in fm_parts[1:]:
            fm_sum = ad.add(fm_sum, t)
        total = ad.add(total, fm_sum * weights.lambda_fm)
    dice_t = dice_term if isinstance(dice_term, Tensor) else ad.Tensor(np.asarray(float(dice_term)))
    if weights.lambda_dice != 0.0:
        total = ad.add(total, dice_t * weights.lambda_dice)
    parts = {
        "gan_g_per_scale": tuple(_finite_or_raise(float(t.data), f"gan_g scale {k + 1}")
                                 for k, t in enumerate(gan_parts)),
        "fm_per_scale": tuple(_finite_or_raise(float(t.data), f"fm scale {k + 1}")
                              for k, t in enumerate(fm_parts)),
        "dice": _finite_or_raise(float(dice_t.data), "dice"),
    }
    return total, parts


def total_objective(depth_batch, target_batch, generator, bank,
                    weights: LossWeights, seg_params: SegParams,
                    *, dice_mode: str = "differentiable",
                    backend: BackendConfig | None = None) -> LossBreakdown:
    """Evaluate every objective term on one batch (no parameter updates).

    depth_batch: (B, 1, H, W) normalized depth in [0, 1];
    target_batch: (B, 3, H, W) images in [-1, 1]. With lambda_dice = 0
    the generator total reduces exactly to the unconstrained paired
    objective; with lambda_fm = 0 as well, to the bare adversarial sum.
    """
    x01 = np.asarray(depth_batch, dtype=np.float64)
    y = np.asarray(target_batch, dtype=np.float64)
    xin = ad.Tensor(x01 * 2.0 - 1.0)
    y_t = ad.Tensor(y)
    with ad.frozen(generator.params), ad.frozen(bank.params):
        fake = generator.forward(xin)
        outs_real = bank.forward(xin, y_t)
        outs_fake = bank.forward(xin, fake)
        _, d_per_scale = discriminator_objective(outs_real, outs_fake,
                                                 weights.gan_variant)
        dice_mean, _ = anatomical_constraint_loss(
            x01, fake, seg_params, mode=dice_mode,
            epsilon=weights.epsilon, backend=backend)
        total_g_t, parts = generator_objective(outs_real, outs_fake,
                                               dice_mean, weights)
    total_g = _finite_or_raise(float(total_g_t.data), "total_g")
    total_d = _finite_or_raise(float(np.sum(d_per_scale)), "total_d")
    return LossBreakdown(
        gan_g=float(np.sum(parts["gan_g_per_scale"])),
        gan_d=total_d,
        fm=float(np.sum(parts["fm_per_scale"])),
        dice=parts["dice"],
        total_g=total_g,
        total_d=total_d,
        gan_g_per_scale=parts["gan_g_per_scale"],
        gan_d_per_scale=tuple(d_per_scale),
        fm_per_scale=parts["fm_per_scale"],
    )
