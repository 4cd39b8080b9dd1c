"""Conditional generator and multi-scale patch discriminators.

The generator is an encoder / residual-bottleneck / decoder with an
optional finer-scale enhancer stage (config flag, off by default at
desk scale). Three discriminators judge the (depth, RGB) pair at full,
half and quarter resolution; each exposes its intermediate activations
for the feature-matching loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, InputError


@dataclass
class GeneratorConfig:
    base_width: int = 32
    num_downsamples: int = 3
    num_residual_blocks: int = 4
    use_local_enhancer: bool = False
    in_channels: int = 1
    out_channels: int = 3
    # output range is fixed to [-1, 1] via tanh

    def __post_init__(self):
        if self.base_width < 8:
            raise ConfigurationError("generator base_width must be >= 8")
        if self.num_downsamples < 2:
            raise ConfigurationError("generator num_downsamples must be >= 2")
        if self.num_residual_blocks < 1:
            raise ConfigurationError("generator needs >= 1 residual block")
        if self.use_local_enhancer and self.base_width < 16:
            raise ConfigurationError("local enhancer requires base_width >= 16")

    def to_dict(self) -> dict:
        return {"base_width": self.base_width,
                "num_downsamples": self.num_downsamples,
                "num_residual_blocks": self.num_residual_blocks,
                "use_local_enhancer": self.use_local_enhancer,
                "in_channels": self.in_channels,
                "out_channels": self.out_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


def _conv_params(rng, name, in_ch, out_ch, k, params):
    params[f"{name}.w"] = Tensor(rng.normal(0.0, 0.02, (out_ch, in_ch, k, k)),
                                 requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(out_ch), requires_grad=True)


def _norm_params(name, ch, params):
    params[f"{name}.gamma"] = Tensor(np.ones(ch), requires_grad=True)
    params[f"{name}.beta"] = Tensor(np.zeros(ch), requires_grad=True)


class Generator:
    """Depth-to-RGB translator; deterministic for fixed weights."""

    def __init__(self, cfg: GeneratorConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        bw = cfg.base_width
        p = self.params

        _conv_params(rng, "stem", cfg.in_channels, bw, 7, p)
        _norm_params("stem.norm", bw, p)
        for i in range(cfg.num_downsamples):
            cin, cout = bw * 2 ** i, bw * 2 ** (i + 1)
            _conv_params(rng, f"down{i}", cin, cout, 3, p)
            _norm_params(f"down{i}.norm", cout, p)
        wide = bw * 2 ** cfg.num_downsamples
        for j in range(cfg.num_residual_blocks):
            _conv_params(rng, f"res{j}.c1", wide, wide, 3, p)
            _norm_params(f"res{j}.n1", wide, p)
            _conv_params(rng, f"res{j}.c2", wide, wide, 3, p)
            _norm_params(f"res{j}.n2", wide, p)
        for i in range(cfg.num_downsamples):
            cin = bw * 2 ** (cfg.num_downsamples - i)
            cout = cin // 2
            _conv_params(rng, f"up{i}", cin, cout, 3, p)
            _norm_params(f"up{i}.norm", cout, p)
        _conv_params(rng, "head", bw, cfg.out_channels, 7, p)

        if cfg.use_local_enhancer:
            half = bw // 2
            _conv_params(rng, "front.stem", cfg.in_channels, half, 7, p)
            _norm_params("front.stem.norm", half, p)
            _conv_params(rng, "front.down", half, bw, 3, p)
            _norm_params("front.down.norm", bw, p)
            for j in range(2):
                _conv_params(rng, f"back.res{j}.c1", bw, bw, 3, p)
                _norm_params(f"back.res{j}.n1", bw, p)
                _conv_params(rng, f"back.res{j}.c2", bw, bw, 3, p)
                _norm_params(f"back.res{j}.n2", bw, p)
            _conv_params(rng, "back.up", bw, half, 3, p)
            _norm_params("back.up.norm", half, p)
            _conv_params(rng, "back.head", half, cfg.out_channels, 7, p)

    # -- building blocks --------------------------------------------------
    def _conv(self, h, name, stride=1, pad=1, mode="zero"):
        p = self.params
        h = ad.pad2d(h, pad, mode=mode)
        return ad.conv2d(h, p[f"{name}.w"], p[f"{name}.b"], stride=stride)

    def _norm(self, h, name):
        p = self.params
        return ad.instance_norm(h, p[f"{name}.gamma"], p[f"{name}.beta"])

    def _resblock(self, h, name):
        y = self._conv(h, f"{name}.c1", pad=1, mode="reflect")
        y = ad.relu(self._norm(y, f"{name}.n1"))
        y = self._conv(y, f"{name}.c2", pad=1, mode="reflect")
        y = self._norm(y, f"{name}.n2")
        return ad.add(h, y)

    def _trunk(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        h = self._conv(x, "stem", pad=3, mode="reflect")
        h = ad.relu(self._norm(h, "stem.norm"))
        for i in range(cfg.num_downsamples):
            h = self._conv(h, f"down{i}", stride=2, pad=1)
            h = ad.relu(self._norm(h, f"down{i}.norm"))
        for j in range(cfg.num_residual_blocks):
            h = self._resblock(h, f"res{j}")
        for i in range(cfg.num_downsamples):
            h = ad.upsample_nearest2x(h)
            h = self._conv(h, f"up{i}", pad=1, mode="reflect")
            h = ad.relu(self._norm(h, f"up{i}.norm"))
        return h

    def _check_input(self, shape) -> None:
        if len(shape) != 4 or shape[1] != self.cfg.in_channels:
            raise InputError(
                f"generator expects (B, {self.cfg.in_channels}, H, W), got {shape}")
        h, w = shape[2], shape[3]
        factor = 2 ** self.cfg.num_downsamples
        if self.cfg.use_local_enhancer:
            factor *= 2
        if h % factor or w % factor:
            raise ConfigurationError(
                f"input {h}x{w} not divisible by the generator's downsampling factor {factor}")
        if min(h, w) // factor < 4:
            raise ConfigurationError(
                f"input {h}x{w} too small for {self.cfg.num_downsamples} downsamples")

    def forward(self, x: Tensor) -> Tensor:
        """(B, in, H, W) depth batch -> (B, out, H, W) image in [-1, 1]."""
        x = ad.as_tensor(x)
        self._check_input(x.data.shape)
        if not self.cfg.use_local_enhancer:
            h = self._trunk(x)
            h = self._conv(h, "head", pad=3, mode="reflect")
            return ad.tanh(h)
        core = self._trunk(ad.avg_pool2x2(x))
        front = self._conv(x, "front.stem", pad=3, mode="reflect")
        front = ad.relu(self._norm(front, "front.stem.norm"))
        front = self._conv(front, "front.down", stride=2, pad=1)
        front = ad.relu(self._norm(front, "front.down.norm"))
        h = ad.add(core, front)
        for j in range(2):
            h = self._resblock(h, f"back.res{j}")
        h = ad.upsample_nearest2x(h)
        h = self._conv(h, "back.up", pad=1, mode="reflect")
        h = ad.relu(self._norm(h, "back.up.norm"))
        h = self._conv(h, "back.head", pad=3, mode="reflect")
        return ad.tanh(h)


@dataclass
class DiscriminatorConfig:
    base_width: int = 32
    num_strided: int = 2
    in_channels: int = 4  # depth + RGB, channel-concatenated

    def __post_init__(self):
        if self.base_width < 8:
            raise ConfigurationError("discriminator base_width must be >= 8")
        if self.num_strided < 1:
            raise ConfigurationError("discriminator needs >= 1 strided layer")

    def to_dict(self) -> dict:
        return {"base_width": self.base_width, "num_strided": self.num_strided,
                "in_channels": self.in_channels}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        return cls(**d)


def _conv_out(n: int, k: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


class PatchDiscriminator:
    """Patch critic returning a raw score map and per-layer activations."""

    def __init__(self, cfg: DiscriminatorConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        p = self.params
        cin = cfg.in_channels
        width = cfg.base_width
        for i in range(cfg.num_strided):
            _conv_params(rng, f"layer{i}", cin, width, 4, p)
            if i > 0:
                _norm_params(f"layer{i}.norm", width, p)
            cin, width = width, width * 2
        _conv_params(rng, "penult", cin, width, 4, p)
        _norm_params("penult.norm", width, p)
        _conv_params(rng, "score", width, 1, 4, p)

    @property
    def num_feature_layers(self) -> int:
        return self.cfg.num_strided + 1

    def expected_score_shape(self, h: int, w: int) -> tuple[int, int]:
        """Score-map size implied by the layer strides and paddings."""
        for _ in range(self.cfg.num_strided):
            h, w = _conv_out(h, 4, 1, 2), _conv_out(w, 4, 1, 2)
        for _ in range(2):  # penultimate stride-1 conv and score conv
            h, w = _conv_out(h, 4, 1, 1), _conv_out(w, 4, 1, 1)
        if h < 1 or w < 1:
            raise ConfigurationError(
                "input too small for the discriminator's receptive field")
        return h, w

    def forward(self, pair: Tensor) -> tuple[Tensor, list[Tensor]]:
        p = self.params
        self.expected_score_shape(pair.data.shape[2], pair.data.shape[3])
        features: list[Tensor] = []
        h = pair
        for i in range(self.cfg.num_strided):
            h = ad.conv2d(ad.pad2d(h, 1), p[f"layer{i}.w"], p[f"layer{i}.b"], stride=2)
            if i > 0:
                h = ad.instance_norm(h, p[f"layer{i}.norm.gamma"], p[f"layer{i}.norm.beta"])
            h = ad.leaky_relu(h, 0.2)
            features.append(h)
        h = ad.conv2d(ad.pad2d(h, 1), p["penult.w"], p["penult.b"], stride=1)
        h = ad.instance_norm(h, p["penult.norm.gamma"], p["penult.norm.beta"])
        h = ad.leaky_relu(h, 0.2)
        features.append(h)
        score = ad.conv2d(ad.pad2d(h, 1), p["score.w"], p["score.b"], stride=1)
        return score, features


class DiscriminatorBank:
    """Three patch critics at scale factors 1, 1/2 and 1/4."""

    NUM_SCALES = 3

    def __init__(self, cfg: DiscriminatorConfig, seed: int = 0):
        self.cfg = cfg
        self.members = [PatchDiscriminator(cfg, seed=seed + k)
                        for k in range(self.NUM_SCALES)]

    @property
    def params(self) -> dict[str, Tensor]:
        merged: dict[str, Tensor] = {}
        for k, member in enumerate(self.members):
            for name, tensor in member.params.items():
                merged[f"d{k}.{name}"] = tensor
        return merged

    def forward(self, x: Tensor, y: Tensor) -> list[tuple[Tensor, list[Tensor]]]:
        """Score each (depth, image) pair at every scale.

        x: (B, 1, H, W) conditioning depth; y: (B, 3, H, W) image. The
        pair is channel-concatenated, then average-pooled once per
        additional scale.
        """
        x, y = ad.as_tensor(x), ad.as_tensor(y)
        if x.data.shape[0] != y.data.shape[0] or x.data.shape[2:] != y.data.shape[2:]:
            raise InputError(
                f"depth {x.data.shape} and image {y.data.shape} are misaligned")
        if x.data.shape[1] + y.data.shape[1] != self.cfg.in_channels:
            raise InputError(
                f"pair has {x.data.shape[1] + y.data.shape[1]} channels, "
                f"bank expects {self.cfg.in_channels}")
        pair = ad.concat([x, y], axis=1)
        outputs = []
        for k, member in enumerate(self.members):
            scaled = pair
            for _ in range(k):
                scaled = ad.avg_pool2x2(scaled)
            outputs.append(member.forward(scaled))
        return outputs
