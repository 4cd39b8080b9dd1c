"""Alternating min-max training over a paired-dataset manifest.

One discriminator update (ascend the summed per-scale adversarial term)
then one generator update (descend the full weighted objective) per
step. Everything is a deterministic function of (manifest, config,
platform): weights initialize from the config seed, batch order derives
from (seed, epoch), and checkpoints restore optimizer state exactly, so
an interrupted run resumed from its checkpoint continues bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .data import DatasetManifest, load_pair_arrays
from .depth import BackendConfig
from .errors import ConfigurationError, InputError, NumericalError, TrainingError
from .losses import (LossBreakdown, LossWeights, anatomical_constraint_loss,
                     discriminator_objective, generator_objective, to_uint8_rgb)
from .networks import DiscriminatorBank, DiscriminatorConfig, Generator, GeneratorConfig
from .segmentation import SegParams

CHECKPOINT_FORMAT_VERSION = 1

DICE_MODES = ("differentiable", "score-only")


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 4
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seg: SegParams = field(default_factory=SegParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    dice_mode: str = "differentiable"
    seed: int = 0
    checkpoint_every: int = 1  # epochs
    eval_every: int = 1  # epochs
    val_limit: int = 8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise InputError("learning rates must be positive")
        if self.dice_mode not in DICE_MODES:
            raise InputError(f"dice_mode must be one of {DICE_MODES}")
        if self.checkpoint_every < 1 or self.eval_every < 1:
            raise InputError("cadences must be >= 1")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr_g": self.lr_g, "lr_d": self.lr_d,
                "beta1": self.beta1, "beta2": self.beta2,
                "weights": self.weights.to_dict(), "seg": self.seg.to_dict(),
                "generator": self.generator.to_dict(),
                "discriminator": self.discriminator.to_dict(),
                "dice_mode": self.dice_mode, "seed": self.seed,
                "checkpoint_every": self.checkpoint_every,
                "eval_every": self.eval_every, "val_limit": self.val_limit}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights.from_dict(d["weights"])
        d["seg"] = SegParams.from_dict(d["seg"])
        d["generator"] = GeneratorConfig.from_dict(d["generator"])
        d["discriminator"] = DiscriminatorConfig.from_dict(d["discriminator"])
        return cls(**d)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True,
                                         separators=(",", ":")).encode()).hexdigest()[:16]


def build_models(config: TrainConfig) -> tuple[Generator, DiscriminatorBank]:
    generator = Generator(config.generator, seed=config.seed)
    bank = DiscriminatorBank(config.discriminator, seed=config.seed + 1000)
    return generator, bank


def build_optimizers(config: TrainConfig, generator: Generator,
                     bank: DiscriminatorBank) -> tuple[Adam, Adam]:
    opt_g = Adam(generator.params, lr=config.lr_g,
                 betas=(config.beta1, config.beta2))
    opt_d = Adam(bank.params, lr=config.lr_d,
                 betas=(config.beta1, config.beta2))
    return opt_g, opt_d


def train_step(batch, generator: Generator, bank: DiscriminatorBank,
               opt_g: Adam, opt_d: Adam, weights: LossWeights,
               seg_params: SegParams, *, dice_mode: str = "differentiable",
               backend: BackendConfig | None = None) -> LossBreakdown:
    """One discriminator update then one generator update.

    Returns the breakdown measured during the generator phase (the
    adversarial discriminator values come from its own phase). Score
    gradients never reach the feature-matching real branch, and in
    score-only mode the dice value enters the log but not the gradient.
    """
    x01, y = batch
    x01 = np.asarray(x01, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xin = Tensor(x01 * 2.0 - 1.0)
    y_t = Tensor(y)

    fake = generator.forward(xin)

    opt_d.zero_grad()
    outs_real = bank.forward(xin, y_t)
    outs_fake = bank.forward(xin, fake.detach())
    d_loss, d_per_scale = discriminator_objective(outs_real, outs_fake,
                                                  weights.gan_variant)
    d_loss.backward()
    opt_d.step()

    opt_g.zero_grad()
    with ad.frozen(bank.params):
        outs_real_g = bank.forward(xin, y_t)
        outs_fake_g = bank.forward(xin, fake)
        if dice_mode == "differentiable" and weights.lambda_dice != 0.0:
            dice_term, _ = anatomical_constraint_loss(
                x01, fake, seg_params, mode="differentiable",
                epsilon=weights.epsilon)
        else:
            dice_term, _ = anatomical_constraint_loss(
                x01, fake, seg_params, mode="score-only",
                epsilon=weights.epsilon, backend=backend)
        total_g, parts = generator_objective(outs_real_g, outs_fake_g,
                                             dice_term, weights)
    total_g.backward()
    opt_g.step()

    total_d = float(np.sum(d_per_scale))
    return LossBreakdown(
        gan_g=float(np.sum(parts["gan_g_per_scale"])),
        gan_d=total_d,
        fm=float(np.sum(parts["fm_per_scale"])),
        dice=parts["dice"],
        total_g=float(total_g.data),
        total_d=total_d,
        gan_g_per_scale=parts["gan_g_per_scale"],
        gan_d_per_scale=tuple(d_per_scale),
        fm_per_scale=parts["fm_per_scale"],
    )


# -- checkpointing -------------------------------------------------------------

def save_checkpoint(path: str, generator: Generator, bank: DiscriminatorBank,
                    opt_g: Adam, opt_d: Adam, config: TrainConfig,
                    *, epoch_next: int, global_step: int) -> str:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch_next": epoch_next,
        "global_step": global_step,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "adam_g_t": opt_g.t,
        "adam_d_t": opt_d.t,
    }
    arrays: dict[str, np.ndarray] = {}
    for name, p in generator.params.items():
        arrays[f"gen/{name}"] = p.data
    for name, p in bank.params.items():
        arrays[f"bank/{name}"] = p.data
    for prefix, opt in (("adam_g", opt_g), ("adam_d", opt_d)):
        for name, arr in opt.m.items():
            arrays[f"{prefix}/m/{name}"] = arr
        for name, arr in opt.v.items():
            arrays[f"{prefix}/v/{name}"] = arr
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    tmp = path + ".tmp.npz"
    np.savez(tmp, meta=np.array(json.dumps(meta)), **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str) -> tuple[dict, dict]:
    if not os.path.exists(path):
        raise InputError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        arrays = {k: archive[k] for k in archive.files if k != "meta"}
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise InputError(f"unsupported checkpoint format in {path}")
    return meta, arrays


def restore_models(meta: dict, arrays: dict
                   ) -> tuple[Generator, DiscriminatorBank, TrainConfig]:
    config = TrainConfig.from_dict(meta["config"])
    generator, bank = build_models(config)
    for name, p in generator.params.items():
        p.data = np.array(arrays[f"gen/{name}"], copy=True)
    for name, p in bank.params.items():
        p.data = np.array(arrays[f"bank/{name}"], copy=True)
    return generator, bank, config


def load_models(path: str) -> tuple[Generator, DiscriminatorBank, TrainConfig]:
    meta, arrays = load_checkpoint(path)
    return restore_models(meta, arrays)


def _restore_optimizers(meta: dict, arrays: dict, opt_g: Adam, opt_d: Adam) -> None:
    for prefix, opt, t_key in (("adam_g", opt_g, "adam_g_t"),
                               ("adam_d", opt_d, "adam_d_t")):
        opt.t = int(meta[t_key])
        for name in opt.m:
            opt.m[name] = np.array(arrays[f"{prefix}/m/{name}"], copy=True)
            opt.v[name] = np.array(arrays[f"{prefix}/v/{name}"], copy=True)


def translate_depth(generator: Generator, depth01: np.ndarray) -> np.ndarray:
    """Run one normalized depth field through the generator; uint8 RGB out."""
    d = np.asarray(depth01, dtype=np.float64)
    if d.ndim != 2:
        raise InputError(f"expected an HxW depth field, got {d.shape}")
    xin = Tensor(d[None, None] * 2.0 - 1.0)
    with ad.frozen(generator.params):
        out = generator.forward(xin)
    return to_uint8_rgb(out.data[0])


# -- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    final_checkpoint: str
    log_path: str
    global_step: int
    last_val_dice: float | None


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(manifest: DatasetManifest, config: TrainConfig, out_dir: str,
          *, resume_from: str | None = None,
          backend: BackendConfig | None = None,
          log=None) -> TrainResult:
    """Run the configured number of epochs over the manifest's train split.

    Writes checkpoints at the configured cadence (plus one at the end),
    appends one JSONL log record per step, and measures anatomical Dice
    on a validation subset at the eval cadence. Resuming from any written
    checkpoint continues bit-identically on the same platform.
    """
    log = log or (lambda msg: None)
    train_records = manifest.split_records("train")
    if not train_records:
        raise InputError("manifest has no training records")
    val_records = manifest.split_records("val")[:config.val_limit]

    pairs = [load_pair_arrays(manifest, r) for r in train_records]
    x_all = np.stack([p[0] for p in pairs])[:, None]  # (N, 1, H, W)
    y_all = np.stack([p[1] for p in pairs])  # (N, 3, H, W)

    generator, bank = build_models(config)
    opt_g, opt_d = build_optimizers(config, generator, bank)
    start_epoch = 0
    global_step = 0
    if resume_from is not None:
        meta, arrays = load_checkpoint(resume_from)
        saved = TrainConfig.from_dict(meta["config"])
        if saved.generator.to_dict() != config.generator.to_dict() \
                or saved.discriminator.to_dict() != config.discriminator.to_dict():
            raise ConfigurationError(
                "checkpoint architecture does not match the requested config")
        generator, bank, _ = restore_models(meta, arrays)
        opt_g, opt_d = build_optimizers(config, generator, bank)
        _restore_optimizers(meta, arrays, opt_g, opt_d)
        start_epoch = int(meta["epoch_next"])
        global_step = int(meta["global_step"])

    os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    log_mode = "a" if resume_from is not None else "w"

    last_ckpt: str | None = resume_from
    last_val: float | None = None

    def write_ckpt(epoch_next: int) -> str:
        path = os.path.join(ckpt_dir, f"epoch_{epoch_next:04d}.npz")
        save_checkpoint(path, generator, bank, opt_g, opt_d, config,
                        epoch_next=epoch_next, global_step=global_step)
        return path

    with open(log_path, log_mode) as log_fh:
        for epoch in range(start_epoch, config.epochs):
            t_epoch = time.time()
            for batch_idx in _epoch_batches(len(pairs), config.batch_size,
                                            config.seed, epoch):
                batch = (x_all[batch_idx], y_all[batch_idx])
                try:
                    breakdown = train_step(batch, generator, bank, opt_g, opt_d,
                                           config.weights, config.seg,
                                           dice_mode=config.dice_mode,
                                           backend=backend)
                except NumericalError as e:
                    raise TrainingError(
                        f"aborting at step {global_step}: {e}",
                        last_checkpoint=last_ckpt) from e
                global_step += 1
                record = {"step": global_step, "epoch": epoch,
                          "breakdown": breakdown.to_dict(),
                          "val_dice": last_val,
                          "wall_time": time.time()}
                log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()
            if val_records and (epoch + 1) % config.eval_every == 0:
                last_val = validation_dice(generator, manifest, val_records,
                                           config.seg, backend=backend)
            if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
                last_ckpt = write_ckpt(epoch + 1)
            log(f"epoch {epoch + 1}/{config.epochs} done in "
                f"{time.time() - t_epoch:.1f}s, val_dice={last_val}")

    assert last_ckpt is not None
    return TrainResult(final_checkpoint=last_ckpt, log_path=log_path,
                       global_step=global_step, last_val_dice=last_val)


def validation_dice(generator: Generator, manifest: DatasetManifest,
                    records, seg_params: SegParams,
                    backend: BackendConfig | None = None) -> float:
    """Mean anatomical Dice coefficient over the given records."""
    from .metrics import anatomical_dice  # lazy: metrics is a sibling, not a dep

    scores = []
    for record in records:
        depth, _ = load_pair_arrays(manifest, record)
        rgb = translate_depth(generator, depth)
        scores.append(anatomical_dice(depth, rgb, seg_params, backend=backend))
    return float(np.mean(scores)) if scores else float("nan")
