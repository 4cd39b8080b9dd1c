"""Command-line entry point wiring the pipeline stages together.

Subcommands: depth, segment, build-data, synth-data, train, translate,
evaluate. Exit codes: 0 success, 1 per-item partial failures (logged to
stderr), 2 configuration or input errors. Every command persists its
fully resolved configuration next to the artifacts it produces.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import GlobalConfig, load_config, write_resolved
from .data import (build_paired_dataset, build_synthetic_dataset, load_depth_png16,
                   load_manifest, load_rgb_png, save_depth_png16, save_rgb_png)
from .depth import RgbImage, estimate_depth, normalize_depth
from .errors import AirwayGanError
from .metrics import evaluate
from .segmentation import find_local_extrema, non_max_suppress, segment_orifices
from .training import load_models, train, translate_depth

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _list_inputs(path: str) -> list[str]:
    if os.path.isdir(path):
        names = sorted(f for f in os.listdir(path)
                       if f.lower().endswith(_IMAGE_EXTS))
        return [os.path.join(path, f) for f in names]
    if os.path.isfile(path):
        return [path]
    raise AirwayGanError(f"input path not found: {path}")


def _backend_overrides(args) -> dict:
    tree: dict = {}
    if getattr(args, "backend", None):
        tree.setdefault("backend", {})["kind"] = args.backend
    if getattr(args, "backend_command", None):
        tree.setdefault("backend", {})["command"] = args.backend_command
        tree.setdefault("backend", {}).setdefault("kind", "external")
    if getattr(args, "invert_depth", False):
        tree.setdefault("backend", {})["invert_output"] = True
    return tree


def _resolve(args, extra: dict | None = None) -> GlobalConfig:
    overrides = _backend_overrides(args)
    if extra:
        for key, value in extra.items():
            node = overrides.setdefault(key, {}) if isinstance(value, dict) else None
            if node is not None:
                node.update(value)
            else:
                overrides[key] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(getattr(args, "config", None), overrides)


def cmd_depth(args) -> int:
    cfg = _resolve(args)
    inputs = _list_inputs(args.input)
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    failures = 0
    for path in inputs:
        stem = os.path.splitext(os.path.basename(path))[0]
        try:
            image = RgbImage(load_rgb_png(path))
            depth = estimate_depth(image, cfg.backend)
            save_depth_png16(depth.values, os.path.join(args.out, f"{stem}.png"))
        except AirwayGanError as e:
            _err(f"skip {stem}: {e}")
            failures += 1
    return 1 if failures else 0


def cmd_segment(args) -> int:
    extra: dict = {"seg": {}}
    if args.extrema_radius is not None:
        extra["seg"]["extrema_neighborhood_radius"] = args.extrema_radius
    if args.min_distance is not None:
        extra["seg"]["nms_min_distance"] = args.min_distance
    if args.prominence is not None:
        extra["seg"]["peak_min_prominence"] = args.prominence
    cfg = _resolve(args, extra)
    inputs = _list_inputs(args.input)
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    failures = 0
    for path in inputs:
        stem = os.path.splitext(os.path.basename(path))[0]
        try:
            values = normalize_depth(load_depth_png16(path))
            peaks = non_max_suppress(find_local_extrema(values, cfg.seg),
                                     cfg.seg.nms_min_distance)
            mask = segment_orifices(values, cfg.seg)
            from .data import save_mask_png
            save_mask_png(mask.pixels, os.path.join(args.out, f"{stem}.mask.png"))
            with open(os.path.join(args.out, f"{stem}.peaks.json"), "w") as fh:
                json.dump([{"row": p.row, "col": p.col,
                            "depth_value": p.depth_value} for p in peaks],
                          fh, indent=2)
                fh.write("\n")
        except AirwayGanError as e:
            _err(f"skip {stem}: {e}")
            failures += 1
    return 1 if failures else 0


def cmd_build_data(args) -> int:
    extra: dict = {"data": {}}
    if args.resolution is not None:
        extra["data"]["resolution"] = args.resolution
    if args.crop_fraction is not None:
        extra["data"]["crop_fraction"] = args.crop_fraction
    cfg = _resolve(args, extra)
    skipped: list[str] = []
    manifest = build_paired_dataset(
        args.input, cfg.backend, args.out,
        resolution=cfg.data.resolution,
        crop_fraction=cfg.data.crop_fraction,
        split_fractions=cfg.data.split_fractions,
        seed=cfg.seed, log=lambda m: skipped.append(m))
    write_resolved(cfg, args.out)
    for msg in skipped:
        _err(msg)
    print(f"built {len(manifest.records)} pairs under {args.out}"
          f" ({len(skipped)} skipped)")
    return 1 if skipped else 0


def cmd_synth_data(args) -> int:
    extra: dict = {"data": {}}
    if args.n is not None:
        extra["data"]["n_scenes"] = args.n
    if args.resolution is not None:
        extra["data"]["resolution"] = args.resolution
    cfg = _resolve(args, extra)
    manifest = build_synthetic_dataset(
        cfg.data.n_scenes, args.out, resolution=cfg.data.resolution,
        split_fractions=cfg.data.split_fractions, seed=cfg.seed)
    write_resolved(cfg, args.out)
    print(f"generated {len(manifest.records)} synthetic pairs under {args.out}")
    return 0


def cmd_train(args) -> int:
    extra: dict = {"optim": {}, "weights": {}}
    if args.epochs is not None:
        extra["optim"]["epochs"] = args.epochs
    if args.batch_size is not None:
        extra["optim"]["batch_size"] = args.batch_size
    if args.dice_mode is not None:
        extra["optim"]["dice_mode"] = args.dice_mode
    if args.lambda_dice is not None:
        extra["weights"]["lambda_dice"] = args.lambda_dice
    if args.lambda_fm is not None:
        extra["weights"]["lambda_fm"] = args.lambda_fm
    if args.gan_variant is not None:
        extra["weights"]["gan_variant"] = args.gan_variant
    cfg = _resolve(args, extra)
    manifest = load_manifest(args.manifest)
    write_resolved(cfg, args.out)
    result = train(manifest, cfg.train_config(), args.out,
                   resume_from=args.resume, backend=cfg.backend,
                   log=lambda m: print(m))
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"training log: {result.log_path}")
    if result.last_val_dice is not None:
        print(f"validation dice: {result.last_val_dice:.4f}")
    return 0


def cmd_translate(args) -> int:
    cfg = _resolve(args)
    generator, _, _ = load_models(args.checkpoint)
    inputs = _list_inputs(args.input)
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)
    failures = 0
    for path in inputs:
        stem = os.path.splitext(os.path.basename(path))[0]
        try:
            if args.depth:
                depth01 = normalize_depth(load_depth_png16(path))
            else:
                image = RgbImage(load_rgb_png(path))
                depth01 = estimate_depth(image, cfg.backend).values
            rgb = translate_depth(generator, depth01)
            save_rgb_png(rgb, os.path.join(args.out, f"{stem}.generated.png"))
        except AirwayGanError as e:
            _err(f"skip {stem}: {e}")
            failures += 1
    return 1 if failures else 0


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    generator, _, _ = load_models(args.checkpoint)
    manifest = load_manifest(args.manifest)
    write_resolved(cfg, args.out)
    report = evaluate(lambda record, depth01: translate_depth(generator, depth01),
                      manifest, args.split, cfg.seg, cfg.embedder,
                      backend=cfg.backend, out_dir=args.out)
    print(f"n={report.n_images} excluded={report.n_excluded}")
    print(f"FID={report.fid:.4f} SSIM={report.ssim_mean:.4f} "
          f"DICE={report.dice_mean:.4f}")
    return 1 if report.n_excluded else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airwaygan",
        description="Depth-mediated bronchoscopy image translation with "
                    "airway-orifice consistency")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out: bool = True):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    def backend_flags(p):
        p.add_argument("--backend", choices=["synthetic", "external"], default=None)
        p.add_argument("--backend-command", default=None,
                       help="external depth command: <cmd> <in.png> <out.png>")
        p.add_argument("--invert-depth", action="store_true",
                       help="flip the external backend's polarity")

    p = sub.add_parser("depth", help="infer depth images from RGB frames")
    p.add_argument("input", help="image file or directory")
    common(p)
    backend_flags(p)
    p.set_defaults(fn=cmd_depth)

    p = sub.add_parser("segment", help="segment orifices from depth images")
    p.add_argument("input", help="16-bit depth PNG file or directory")
    common(p)
    p.add_argument("--extrema-radius", type=int, default=None,
                   help="local-extrema neighborhood radius in pixels")
    p.add_argument("--min-distance", type=float, default=None,
                   help="minimum peak separation for suppression")
    p.add_argument("--prominence", type=float, default=None,
                   help="peak prominence floor as a fraction of depth range")
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("build-data", help="pair an RGB folder with inferred depth")
    p.add_argument("input", help="directory of RGB frames")
    common(p)
    backend_flags(p)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--crop-fraction", type=float, default=None)
    p.set_defaults(fn=cmd_build_data)

    p = sub.add_parser("synth-data", help="generate a synthetic paired dataset")
    common(p)
    p.add_argument("--n", type=int, default=None, help="number of scenes")
    p.add_argument("--resolution", type=int, default=None)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train the translator on a manifest")
    p.add_argument("manifest", help="dataset directory containing the manifest")
    common(p)
    backend_flags(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lambda-dice", type=float, default=None)
    p.add_argument("--lambda-fm", type=float, default=None)
    p.add_argument("--gan-variant", choices=["log", "least-squares"], default=None)
    p.add_argument("--dice-mode", choices=["differentiable", "score-only"],
                   default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("translate", help="translate images with a checkpoint")
    p.add_argument("input", help="image file or directory")
    common(p)
    backend_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--depth", action="store_true",
                   help="inputs are precomputed 16-bit depth PNGs")
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest split")
    p.add_argument("manifest", help="dataset directory containing the manifest")
    common(p)
    backend_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except AirwayGanError as e:
        _err(str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
