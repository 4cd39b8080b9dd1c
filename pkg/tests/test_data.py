import os

import numpy as np
import pytest

from airwaygan.data import (DatasetManifest, ImagePair, assign_splits,
                            build_paired_dataset, build_synthetic_dataset,
                            circular_crop, load_depth_png16, load_manifest,
                            load_mask_png, load_pair_arrays, load_rgb_png,
                            save_depth_png16, save_manifest, save_rgb_png)
from airwaygan.depth import BackendConfig
from airwaygan.errors import BuildError, InputError, ParameterError
from airwaygan.scenes import SceneParams, generate_synthetic_scene, render_pseudo_target

from oracles import circle_pixel_count


def test_depth_png16_roundtrip_precision(tmp_path, rng):
    values = rng.random((32, 40))
    path = str(tmp_path / "d.png")
    save_depth_png16(values, path)
    back = load_depth_png16(path)
    assert back.shape == (32, 40)
    assert np.abs(back - values).max() <= 0.5 / 65535.0 + 1e-12


def test_rgb_roundtrip(tmp_path, rng):
    pixels = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    path = str(tmp_path / "x.png")
    save_rgb_png(pixels, path)
    assert np.array_equal(load_rgb_png(path), pixels)


# -- circular crop --------------------------------------------------------------

def test_circular_crop_white_count_matches_bruteforce():
    white = np.full((100, 100, 3), 255, dtype=np.uint8)
    cropped = circular_crop(white, 0.5)
    expected = circle_pixel_count(100, 100, 25.0)
    assert int((cropped[:, :, 0] == 255).sum()) == expected


def test_circular_crop_full_keeps_inscribed_circle():
    white = np.full((64, 64, 3), 255, dtype=np.uint8)
    cropped = circular_crop(white, 1.0)
    assert (cropped[0, 0] == 0).all()  # corner blacked out
    assert (cropped[32, 32] == 255).all()


def test_circular_crop_idempotent(rng):
    img = rng.integers(0, 256, (50, 60, 3), dtype=np.uint8)
    once = circular_crop(img, 0.7)
    twice = circular_crop(once, 0.7)
    assert np.array_equal(once, twice)


def test_circular_crop_rejects_bad_fraction():
    with pytest.raises(ParameterError):
        circular_crop(np.zeros((32, 32, 3), dtype=np.uint8), 0.0)


# -- split assignment ------------------------------------------------------------

def test_split_counts_exact():
    ids = [f"img_{i}" for i in range(10)]
    assignment = assign_splits(ids, (0.8, 0.1, 0.1), seed=3)
    counts = {s: sum(1 for v in assignment.values() if v == s)
              for s in ("train", "val", "test")}
    assert counts == {"train": 8, "val": 1, "test": 1}


def test_split_independent_of_order(rng):
    ids = [f"rec_{i}" for i in range(37)]
    shuffled = list(ids)
    rng.shuffle(shuffled)
    assert assign_splits(ids, (0.7, 0.2, 0.1), seed=9) == \
        assign_splits(shuffled, (0.7, 0.2, 0.1), seed=9)


def test_split_fractions_validated():
    with pytest.raises(ParameterError):
        assign_splits(["a"], (0.5, 0.2, 0.2), seed=0)


# -- manifest -------------------------------------------------------------------

def _write_source_images(src_dir, n=10, seed=0):
    os.makedirs(src_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        params = SceneParams(height=48, width=48,
                             centers=((int(rng.integers(16, 32)),
                                       int(rng.integers(16, 32))),),
                             radii=(float(rng.uniform(8, 12)),),
                             noise_amplitude=0.01)
        scene = generate_synthetic_scene(params, seed=int(rng.integers(1 << 30)))
        rendering = render_pseudo_target(scene, style_seed=i)
        save_rgb_png(rendering.pixels, os.path.join(src_dir, f"frame_{i:02d}.png"))


def test_build_paired_dataset_counts_and_splits(tmp_path):
    src = str(tmp_path / "src")
    _write_source_images(src, n=10)
    manifest = build_paired_dataset(src, BackendConfig(kind="synthetic"),
                                    str(tmp_path / "ds"), resolution=64, seed=3)
    assert len(manifest.records) == 10
    counts = {s: len(manifest.split_records(s)) for s in ("train", "val", "test")}
    assert counts == {"train": 8, "val": 1, "test": 1}
    for record in manifest.records:
        depth, target = load_pair_arrays(manifest, record)
        assert depth.shape == (64, 64)
        assert target.shape == (3, 64, 64)


def test_build_paired_dataset_deterministic(tmp_path):
    src = str(tmp_path / "src")
    _write_source_images(src, n=6)
    m1 = build_paired_dataset(src, BackendConfig(kind="synthetic"),
                              str(tmp_path / "d1"), resolution=64, seed=7)
    m2 = build_paired_dataset(src, BackendConfig(kind="synthetic"),
                              str(tmp_path / "d2"), resolution=64, seed=7)
    r1 = [r.to_dict() for r in m1.records]
    r2 = [r.to_dict() for r in m2.records]
    assert r1 == r2
    with open(os.path.join(str(tmp_path / "d1"), "records.jsonl")) as fh:
        lines1 = fh.read()
    with open(os.path.join(str(tmp_path / "d2"), "records.jsonl")) as fh:
        lines2 = fh.read()
    assert lines1 == lines2


def test_build_paired_dataset_skips_corrupt(tmp_path):
    src = str(tmp_path / "src")
    _write_source_images(src, n=9)
    with open(os.path.join(src, "broken.png"), "wb") as fh:
        fh.write(b"not a png at all")
    skipped = []
    manifest = build_paired_dataset(src, BackendConfig(kind="synthetic"),
                                    str(tmp_path / "ds"), resolution=64, seed=1,
                                    log=skipped.append)
    assert len(manifest.records) == 9
    assert len(skipped) == 1 and "broken" in skipped[0]


def test_build_paired_dataset_zero_pairs_errors(tmp_path):
    src = str(tmp_path / "src")
    os.makedirs(src)
    with open(os.path.join(src, "bad.png"), "wb") as fh:
        fh.write(b"junk")
    with pytest.raises(BuildError):
        build_paired_dataset(src, BackendConfig(kind="synthetic"),
                             str(tmp_path / "ds"), resolution=64)


def test_manifest_roundtrip_byte_stable(tmp_path):
    manifest = build_synthetic_dataset(5, str(tmp_path / "ds"), resolution=64,
                                       seed=2)
    records_path = os.path.join(str(tmp_path / "ds"), "records.jsonl")
    with open(records_path) as fh:
        original = fh.read()
    loaded = load_manifest(str(tmp_path / "ds"))
    save_manifest(loaded, str(tmp_path / "ds"))
    with open(records_path) as fh:
        rewritten = fh.read()
    assert rewritten == original


def test_manifest_rejects_duplicate_ids():
    pair = ImagePair(id="a", input_depth="d.png", target_rgb="r.png",
                     source_tag="synthetic", split="train")
    with pytest.raises(InputError):
        DatasetManifest(records=[pair, pair], preprocessing={},
                        backend_fingerprint="x", created_at="now")


# -- synthetic dataset -----------------------------------------------------------

def test_synthetic_dataset_structure(tmp_path):
    manifest = build_synthetic_dataset(12, str(tmp_path / "ds"), resolution=64,
                                       seed=11)
    assert len(manifest.records) == 12
    for record in manifest.records:
        assert record.truth_mask is not None
        mask = load_mask_png(manifest.resolve(record.truth_mask))
        assert mask.shape == (64, 64)
        assert mask.any()


def test_synthetic_dataset_census_covers_counts(tmp_path):
    from oracles import count_components
    manifest = build_synthetic_dataset(30, str(tmp_path / "ds"), resolution=64,
                                       seed=4)
    seen = set()
    for record in manifest.records:
        mask = load_mask_png(manifest.resolve(record.truth_mask))
        seen.add(count_components(mask))
    assert seen == {1, 2, 3}


def test_synthetic_dataset_regeneration_identical(tmp_path):
    m1 = build_synthetic_dataset(8, str(tmp_path / "a"), resolution=64, seed=9)
    m2 = build_synthetic_dataset(8, str(tmp_path / "b"), resolution=64, seed=9)
    for r1, r2 in zip(m1.records, m2.records):
        d1, t1 = load_pair_arrays(m1, r1)
        d2, t2 = load_pair_arrays(m2, r2)
        assert np.array_equal(d1, d2)
        assert np.array_equal(t1, t2)
