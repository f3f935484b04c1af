import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from errors import CoverageGapError, PairingError, ShapeMismatchError, VipastainError
from patchio.dataset import dataset_summary, split_dataset
from patchio.imageio import read_image_set, read_mask, read_rgb, write_mask, write_rgb
from patchio.manifest import DatasetManifest, ManifestRow
from patchio.patch import GridPatchRef, StainDomain, format_patch_id, parse_patch_id
from patchio.stain import STD_EPSILON, StainStats, compute_stain_stats, normalize_stain, rgb_to_opponent
from patchio.tiling import refs_from_patch_ids, rescale_image, stitch_patches, tile_image


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3), st.integers(1, 3))
def test_tile_stitch_round_trip(seed, rows, cols):
    image = np.random.default_rng(seed).integers(0, 256, size=(64 * rows, 64 * cols, 3), dtype=np.uint8)
    tiles = tile_image(image, 64, 0, "slide")
    assert len(tiles) == rows * cols
    restored = stitch_patches([(ref, patch.image) for ref, patch in tiles], image.shape[:2])
    assert np.array_equal(restored, image)


def test_overlapping_tiles_average_back(rng):
    image = rng.integers(0, 256, size=(100, 130, 3), dtype=np.uint8)
    tiles = tile_image(image, 64, 16, "s")
    assert tiles[1][0].origin_x == 48
    restored = stitch_patches([(ref, patch.image) for ref, patch in tiles], image.shape[:2])
    assert np.array_equal(restored, image)


def test_tiles_are_row_major_with_patch_ids(rng):
    image = rng.integers(0, 256, size=(128, 192, 3), dtype=np.uint8)
    tiles = tile_image(image, 64, 0, "wsi1", StainDomain.CD20)
    assert [(ref.grid_x, ref.grid_y) for ref, _ in tiles] == [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    ref, patch = tiles[4]
    assert ref.patch_id == "wsi1_x64_y64" == patch.patch_id
    assert patch.stain == StainDomain.CD20


def test_tiling_argument_errors(rng):
    image = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        tile_image(image, 32)
    with pytest.raises(ValueError):
        tile_image(image, 64, 64)
    with pytest.raises(ShapeMismatchError):
        tile_image(image[:50], 64)


def test_missing_tile_raises_coverage_gap(rng):
    image = rng.integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    tiles = tile_image(image, 64)
    with pytest.raises(CoverageGapError) as info:
        stitch_patches([(ref, patch.image) for ref, patch in tiles if ref.patch_id != "slide_x64_y0"], (128, 128))
    assert info.value.missing == [(1, 0)]


def test_rescale_from_halves_grid(rng):
    image = rng.integers(0, 256, size=(256, 256, 3), dtype=np.uint8)
    tiles = tile_image(image, 64, rescale_from=128)
    assert len(tiles) == 4
    assert rescale_image(image, 0.5).shape == (128, 128, 3)


def test_patch_id_round_trip():
    assert parse_patch_id(format_patch_id("he_00012", 512, 1024)) == ("he_00012", 512, 1024)
    with pytest.raises(ValueError):
        parse_patch_id("nonsense")


def test_refs_from_patch_ids_recovers_grid():
    refs = refs_from_patch_ids(["s_x0_y0", "s_x48_y0", "s_x0_y48", "s_x48_y48"], 64)
    assert [(r.grid_x, r.grid_y) for r in refs] == [(0, 0), (1, 0), (0, 1), (1, 1)]
    with pytest.raises(ValueError):
        GridPatchRef("s", 0, 0, 0, 0, 0)


def test_image_and_mask_io(tmp_path, rng):
    image = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    mask = rng.random((8, 8)) > 0.5
    write_rgb(str(tmp_path / "a" / "img.png"), image)
    write_mask(str(tmp_path / "a" / "mask.png"), mask)
    assert np.array_equal(read_rgb(str(tmp_path / "a" / "img.png")), image)
    assert np.array_equal(read_mask(str(tmp_path / "a" / "mask.png")), mask)
    with pytest.raises(VipastainError):
        read_rgb(str(tmp_path / "missing.png"))
    assert [name for name, _ in read_image_set(str(tmp_path / "a"))] == ["img", "mask"]


def _rows(stain, slides, split="all"):
    return [ManifestRow(patch_id=f"{slide}_x0_y0", stain=stain, split=split) for slide in slides]


def test_manifest_csv_round_trip(tmp_path):
    image = tmp_path / "data" / "images" / "s1_x0_y0.png"
    row = ManifestRow("s1_x0_y0", StainDomain.HE, "train", str(image), {"tls": str(tmp_path / "data" / "m.png")})
    path = str(tmp_path / "data" / "manifest.csv")
    DatasetManifest([row]).write_csv(path)
    with open(path, encoding="utf-8") as f:
        assert "images/s1_x0_y0.png" in f.read()
    assert DatasetManifest.read_csv(path).rows == [row]


def test_manifest_bad_header(tmp_path):
    path = tmp_path / "manifest.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(VipastainError):
        DatasetManifest.read_csv(str(path))


def test_pairs_requires_virtual_counterpart():
    manifest = DatasetManifest(_rows(StainDomain.HE, ["a", "b"]) + _rows(StainDomain.VIRTUAL_CD20, ["a"]))
    with pytest.raises(PairingError) as info:
        manifest.pairs()
    assert info.value.unpaired == ["b_x0_y0"]
    paired = DatasetManifest(manifest.rows + _rows(StainDomain.VIRTUAL_CD20, ["b"])).pairs()
    assert [(he.patch_id, cd20.stain) for he, cd20 in paired] == [("a_x0_y0", StainDomain.VIRTUAL_CD20),
                                                                  ("b_x0_y0", StainDomain.VIRTUAL_CD20)]


def test_split_is_by_slide_and_deterministic():
    manifest = DatasetManifest(_rows(StainDomain.HE, [f"s{i}" for i in range(10)]))
    train, val = split_dataset(manifest, 0.8, seed=3)
    again, _ = split_dataset(manifest, 0.8, seed=3)
    assert len(train) == 8 and len(val) == 2
    assert not set(train.slide_ids) & set(val.slide_ids)
    assert train.rows == again.rows
    assert {row.split for row in train} == {"train"}
    with pytest.raises(ValueError):
        split_dataset(DatasetManifest(_rows(StainDomain.HE, ["only"])), 0.8)


def test_dataset_summary_counts():
    manifest = DatasetManifest(_rows(StainDomain.HE, ["a", "b"], "train") + _rows(StainDomain.CD20, ["c"], "train")
                               + _rows(StainDomain.HE, ["d"], "val"))
    assert dataset_summary(manifest) == {
        "train": {"cd20_slides": 1, "cd20_patches": 1, "he_slides": 2, "he_patches": 2},
        "val": {"he_slides": 1, "he_patches": 1},
    }


def test_normalization_removes_constant_shift(rng):
    image = rng.integers(40, 200, size=(32, 32, 3)).astype(np.uint8)
    shifted = (image.astype(np.int64) + np.array([20, -15, 10])).astype(np.uint8)
    reference = compute_stain_stats([image])
    normalized = normalize_stain(shifted, reference)
    assert np.abs(normalized.astype(np.int64) - image.astype(np.int64)).max() <= 1


def test_stain_stats_file(tmp_path, rng):
    stats = compute_stain_stats([rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)])
    path = str(tmp_path / "stats.json")
    stats.save(path)
    loaded = StainStats.load(path)
    assert np.allclose(loaded.means, stats.means) and np.allclose(loaded.stds, stats.stds)
    with pytest.raises(ValueError):
        compute_stain_stats([])


def _slide_like(rng, background, tissue):
    image = rng.integers(*background, size=(48, 48, 3)).astype(np.uint8)
    image[8:40, 8:40] = rng.integers(*tissue, size=(32, 32, 3))
    return image


def test_stain_stats_ignore_background(rng):
    image = _slide_like(rng, (200, 230), (60, 140))
    values = rgb_to_opponent(image[8:40, 8:40].reshape(-1, 3))
    stats = compute_stain_stats([image])
    assert np.allclose(stats.means, values.mean(axis=0))
    assert np.allclose(stats.stds, values.std(axis=0))


def test_constant_image_uses_all_pixels():
    stats = compute_stain_stats([np.full((8, 8, 3), 128, dtype=np.uint8)])
    assert stats.stds == (STD_EPSILON, STD_EPSILON, STD_EPSILON)


def test_normalization_is_idempotent(rng):
    image = _slide_like(rng, (200, 230), (60, 140))
    reference = compute_stain_stats([_slide_like(rng, (205, 235), (70, 150))])
    once = normalize_stain(image, reference)
    twice = normalize_stain(once, reference)
    assert np.abs(twice.astype(np.int64) - once.astype(np.int64)).max() <= 1
