import os

import numpy as np
import pytest

from errors import PlacementError
from patchio.manifest import DatasetManifest, read_annotations
from patchio.patch import StainDomain
from synthdata.corpus import derive_seed, generate_corpus, generate_scenes
from synthdata.render import generate_pseudo_cd20, generate_pseudo_he
from synthdata.scene import Palette, SceneSpec, tight_box


def test_same_seed_is_bit_identical():
    spec = SceneSpec(seed=11)
    first, truth_a = generate_pseudo_he(spec)
    second, truth_b = generate_pseudo_he(spec)
    assert np.array_equal(first.image, second.image)
    assert np.array_equal(truth_a.nucleus_mask, truth_b.nucleus_mask)
    assert truth_a.tls_boxes == truth_b.tls_boxes


def test_different_seeds_differ():
    a, _ = generate_pseudo_he(SceneSpec(seed=1))
    b, _ = generate_pseudo_he(SceneSpec(seed=2))
    assert not np.array_equal(a.image, b.image)


def test_he_truth_masks_are_consistent():
    patch, truth = generate_pseudo_he(SceneSpec(seed=3))
    assert patch.image.shape == (64, 64, 3)
    assert patch.image.dtype == np.uint8
    assert truth.nucleus_mask.any()
    assert not (truth.rbc_mask & truth.nucleus_mask).any()
    assert not truth.positive_mask.any()
    assert len(truth.tls_boxes) == 1
    assert truth.tls_boxes[0] == tight_box(truth.tls_masks[0])


def test_cd20_positive_iff_tls():
    _, with_tls = generate_pseudo_cd20(SceneSpec(seed=5))
    _, without_tls = generate_pseudo_cd20(SceneSpec(seed=5, tls_cluster_count=0))
    assert with_tls.positive_mask.any()
    assert not without_tls.positive_mask.any()
    assert without_tls.tls_boxes == []


def test_tls_disc_contains_cluster_nuclei():
    _, truth = generate_pseudo_he(SceneSpec(seed=9))
    x, y, w, h = truth.tls_boxes[0]
    inside = sum(1 for cx, cy in truth.nucleus_centers if x <= cx < x + w and y <= cy < y + h)
    assert inside >= SceneSpec().tls_cluster_density


@pytest.mark.parametrize("kwargs", [
    {"canvas_size": 32},
    {"nucleus_radius_range": (3, 2)},
    {"tls_cluster_density": 5},
    {"palette": Palette(he_background=(30, 10, 20))},
])
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        generate_pseudo_he(SceneSpec(**kwargs))


def test_overcrowded_canvas_raises_placement_error():
    with pytest.raises(PlacementError) as info:
        generate_pseudo_he(SceneSpec(tls_cluster_count=6))
    assert info.value.kind == "tls_cluster"


def test_derived_seeds_depend_on_stain_and_index():
    seeds = {derive_seed(7, i, stain) for i in range(20) for stain in (StainDomain.HE, StainDomain.CD20)}
    assert len(seeds) == 40


def test_generate_scenes_names_slides():
    scenes = list(generate_scenes(SceneSpec(seed=7), 3, StainDomain.CD20, start=4))
    assert [patch.slide_id for patch, _ in scenes] == ["cd2000004", "cd2000005", "cd2000006"]
    assert all(patch.stain == StainDomain.CD20 for patch, _ in scenes)


def test_generate_corpus_writes_manifest(tmp_path):
    out = str(tmp_path / "he")
    manifest = generate_corpus(SceneSpec(seed=7), 3, out)
    assert len(manifest) == 3
    reloaded = DatasetManifest.read_csv(os.path.join(out, "manifest.csv"))
    assert [row.patch_id for row in reloaded] == [row.patch_id for row in manifest]
    row = reloaded.rows[0]
    assert set(row.mask_paths) == {"nucleus", "rbc", "positive", "tls"}
    assert os.path.exists(row.image_path)
    annotations = read_annotations(row.annotation_path)
    assert len(annotations[row.patch_id]) == 1


def test_generate_corpus_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(SceneSpec(), 0, str(tmp_path))
