import numpy as np
import pytest
import torch

from errors import DomainMismatchError, ShapeMismatchError, VipastainError
from maskextract.calibrate import calibrate_per_patch, mask_rules_from_config, per_patch_records
from maskextract.masks import (
    Polarity,
    ThresholdSet,
    clean_mask,
    default_min_component_px,
    extract_cd20_masks,
    extract_he_masks,
    extract_masks,
    load_threshold_file,
    save_threshold_file,
    soft_mask,
    split_channels,
)
from patchio.patch import Patch, StainDomain


def iou(pred, truth):
    union = np.logical_or(pred, truth).sum()
    return 1.0 if union == 0 else np.logical_and(pred, truth).sum() / union


def test_he_nucleus_fidelity(he_scenes, he_thresholds):
    scores = [iou(extract_masks(patch, StainDomain.HE, he_thresholds).nucleus, truth.nucleus_mask)
              for patch, truth in he_scenes]
    assert np.mean(scores) >= 0.8


def test_cd20_positive_fidelity(cd20_scenes, cd20_thresholds):
    scores = [iou(extract_masks(patch, StainDomain.CD20, cd20_thresholds).positive, truth.positive_mask)
              for patch, truth in cd20_scenes]
    assert np.mean(scores) >= 0.8


def test_rbc_is_xor_of_he_masks(he_scenes, he_thresholds):
    for patch, _ in he_scenes:
        masks = extract_masks(patch, StainDomain.HE, he_thresholds)
        assert np.array_equal(masks.rbc, np.logical_xor(masks.nucleus_plus_rbc, masks.nucleus))


def test_thresholds_use_working_index(he_thresholds):
    nucleus = he_thresholds["nucleus"]
    assert nucleus.channel == "B"
    assert len(nucleus.thresholds) == 7
    assert nucleus.working_threshold == nucleus.thresholds[5]


def test_threshold_set_validation():
    with pytest.raises(ValueError):
        ThresholdSet(StainDomain.HE, "B", (10, 10))
    with pytest.raises(ValueError):
        ThresholdSet(StainDomain.HE, "X", (10,))
    with pytest.raises(ValueError):
        ThresholdSet(StainDomain.HE, "B", (10, 20), working_index=2)
    with pytest.raises(ValueError):
        ThresholdSet(StainDomain.HE, "B", tuple(range(8)))


def test_threshold_file_round_trip(tmp_path, he_thresholds):
    path = str(tmp_path / "thresholds.json")
    save_threshold_file(path, he_thresholds)
    assert load_threshold_file(path) == he_thresholds


def test_bad_threshold_file(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(VipastainError):
        load_threshold_file(str(path))


def test_polarity_flip_complements_region():
    channel = np.arange(256, dtype=np.uint8).reshape(16, 16)
    patch = np.stack([channel] * 3, axis=-1)
    below = ThresholdSet(StainDomain.CD20, "G", (100,), working_index=0)
    masks = extract_cd20_masks(patch, None, below, min_component_px=0, fill_holes=False)
    flipped = extract_cd20_masks(patch, None, below.flipped(), min_component_px=0, fill_holes=False)
    assert np.array_equal(masks.positive, ~flipped.positive)
    assert masks.positive.sum() == 101


def test_missing_threshold_gives_empty_mask():
    patch = np.zeros((16, 16, 3), dtype=np.uint8)
    masks = extract_he_masks(patch, None, None)
    assert not masks.nucleus.any()
    assert not masks.rbc.any()
    assert masks.sources == {}


def test_domain_mismatch(he_thresholds):
    patch = Patch(image=np.zeros((16, 16, 3), dtype=np.uint8), slide_id="s", stain=StainDomain.CD20)
    with pytest.raises(DomainMismatchError):
        extract_he_masks(patch, he_thresholds["nucleus"], None)
    with pytest.raises(DomainMismatchError):
        extract_cd20_masks(np.zeros((16, 16, 3), dtype=np.uint8), he_thresholds["nucleus"], None)


def test_split_channels_requires_rgb():
    with pytest.raises(ShapeMismatchError):
        split_channels(np.zeros((8, 8), dtype=np.uint8))
    r, g, b = split_channels(np.dstack([np.full((2, 2), v, dtype=np.uint8) for v in (1, 2, 3)]))
    assert (r == 1).all() and (g == 2).all() and (b == 3).all()


def test_clean_mask_removes_small_and_fills_holes():
    mask = np.zeros((12, 12), dtype=bool)
    mask[1:6, 1:6] = True
    mask[3, 3] = False
    mask[9, 9] = True
    cleaned = clean_mask(mask, min_component_px=2)
    assert cleaned[3, 3]
    assert not cleaned[9, 9]
    assert cleaned.sum() == 25


def test_clean_mask_keeps_diagonal_component():
    mask = np.zeros((6, 6), dtype=bool)
    mask[1, 1] = mask[2, 2] = True
    assert clean_mask(mask, min_component_px=2, fill_holes=False).sum() == 2


def test_hole_touching_border_is_not_filled():
    mask = np.ones((5, 5), dtype=bool)
    mask[0, 2] = mask[1, 2] = False
    assert not clean_mask(mask, 0)[1, 2]


def test_default_min_component_px():
    assert default_min_component_px(512) == 16
    assert default_min_component_px(64) == 2
    assert default_min_component_px(1024) == 64


def test_soft_mask_limits_and_backends():
    values = np.array([0.0, 100.0, 200.0])
    soft = soft_mask(values, 100.0, 5.0)
    assert soft[0] > 0.99 and soft[1] == pytest.approx(0.5) and soft[2] < 0.01
    above = soft_mask(values, 100.0, 5.0, Polarity.KEEP_ABOVE)
    assert np.allclose(soft + above, 1.0)
    tensor = soft_mask(torch.tensor(values), 100.0, 5.0)
    assert np.allclose(tensor.numpy(), soft)
    with pytest.raises(ValueError):
        soft_mask(values, 100.0, 0.0)


def test_per_patch_calibration_handles_degenerate(pipeline_config, he_scenes):
    rules = mask_rules_from_config(pipeline_config, StainDomain.HE)
    flat = np.full((16, 16, 3), 128, dtype=np.uint8)
    results = list(calibrate_per_patch([("flat_x0_y0", flat), ("real_x0_y0", he_scenes[0][0].image)],
                                       StainDomain.HE, rules))
    assert results[0][1] == {"nucleus": None, "nucleus_plus_rbc": None}
    assert results[1][1]["nucleus"] is not None
    records = per_patch_records(results)
    assert records[0]["thresholds"]["nucleus"] is None
    assert records[1]["thresholds"]["nucleus"]["channel"] == "B"
