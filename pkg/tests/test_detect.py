import math
import os
from itertools import product

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from errors import ConfigError, PairingError, ShapeMismatchError
from detect.boxes import Detection, box_mask, iou, merge_detections, nms, read_detections, write_detections
from detect.inference import detect_manifest, detect_patch, detect_wsi, fuse_channels, split_fused
from detect.model import DetectorConfig, DetectorModel, decode_scale
from detect.trainer import build_targets, detection_loss, train_detector
from evalmetrics.report import evaluate_detections
from patchio.manifest import DatasetManifest, ManifestRow, load_manifest_annotations
from patchio.patch import StainDomain
from patchio.tiling import tile_image
from synthdata.corpus import generate_corpus
from synthdata.scene import Palette, SceneSpec

int_boxes = st.tuples(st.integers(0, 12), st.integers(0, 12), st.integers(1, 8), st.integers(1, 8))


def pixel_iou(a, b):
    """整数框按像素枚举的 IoU"""
    def pixels(box):
        x, y, w, h = box
        return {(i, j) for i in range(x, x + w) for j in range(y, y + h)}
    pa, pb = pixels(a), pixels(b)
    return len(pa & pb) / len(pa | pb)


def brute_force_nms(dets, threshold):
    """保留集的不动点刻画：一个框被保留当且仅当排在它前面的已保留框都不与它重叠超过阈值"""
    order = sorted(dets, key=Detection.order_key)
    for keep in product([False, True], repeat=len(order)):
        chosen = [d for d, k in zip(order, keep) if k]
        consistent = all(
            keep[i] == all(pixel_iou(order[i].box, order[j].box) <= threshold for j in range(i) if keep[j])
            for i in range(len(order))
        )
        if consistent:
            return chosen
    raise AssertionError("不存在一致的保留集")


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(int_boxes, st.sampled_from([0.3, 0.5, 0.7, 0.9])), max_size=6),
       st.sampled_from([0.3, 0.5, 0.7]))
def test_nms_matches_brute_force(items, threshold):
    dets = [Detection(box=box, score=score, patch_id="p_x0_y0") for box, score in items]
    assert nms(dets, threshold) == brute_force_nms(dets, threshold)


@given(int_boxes, int_boxes)
def test_iou_matches_pixel_count(a, b):
    assert iou(a, b) == pytest.approx(pixel_iou(a, b))


def test_nms_is_per_patch():
    a = Detection((0, 0, 10, 10), 0.9, patch_id="a_x0_y0")
    b = Detection((0, 0, 10, 10), 0.8, patch_id="b_x0_y0")
    c = Detection((1, 0, 10, 10), 0.7, patch_id="a_x0_y0")
    assert nms([a, b, c]) == [a, b]
    with pytest.raises(ValueError):
        nms([a], 1.0)


def test_detection_validation():
    with pytest.raises(ValueError):
        Detection((0, 0, 0, 5), 0.5)
    with pytest.raises(ValueError):
        Detection((0, 0, 5, 5), 1.5)
    with pytest.raises(ValueError):
        Detection((0, 0, 5, 5), 0.5, frame="wsi")


def test_translation_and_merge():
    patch_det = Detection((4, 4, 8, 8), 0.9, patch_id="s_x64_y0")
    wsi_det = patch_det.translated(64, 0, "s")
    assert wsi_det.box == (68, 4, 8, 8) and wsi_det.key == "s"
    with pytest.raises(ValueError):
        merge_detections([patch_det], [wsi_det])
    duplicate = Detection((4, 4, 8, 8), 0.6, source="cd20", patch_id="s_x64_y0")
    extra = Detection((30, 30, 8, 8), 0.6, source="cd20", patch_id="s_x64_y0")
    assert merge_detections([patch_det], [duplicate, extra]) == [patch_det, extra]


def test_box_mask_is_clipped():
    mask = box_mask((-2.5, 1.2, 5, 3), (6, 6))
    assert mask.sum() == 3 * 4
    assert mask[1:5, 0:3].all()


def test_detection_file_round_trip(tmp_path):
    dets = [Detection((1.5, 2, 3, 4), 0.75, "fused", patch_id="p_x0_y0"),
            Detection((10, 20, 3, 4), 0.5, slide_id="s", frame="wsi")]
    path = str(tmp_path / "dets.jsonl")
    write_detections(path, dets)
    assert read_detections(path) == dets


def test_fuse_channels_layout():
    he = np.zeros((4, 4, 3), dtype=np.uint8)
    cd20 = np.full((4, 4, 3), 9, dtype=np.uint8)
    fused = fuse_channels(he, cd20)
    assert fused.shape == (6, 4, 4)
    assert (fused[:3] == 0).all() and (fused[3:] == 9).all()
    back_he, back_cd20 = split_fused(fused)
    assert np.array_equal(back_he, he) and np.array_equal(back_cd20, cd20)
    with pytest.raises(ShapeMismatchError):
        fuse_channels(he, cd20[:2])


def test_decode_scale_zero_output():
    scores, boxes = decode_scale(torch.zeros(1, 5, 2, 2), 8, 16)
    assert torch.allclose(scores, torch.full((1, 2, 2), 0.5))
    assert boxes[0, 1, 1].tolist() == [4.0, 4.0, 16.0, 16.0]


def test_build_targets_picks_scale_and_cell():
    anchors = [(8, 16), (16, 32)]
    small, large = build_targets([[(10, 10, 16, 16), (20, 20, 30, 30)]], (64, 64), anchors)
    assert small.shape == (1, 5, 8, 8) and large.shape == (1, 5, 4, 4)
    assert small[0, 0].sum() == 1 and small[0, 0, 2, 2] == 1
    assert small[0, 1, 2, 2].item() == pytest.approx(18 / 8 - 2)
    assert small[0, 3, 2, 2].item() == pytest.approx(0.0)
    assert large[0, 0, 2, 2] == 1
    assert large[0, 3, 2, 2].item() == pytest.approx(math.log(30 / 32))


def test_detection_loss_without_positives():
    outputs = [torch.zeros(1, 5, 8, 8), torch.zeros(1, 5, 4, 4)]
    targets = [torch.zeros(1, 5, 8, 8), torch.zeros(1, 5, 4, 4)]
    losses = detection_loss(outputs, targets)
    assert losses["box_loss"].item() == 0
    assert losses["obj_loss"].item() == pytest.approx(80 * math.log(2), rel=1e-5)


def test_config_validation(pipeline_config):
    config = DetectorConfig.from_config(pipeline_config, "fused")
    assert config.input_channels == 6 and config.anchor_sizes == (16, 32)
    with pytest.raises(ConfigError):
        DetectorConfig(mode="late").validate()
    with pytest.raises(ConfigError):
        DetectorConfig(nms_iou=1.0).validate()


def test_detect_patch_respects_threshold_and_bounds():
    model = DetectorModel.build(DetectorConfig(base_channels=4, score_threshold=0.0))
    image = np.random.default_rng(0).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    dets = detect_patch(model, image, "p_x0_y0")
    assert dets
    for det in dets:
        x, y, w, h = det.box
        assert x >= 0 and y >= 0 and x + w <= 64 and y + h <= 64
        assert det.instance_mask.shape == (64, 64)
    model.config.score_threshold = 1.0
    assert detect_patch(model, image) == []
    with pytest.raises(ShapeMismatchError):
        detect_patch(model, np.zeros((6, 64, 64), dtype=np.uint8))


def test_detect_wsi_reports_slide_coordinates():
    model = DetectorModel.build(DetectorConfig(base_channels=4, score_threshold=0.0))
    image = np.random.default_rng(1).integers(0, 256, size=(128, 128, 3), dtype=np.uint8)
    tiles = tile_image(image, 64, 32, "wsi")
    dets = detect_wsi(model, [(ref, patch.image) for ref, patch in tiles])
    assert dets and all(det.frame == "wsi" and det.slide_id == "wsi" for det in dets)
    assert nms(dets, model.config.nms_iou) == dets


@pytest.fixture(scope="module")
def detection_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("det")
    he = generate_corpus(SceneSpec(seed=3), 4, str(root / "he"))
    virtual = DatasetManifest([
        ManifestRow(row.patch_id, StainDomain.VIRTUAL_CD20, row.split, row.image_path,
                    {"tls": row.mask_paths["tls"]}, row.annotation_path)
        for row in he
    ])
    return DatasetManifest(he.rows + virtual.rows)


@pytest.mark.parametrize("mode,mask_head", [("he", False), ("cd20", False), ("fused", True)])
def test_train_and_detect(tmp_path, detection_manifest, mode, mask_head):
    config = DetectorConfig(mode=mode, epochs=2, batch_size=2, base_channels=4, mask_head=mask_head,
                            score_threshold=0.0)
    model = train_detector(config, detection_manifest, str(tmp_path))
    assert os.path.exists(os.path.join(tmp_path, "detector.pt"))
    with open(os.path.join(tmp_path, "training_curve.csv"), encoding="utf-8") as f:
        assert len(f.read().strip().splitlines()) == 3
    loaded = DetectorModel.load(os.path.join(tmp_path, "detector.pt"))
    dets = detect_manifest(loaded, detection_manifest)
    assert {det.source for det in dets} == {mode}
    assert {det.patch_id for det in dets} <= {row.patch_id for row in detection_manifest}
    again = detect_manifest(model, detection_manifest)
    assert [d.box for d in again] == [d.box for d in dets]


def test_fused_training_requires_pairs(tmp_path, detection_manifest):
    he_only = detection_manifest.filter(stain=StainDomain.HE)
    with pytest.raises(PairingError):
        train_detector(DetectorConfig(mode="fused", epochs=1, base_channels=4), he_only, str(tmp_path))


@pytest.fixture(scope="module")
def desk_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    spec = SceneSpec(seed=7)
    train = generate_corpus(spec, 100, str(root / "train"))
    val = generate_corpus(spec, 30, str(root / "val"), start=100)
    return train, val


@pytest.mark.slow
def test_trained_detector_reaches_desk_target(tmp_path, desk_corpus):
    train, val = desk_corpus
    annotations = load_manifest_annotations(train)
    assert sum(len(boxes) for boxes in annotations.values()) >= 50

    model = train_detector(DetectorConfig(mode="he"), train, str(tmp_path))
    report = evaluate_detections(detect_manifest(model, val), load_manifest_annotations(val), 0.5)
    assert report["f1_box"] >= 0.5

    blank = np.full((64, 64, 3), Palette().he_background, dtype=np.uint8)
    assert detect_patch(model, blank, "blank_x0_y0") == []
