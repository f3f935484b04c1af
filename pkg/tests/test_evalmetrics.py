import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detect.boxes import Detection
from errors import ConfigError, ShapeMismatchError
from evalmetrics.extractors import extractor_from_config, get_extractor
from evalmetrics.fid import FeatureSet, extract_features, frechet_distance
from evalmetrics.matching import (
    MatchResult,
    detection_report,
    f1_score,
    mask_precision_recall,
    match_by_patch,
    match_detections,
    precision_recall,
)

int_boxes = st.tuples(st.integers(0, 12), st.integers(0, 12), st.integers(1, 8), st.integers(1, 8))


def pixel_iou(a, b):
    def pixels(box):
        x, y, w, h = box
        return {(i, j) for i in range(x, x + w) for j in range(y, y + h)}
    pa, pb = pixels(a), pixels(b)
    return len(pa & pb) / len(pa | pb)


def brute_force_match(preds, gts, threshold):
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1],) + tuple(preds[i][0]))
    taken, pairs = set(), []
    for i in order:
        overlaps = [(pixel_iou(preds[i][0], gt), -g) for g, gt in enumerate(gts) if g not in taken]
        if not overlaps:
            continue
        best, neg_g = max(overlaps)
        if best >= threshold:
            taken.add(-neg_g)
            pairs.append((i, -neg_g, best))
    return pairs


@pytest.mark.parametrize("p,r,f1", [(86.4, 80.4, 83.29), (86.0, 78.1, 81.86), (89.5, 81.9, 85.53)])
def test_f1_reproduces_published_rows(p, r, f1):
    assert abs(f1_score(p, r) - f1) <= 0.005


def test_f1_zero():
    assert f1_score(0.0, 0.0) == 0.0


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.tuples(int_boxes, st.sampled_from([0.2, 0.5, 0.8])), max_size=6),
       st.lists(int_boxes, max_size=6), st.sampled_from([0.3, 0.5]))
def test_matching_matches_brute_force(preds, gts, threshold):
    result = match_detections(preds, gts, threshold)
    expected = brute_force_match(preds, gts, threshold)
    assert [(i, g) for i, g, _ in result.pairs] == [(i, g) for i, g, _ in expected]
    assert result.true_positives + result.false_positives == len(preds)
    assert result.true_positives + result.false_negatives == len(gts)


def test_lower_score_cannot_steal_match():
    gts = [(0, 0, 10, 10)]
    preds = [((0, 0, 10, 10), 0.4), ((1, 0, 10, 10), 0.9)]
    result = match_detections(preds, gts)
    assert result.pairs[0][0] == 1
    assert (result.true_positives, result.false_positives, result.false_negatives) == (1, 1, 0)


def test_match_by_patch_counts_unannotated_as_false_positive():
    dets = [Detection((0, 0, 10, 10), 0.9, patch_id="a_x0_y0"), Detection((0, 0, 10, 10), 0.9, patch_id="b_x0_y0")]
    result = match_by_patch(dets, {"a_x0_y0": [(0, 0, 10, 10)], "c_x0_y0": [(5, 5, 5, 5)]})
    assert (result.true_positives, result.false_positives, result.false_negatives) == (1, 1, 1)


def test_precision_recall_degenerate_flags():
    empty = precision_recall(MatchResult())
    assert empty == (0.0, 0.0, True, True)
    partial = precision_recall(MatchResult(true_positives=3, false_positives=1, false_negatives=2))
    assert partial.precision == pytest.approx(0.75) and partial.recall == pytest.approx(0.6)
    assert not partial.precision_degenerate


def test_mask_precision_recall_uses_union():
    a = np.zeros((4, 4), dtype=bool)
    a[:2, :2] = True
    b = np.zeros((4, 4), dtype=bool)
    b[1:3, 1:3] = True
    gt = np.zeros((4, 4), dtype=bool)
    gt[:2, :] = True
    result = mask_precision_recall([a, b], gt)
    assert result.precision == pytest.approx(5 / 7)
    assert result.recall == pytest.approx(5 / 8)
    assert mask_precision_recall([], gt) == (0.0, 0.0, True, False)
    with pytest.raises(ShapeMismatchError):
        mask_precision_recall([a], np.zeros((3, 3), dtype=bool))


def test_detection_report_fields():
    report = detection_report(MatchResult(2, 0, 2), fid=1.5)
    assert report["p_box"] == 1.0 and report["r_box"] == 0.5
    assert report["f1_box"] == pytest.approx(2 / 3)
    assert report["p_mask"] is None and report["fid"] == 1.5
    assert report["flags"]["p_box_degenerate"] is False


def _exact_standard(n, seed):
    z = np.random.default_rng(seed).standard_normal(n)
    return (z - z.mean()) / z.std(ddof=1)


def test_frechet_identical_sets_is_zero():
    features = FeatureSet(np.random.default_rng(0).normal(size=(50, 4)))
    assert frechet_distance(features, features) == pytest.approx(0.0, abs=1e-6)


def test_frechet_one_dimensional_closed_forms():
    z = _exact_standard(10000, 1)
    assert frechet_distance(FeatureSet(z), FeatureSet(z + 1.0)) == pytest.approx(1.0, abs=1e-3)
    assert frechet_distance(FeatureSet(z), FeatureSet(2.0 * _exact_standard(10000, 2))) == pytest.approx(1.0, abs=1e-3)


def test_frechet_is_symmetric_and_nonnegative():
    rng = np.random.default_rng(4)
    a = FeatureSet(rng.normal(size=(30, 3)))
    b = FeatureSet(rng.normal(loc=0.5, size=(40, 3)))
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-6)
    assert frechet_distance(a, b) >= 0


def test_feature_set_validation():
    with pytest.raises(ValueError):
        FeatureSet(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        FeatureSet(np.array([[0.0, np.nan], [1.0, 1.0]]))
    with pytest.raises(ShapeMismatchError):
        frechet_distance(FeatureSet(np.zeros((3, 2))), FeatureSet(np.zeros((3, 3))))


def test_random_conv_extractor_is_deterministic():
    images = np.random.default_rng(0).integers(0, 256, size=(3, 32, 32, 3), dtype=np.uint8)
    first = get_extractor("random-conv", {"feature_dim": 8, "seed": 5})
    second = get_extractor("random-conv", {"feature_dim": 8, "seed": 5})
    other = get_extractor("random-conv", {"feature_dim": 8, "seed": 6})
    features = extract_features(list(images), first)
    assert features.features.shape == (3, 8)
    assert np.array_equal(features.features, extract_features(list(images), second).features)
    assert not np.array_equal(features.features, extract_features(list(images), other).features)
    with pytest.raises(ValueError):
        extract_features(list(images[:1]), first)


def test_extractor_registry(pipeline_config):
    assert extractor_from_config(pipeline_config).feature_dim == 64
    with pytest.raises(ConfigError):
        get_extractor("inception")
    with pytest.raises(ConfigError):
        get_extractor("external")
    external = get_extractor("external", {"target": "numpy:atleast_2d"})
    with pytest.raises(ShapeMismatchError):
        external.embed(np.zeros((2, 4, 4, 3), dtype=np.uint8))


def test_evaluate_detections_with_tls_masks(tmp_path):
    from evalmetrics.report import evaluate_detections
    from patchio.imageio import write_mask
    from patchio.manifest import DatasetManifest, ManifestRow
    from patchio.patch import StainDomain

    gt = np.zeros((16, 16), dtype=bool)
    gt[2:10, 2:10] = True
    mask_path = str(tmp_path / "s_x0_y0_tls.png")
    write_mask(mask_path, gt)
    manifest = DatasetManifest([ManifestRow("s_x0_y0", StainDomain.HE, "val", "", {"tls": mask_path})])
    annotations = {"s_x0_y0": [(2, 2, 8, 8)]}
    dets = [
        Detection((2, 2, 8, 8), 0.9, patch_id="s_x0_y0"),
        Detection((0, 0, 4, 4), 0.3, patch_id="s_x0_y0"),
        Detection((0, 0, 4, 4), 0.9, patch_id="other_x0_y0"),
    ]
    report = evaluate_detections(dets, annotations, 0.5, manifest)
    assert (report["tp"], report["fp"], report["fn"]) == (1, 1, 0)
    assert report["r_box"] == 1.0 and report["p_box"] == 0.5
    assert report["r_mask"] == 1.0
    assert report["p_mask"] == pytest.approx(64 / 76)
