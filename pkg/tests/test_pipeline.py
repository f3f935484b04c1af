import json
import os

import pytest

import numpy as np

from detect.boxes import Detection, write_detections
from patchio.imageio import read_rgb, write_rgb
from patchio.manifest import DatasetManifest, read_annotations
from pipeline import PipelineRunner, run_subcommand

SMALL = [
    "--set", "corpus.count=6", "--set", "corpus.val_count=4",
    "--set", "transfer.epochs=1", "--set", "transfer.batch_size=4", "--set", "transfer.base_channels=4",
    "--set", "transfer.residual_blocks=1", "--set", "transfer.disc_channels=4",
    "--set", "detect.epochs=2", "--set", "detect.batch_size=4", "--set", "detect.base_channels=4",
    "--set", "evaluate.feature_dim=8", "--no-progress",
]


@pytest.fixture(scope="module")
def runner():
    return PipelineRunner()


def test_all_stages_registered(runner):
    assert set(runner.stages) == {
        "gen-corpus", "tile", "calibrate", "train-transfer", "synthesize", "train-detector",
        "detect", "stitch", "evaluate", "fid", "repro-desk",
    }


def test_stage_flags_follow_signature(runner):
    parser = runner.build_parser()
    args = parser.parse_args(["synthesize", "--checkpoint", "c.pt", "--in", "src", "--seed", "3"])
    assert args.source == "src" and args.direction == "a2b" and args.seed == 3
    args = parser.parse_args(["calibrate", "--stain", "he", "--manifest", "m.csv", "--per-patch"])
    assert args.per_patch is True and args.split == "train"
    assert runner.stages["calibrate"].parameters["manifest"]["required"]


def test_missing_required_flag_is_usage_error(tmp_path):
    assert run_subcommand(["calibrate", "--stain", "he", "--run-dir", str(tmp_path)]) == 2


def test_unknown_override_is_config_error(tmp_path, capsys):
    code = run_subcommand(["gen-corpus", "--run-dir", str(tmp_path), "--set", "corpus.nonexistent=1"])
    assert code == 2
    assert "nonexistent" in capsys.readouterr().err


def test_malformed_override_is_config_error(tmp_path):
    assert run_subcommand(["gen-corpus", "--run-dir", str(tmp_path), "--set", "corpus.count"]) == 2


def test_missing_manifest_is_runtime_error(tmp_path):
    code = run_subcommand(["calibrate", "--stain", "he", "--manifest", str(tmp_path / "none.csv"),
                           "--run-dir", str(tmp_path)])
    assert code == 1


def test_corpus_calibrate_evaluate(tmp_path):
    run_dir = str(tmp_path / "run")
    assert run_subcommand(["gen-corpus", "--stain", "he", "--run-dir", run_dir] + SMALL) == 0
    manifest_path = os.path.join(run_dir, "patches", "he", "manifest.csv")
    manifest = DatasetManifest.read_csv(manifest_path)
    assert len(manifest) == 10
    assert os.path.exists(os.path.join(run_dir, "config.resolved"))
    for kind in ("patches", "checkpoints", "dets", "reports"):
        assert os.path.isdir(os.path.join(run_dir, kind))

    assert run_subcommand(["calibrate", "--stain", "he", "--manifest", manifest_path, "--run-dir", run_dir]) == 0
    assert os.path.exists(os.path.join(run_dir, "checkpoints", "thresholds_he.json"))

    gt_path = os.path.join(run_dir, "patches", "he", "annotations.jsonl")
    annotations = read_annotations(gt_path)
    perfect = [Detection(tuple(box), 0.9, patch_id=pid) for pid, boxes in annotations.items() for box in boxes]
    dets_path = os.path.join(run_dir, "dets", "perfect.jsonl")
    write_detections(dets_path, perfect)
    assert run_subcommand(["evaluate", "--dets", dets_path, "--gt", gt_path, "--run-dir", run_dir]) == 0
    with open(os.path.join(run_dir, "reports", "evaluate.json"), encoding="utf-8") as f:
        report = json.load(f)
    assert report["fp"] == 0 and report["fn"] == 0
    if perfect:
        assert report["p_box"] == 1.0 and report["r_box"] == 1.0


@pytest.mark.parametrize("overlap", ["0", "32"])
def test_tile_then_stitch_restores_original_size(tmp_path, overlap):
    image = np.random.default_rng(0).integers(0, 256, size=(100, 130, 3), dtype=np.uint8)
    source = str(tmp_path / "s.png")
    write_rgb(source, image)
    run_dir = str(tmp_path / "run")
    assert run_subcommand(["tile", "--image", source, "--overlap", overlap, "--run-dir", run_dir]) == 0
    manifest = os.path.join(run_dir, "patches", "s", "manifest.csv")
    assert len(DatasetManifest.read_csv(manifest)) == {"0": 6, "32": 12}[overlap]

    assert run_subcommand(["stitch", "--manifest", manifest, "--run-dir", run_dir]) == 0
    stitched = read_rgb(os.path.join(run_dir, "patches", "mosaic", "s_mosaic.png"))
    assert stitched.shape == image.shape
    assert np.array_equal(stitched, image)


def test_stitch_explicit_size(tmp_path):
    image = np.random.default_rng(1).integers(0, 256, size=(100, 130, 3), dtype=np.uint8)
    source = str(tmp_path / "s.png")
    write_rgb(source, image)
    run_dir = str(tmp_path / "run")
    assert run_subcommand(["tile", "--image", source, "--run-dir", run_dir]) == 0
    manifest = os.path.join(run_dir, "patches", "s", "manifest.csv")
    assert run_subcommand(["stitch", "--manifest", manifest, "--height", "90", "--run-dir", run_dir]) == 2
    assert run_subcommand(["stitch", "--manifest", manifest, "--height", "90", "--width", "120",
                           "--run-dir", run_dir]) == 0
    stitched = read_rgb(os.path.join(run_dir, "patches", "mosaic", "s_mosaic.png"))
    assert np.array_equal(stitched, image[:90, :120])

@pytest.mark.slow
def test_repro_desk_is_deterministic(tmp_path):
    reports = []
    for name in ("a", "b"):
        run_dir = str(tmp_path / name)
        assert run_subcommand(["repro-desk", "--run-dir", run_dir, "--seed", "11"] + SMALL) == 0
        with open(os.path.join(run_dir, "reports", "repro-desk.json"), "rb") as f:
            reports.append(f.read())
    assert reports[0] == reports[1]

    report = json.loads(reports[0])
    assert [row["mode"] for row in report["detection"]] == ["he", "cd20", "combine", "combine-nms"]
    assert set(report["fid"]) >= {"mask_guided", "no_mask", "extractor"}
    assert set(report["wsi"]) == {"non_overlapping", "overlapping"}
    with open(os.path.join(tmp_path, "a", "reports", "comparison.txt"), encoding="utf-8") as f:
        table = f.read()
    assert "Only training by H&E" in table and "Combine" in table


@pytest.mark.slow
def test_repro_desk_orderings_across_seeds(tmp_path):
    combined_margins = []
    for seed in (7, 8, 9):
        run_dir = str(tmp_path / f"seed{seed}")
        assert run_subcommand(["repro-desk", "--skip-wsi", "--no-progress", "--seed", str(seed),
                               "--run-dir", run_dir]) == 0
        with open(os.path.join(run_dir, "reports", "repro-desk.json"), encoding="utf-8") as f:
            report = json.load(f)
        if seed == 7:
            assert report["fid"]["mask_guided"] <= report["fid"]["no_mask"]
        f1 = {row["mode"]: row["f1_box"] for row in report["detection"]}
        combined_margins.append(f1["combine"] - max(f1["he"], f1["cd20"]))

    assert all(margin >= -0.02 for margin in combined_margins)
    assert sum(margin > 0 for margin in combined_margins) >= 2
