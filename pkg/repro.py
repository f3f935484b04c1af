"""
桌面规模复现：生成语料 → 标定阈值 → 训练转换模型（含 λ_mask=0 消融）→ 虚拟染色 →
三种检测器（he / cd20 / fused）→ 评估，外加两种融合方式与整图（重叠/不重叠网格）检测。

报告只包含数值与相对信息，不含时间戳与绝对路径，同一配置与种子两次运行逐字节一致。
"""
import logging
import math
import os
from contextlib import contextmanager
from dataclasses import replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from detect.boxes import merge_detections, write_detections
from detect.inference import detect_manifest, detect_wsi
from detect.model import DetectorConfig
from detect.trainer import train_detector
from errors import StageError, VipastainError
from evalmetrics.extractors import extractor_from_config
from evalmetrics.fid import extract_features, frechet_distance
from evalmetrics.report import evaluate_detections
from maskextract.calibrate import calibrate_thresholds, mask_rules_from_config
from maskextract.masks import extract_masks, save_threshold_file
from patchio.dataset import dataset_summary, split_dataset
from patchio.imageio import read_mask, read_rgb, write_rgb
from patchio.manifest import DatasetManifest, load_manifest_annotations
from patchio.patch import GridPatchRef, StainDomain
from patchio.tiling import stitch_patches, tile_image
from settings import PipelineConfig
from stages.stage import RunContext
from synthdata.corpus import generate_corpus
from synthdata.scene import SceneSpec
from transfer.bundle import TransferConfig
from transfer.trainer import synthesize_manifest, train

logger = logging.getLogger(__name__)

DETECTION_MODES = ("he", "cd20", "fused")
ROW_LABELS = {
    "he": "Only training by H&E",
    "cd20": "Only training by CD20",
    "combine": "Combine",
    "combine-nms": "Combine (NMS merge)",
}
# 每个染色域用于评估掩膜保真度的掩膜种类
FIDELITY_KINDS = {StainDomain.HE: "nucleus", StainDomain.CD20: "positive"}
WSI_SLIDE = "valmosaic"


@contextmanager
def labelled(stage: str):
    """把模块异常包装为带阶段标签的 StageError"""
    try:
        yield
    except StageError:
        raise
    except (VipastainError, ValueError, OSError, RuntimeError) as e:
        raise StageError(stage, e) from e


def mask_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    union = np.logical_or(pred, truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, truth).sum() / union)


def _generate(context: RunContext, domain: StainDomain) -> Tuple[DatasetManifest, DatasetManifest]:
    corpus = context.config.section("corpus")
    count, val_count = corpus["count"], corpus["val_count"]
    spec = SceneSpec.from_config(corpus, seed=context.seed)
    out = os.path.join(context.path("patches"), domain.value)
    manifest = generate_corpus(spec, count + val_count, out, domain, progress=context.progress)
    train_rows, val_rows = split_dataset(manifest, count / float(count + val_count), context.seed)
    DatasetManifest(train_rows.rows + val_rows.rows).write_csv(os.path.join(out, "manifest.csv"))
    return train_rows, val_rows


def _calibrate(context: RunContext, domain: StainDomain, rows: DatasetManifest):
    section = context.config.section("maskextract")
    thresholds = calibrate_thresholds((read_rgb(row.image_path) for row in rows), domain,
                                      mask_rules_from_config(context.config, domain),
                                      section["otsu_thresholds"], section["working_index"])
    save_threshold_file(context.path("checkpoints", f"thresholds_{domain.value}.json"), thresholds)
    return thresholds


def _mask_fidelity(context: RunContext, domain: StainDomain, rows: DatasetManifest, thresholds) -> float:
    """验证集上目标掩膜与真值的平均 IoU"""
    section = context.config.section("maskextract")
    kind = FIDELITY_KINDS[domain]
    scores = []
    for row in rows:
        masks = extract_masks(read_rgb(row.image_path), domain, thresholds,
                              section["min_component_px"] or None, section["fill_holes"])
        scores.append(mask_iou(getattr(masks, kind), read_mask(row.mask_paths[kind])))
    return float(np.mean(scores))


def _features(rows: DatasetManifest, extractor):
    return extract_features([read_rgb(row.image_path) for row in rows], extractor)


def _val_mosaic(rows: DatasetManifest, patch_size: int):
    """把验证集 H&E 图块排成网格拼成一张整图，标注平移到整图坐标"""
    cols = max(1, math.isqrt(len(rows)))
    used = rows.rows[:cols * (len(rows) // cols)]
    annotations = load_manifest_annotations(DatasetManifest(used))
    refs_and_images, boxes = [], []
    for index, row in enumerate(used):
        gx, gy = index % cols, index // cols
        ox, oy = gx * patch_size, gy * patch_size
        refs_and_images.append((GridPatchRef(WSI_SLIDE, gx, gy, ox, oy, patch_size), read_rgb(row.image_path)))
        boxes.extend((x + ox, y + oy, w, h) for x, y, w, h in annotations.get(row.patch_id, []))
    dims = (patch_size * (len(used) // cols), patch_size * cols)
    return stitch_patches(refs_and_images, dims), boxes


def comparison_table(rows: List[dict]) -> str:
    """检测对比表：每行 P / R / F1（百分数，两位小数）"""
    lines = [f"{'Method':<28}{'P':>8}{'R':>8}{'F1':>8}"]
    for row in rows:
        lines.append(f"{ROW_LABELS[row['mode']]:<28}{100 * row['p_box']:>8.2f}"
                     f"{100 * row['r_box']:>8.2f}{100 * row['f1_box']:>8.2f}")
    return "\n".join(lines) + "\n"


def repro_desk(config: PipelineConfig, run_dir: str, lambda_mask: Optional[float] = None,
               skip_wsi: bool = False, progress: bool = False) -> dict:
    """
    一条命令完成桌面规模对比实验
    :param config: 流水线配置
    :param run_dir: 运行目录，所有产物写在其下
    :param lambda_mask: 覆盖掩膜引导训练的 λ_mask（消融组固定为 0）
    :param skip_wsi: 跳过整图检测评估
    :return: 对比报告
    """
    context = RunContext(config, run_dir, progress)
    iou = config.get("evaluate", "match_iou")
    patch_size = config.get("patchio", "patch_size")
    report: Dict[str, object] = {"seed": context.seed}

    with labelled("gen-corpus"):
        he_train, he_val = _generate(context, StainDomain.HE)
        cd20_train, cd20_val = _generate(context, StainDomain.CD20)
        report["dataset"] = dataset_summary(DatasetManifest(he_train.rows + he_val.rows + cd20_train.rows + cd20_val.rows))

    with labelled("calibrate"):
        thresholds = {
            StainDomain.HE: _calibrate(context, StainDomain.HE, he_train),
            StainDomain.CD20: _calibrate(context, StainDomain.CD20, cd20_train),
        }
        report["mask_fidelity"] = {
            "he_nucleus_iou": _mask_fidelity(context, StainDomain.HE, he_val, thresholds[StainDomain.HE]),
            "cd20_positive_iou": _mask_fidelity(context, StainDomain.CD20, cd20_val, thresholds[StainDomain.CD20]),
        }
        report["thresholds"] = {domain.value: {kind: ts.to_dict() for kind, ts in sets.items()}
                                for domain, sets in thresholds.items()}

    transfer_config = TransferConfig.from_config(config)
    if lambda_mask is not None:
        transfer_config.lambda_mask = lambda_mask
    variants = {"mask_guided": transfer_config, "no_mask": replace(transfer_config, lambda_mask=0.0)}
    he_all = DatasetManifest(he_train.rows + he_val.rows)
    virtual = {}
    with labelled("train-transfer"):
        for label, variant in variants.items():
            out = os.path.join(context.path("checkpoints"), f"transfer_{label}")
            bundle = train(variant, he_train, cd20_train, thresholds, out, progress=progress)
            with labelled("synthesize"):
                virtual[label] = synthesize_manifest(bundle, he_all, os.path.join(context.path("patches"),
                                                                                  f"virtual_{label}"))

    with labelled("fid"):
        extractor = extractor_from_config(config)
        real_cd20 = _features(cd20_val, extractor)
        real_he = _features(he_val, extractor)
        fid = {"extractor": extractor.name}
        for label, rows in virtual.items():
            fake = _features(rows.filter(split="val"), extractor)
            fid[label] = frechet_distance(fake, real_cd20)
            fid[f"{label}_vs_he"] = frechet_distance(fake, real_he)
        report["fid"] = fid
        logger.info("FID mask_guided=%.4f no_mask=%.4f", fid["mask_guided"], fid["no_mask"])

    detection_manifest = DatasetManifest(he_all.rows + virtual["mask_guided"].rows)
    train_rows = detection_manifest.filter(split="train")
    val_rows = detection_manifest.filter(split="val")
    annotations = load_manifest_annotations(he_val)
    models, detections, rows = {}, {}, []
    for mode in DETECTION_MODES:
        with labelled("train-detector"):
            models[mode] = train_detector(DetectorConfig.from_config(config, mode), train_rows,
                                          os.path.join(context.path("checkpoints"), f"detector_{mode}"), progress)
        with labelled("detect"):
            detections[mode] = detect_manifest(models[mode], val_rows)
            write_detections(context.path("dets", f"{mode}.jsonl"), detections[mode])

    with labelled("detect"):
        detections["combine-nms"] = merge_detections(detections["he"], detections["cd20"],
                                                     models["he"].config.nms_iou)
        write_detections(context.path("dets", "combine-nms.jsonl"), detections["combine-nms"])

    with labelled("evaluate"):
        for mode, key in (("he", "he"), ("cd20", "cd20"), ("combine", "fused"), ("combine-nms", "combine-nms")):
            metrics = evaluate_detections(detections[key], annotations, iou, he_val)
            rows.append({"mode": mode, **metrics})
        report["detection"] = rows
        table = comparison_table(rows)
        with open(context.path("reports", "comparison.txt"), "w", encoding="utf-8") as f:
            f.write(table)
        logger.info("检测对比\n%s", table)

    if not skip_wsi:
        with labelled("stitch"):
            mosaic, boxes = _val_mosaic(he_val, patch_size)
            write_rgb(context.path("patches", "mosaic", f"{WSI_SLIDE}.png"), mosaic)
        wsi = {}
        with labelled("detect"):
            for label, overlap in (("non_overlapping", 0), ("overlapping", patch_size // 2)):
                tiles = tile_image(mosaic, patch_size, overlap, WSI_SLIDE)
                dets = detect_wsi(models["he"], [(ref, patch.image) for ref, patch in tiles])
                write_detections(context.path("dets", f"wsi_{label}.jsonl"), dets)
                wsi[label] = {"tiles": len(tiles), **evaluate_detections(dets, {WSI_SLIDE: boxes}, iou)}
        report["wsi"] = wsi

    return report
