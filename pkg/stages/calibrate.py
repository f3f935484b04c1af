import json
import logging
import os
from typing import Optional

from errors import VipastainError
from maskextract.calibrate import calibrate_per_patch, calibrate_thresholds, mask_rules_from_config, per_patch_records
from maskextract.masks import MASK_SUFFIXES, extract_masks, save_threshold_file
from patchio.imageio import read_rgb, write_mask
from patchio.manifest import DatasetManifest
from patchio.patch import StainDomain
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


def select_rows(manifest: DatasetManifest, stain: StainDomain, split: Optional[str]) -> DatasetManifest:
    """按染色域筛选；指定的 split 不存在时使用全部行"""
    rows = manifest.filter(stain=stain)
    if split and len(rows.filter(split=split)):
        rows = rows.filter(split=split)
    return rows


class CalibrateStage(Stage):
    name = "calibrate"

    def execute(self, context: RunContext, stain: str, manifest: str, out: Optional[str] = None,
                split: Optional[str] = "train", per_patch: bool = False, masks_out: Optional[str] = None) -> dict:
        """
        在训练图块上标定多阈值 Otsu，写出阈值 JSON（逐图块模式写 JSON lines）
        :param stain: 染色域 he 或 cd20
        :param manifest: 数据集清单 CSV
        :param out: 阈值文件路径，默认 <run>/checkpoints/thresholds_<stain>.json
        :param split: 只用该 split 的图块标定
        :param per_patch: 逐图块标定
        :param masks_out: 给出时把提取的掩膜写为 0/255 PNG（后缀 _mn/_mr/_mnr/_mp）
        """
        config = context.config
        domain = StainDomain(stain).base
        rows = select_rows(DatasetManifest.read_csv(manifest), domain, split)
        if not len(rows):
            raise VipastainError(f"清单 {manifest} 中没有 {domain.value} 图块")
        section = config.section("maskextract")
        rules = mask_rules_from_config(config, domain)
        k, working_index = section["otsu_thresholds"], section["working_index"]
        min_px = section["min_component_px"] or None

        if per_patch:
            out = out or context.path("checkpoints", f"thresholds_{domain.value}.jsonl")
            results = list(calibrate_per_patch(((row.patch_id, read_rgb(row.image_path)) for row in rows),
                                               domain, rules, k, working_index))
            with open(out, "w", encoding="utf-8") as f:
                for record in per_patch_records(results):
                    f.write(json.dumps(record) + "\n")
            per_row = dict(results)
        else:
            out = out or context.path("checkpoints", f"thresholds_{domain.value}.json")
            pooled = calibrate_thresholds((read_rgb(row.image_path) for row in rows), domain, rules, k, working_index)
            save_threshold_file(out, pooled)
            per_row = {row.patch_id: pooled for row in rows}

        written = 0
        if masks_out:
            for row in rows:
                masks = extract_masks(read_rgb(row.image_path), domain, per_row[row.patch_id], min_px,
                                      section["fill_holes"])
                for kind, mask in masks.items():
                    write_mask(os.path.join(masks_out, f"{row.patch_id}{MASK_SUFFIXES[kind]}.png"), mask)
                    written += 1
        logger.info("标定完成 stain=%s patches=%d out=%s masks=%d", domain.value, len(rows), out, written)
        return {"thresholds": out, "patches": len(rows), "masks_written": written}
