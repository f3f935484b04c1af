import logging
import os
from typing import Iterator, Tuple

import numpy as np
from tqdm import tqdm

from errors import VipastainError
from patchio.imageio import write_mask, write_rgb
from patchio.manifest import DatasetManifest, ManifestRow, write_annotations
from patchio.patch import Patch, StainDomain, format_patch_id
from .render import generate_pseudo_cd20, generate_pseudo_he
from .scene import GroundTruth, SceneSpec

logger = logging.getLogger(__name__)

GENERATORS = {
    StainDomain.HE: generate_pseudo_he,
    StainDomain.CD20: generate_pseudo_cd20,
}
_STAIN_CODES = {StainDomain.HE: 1, StainDomain.CD20: 2}


def derive_seed(template_seed: int, index: int, stain: StainDomain) -> int:
    """由模板种子、序号和染色域确定性地派生场景种子"""
    sequence = np.random.SeedSequence([int(template_seed), int(index), _STAIN_CODES[stain]])
    return int(sequence.generate_state(1)[0])


def generate_scenes(spec_template: SceneSpec, count: int,
                    stain: StainDomain = StainDomain.HE, start: int = 0) -> Iterator[Tuple[Patch, GroundTruth]]:
    """
    在内存中逐个生成场景，图块编号为 {stain}{index:05d}_x0_y0
    :param spec_template: 场景模板（seed 作为派生种子的基）
    :param count: 场景数量
    :param stain: he 或 cd20
    :param start: 起始序号（用于划分训练/验证的不同序号区间）
    """
    if stain not in GENERATORS:
        raise ValueError(f"不支持生成的染色域: {stain}")
    generate = GENERATORS[stain]
    for index in range(start, start + count):
        patch, truth = generate(spec_template.with_seed(derive_seed(spec_template.seed, index, stain)))
        patch.slide_id = f"{stain.value}{index:05d}"
        yield patch, truth


def generate_corpus(spec_template: SceneSpec, count: int, out_dir: str,
                    stain: StainDomain = StainDomain.HE, start: int = 0,
                    progress: bool = False) -> DatasetManifest:
    """
    生成伪组织学语料并写盘
    :param spec_template: 场景模板
    :param count: 图块数量（≥ 1）
    :param out_dir: 输出目录，写出 images/、masks/、annotations.jsonl、manifest.csv
    :param stain: 染色域
    :param start: 起始序号
    :param progress: 是否显示进度条
    :return: 数据集清单
    """
    if count < 1:
        raise ValueError(f"count 必须 ≥ 1: {count}")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise VipastainError(f"无法创建输出目录: {out_dir}: {e}")

    manifest = DatasetManifest()
    annotation_path = os.path.join(out_dir, "annotations.jsonl")
    annotations = []
    scenes = generate_scenes(spec_template, count, stain, start)
    for patch, truth in tqdm(scenes, total=count, desc=f"gen-corpus {stain.value}", disable=not progress):
        patch_id = format_patch_id(patch.slide_id, 0, 0)
        image_path = os.path.join(out_dir, "images", f"{patch_id}.png")
        write_rgb(image_path, patch.image)
        mask_paths = {}
        for kind, mask in (("nucleus", truth.nucleus_mask), ("rbc", truth.rbc_mask),
                           ("positive", truth.positive_mask), ("tls", truth.tls_union)):
            mask_paths[kind] = os.path.join(out_dir, "masks", f"{patch_id}_{kind}.png")
            write_mask(mask_paths[kind], mask)
        annotations.append((patch_id, [list(box) for box in truth.tls_boxes]))
        manifest.rows.append(ManifestRow(
            patch_id=patch_id,
            stain=stain,
            split="all",
            image_path=image_path,
            mask_paths=mask_paths,
            annotation_path=annotation_path,
        ))

    write_annotations(annotation_path, annotations)
    manifest.write_csv(os.path.join(out_dir, "manifest.csv"))
    logger.info("语料生成完成 stain=%s count=%d out=%s", stain.value, count, out_dir)
    return manifest
