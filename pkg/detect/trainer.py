import csv
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from errors import NonFiniteError, VipastainError
from patchio.imageio import read_mask, read_rgb
from patchio.manifest import DatasetManifest, load_manifest_annotations
from patchio.patch import StainDomain
from .inference import as_chw, fuse_channels, input_tensor
from .model import MAX_LOG_SCALE, DetectorConfig, DetectorModel

logger = logging.getLogger(__name__)

CURVE_HEADER = ("epoch", "loss", "obj_loss", "box_loss", "mask_loss")
Box = Tuple[float, float, float, float]


def _pick_scale(size: float, anchors: Sequence[Tuple[int, int]]) -> int:
    """锚框尺寸与目标尺寸对数距离最小的尺度"""
    return int(np.argmin([abs(math.log(size / anchor)) for _, anchor in anchors]))


def build_targets(boxes_per_image: Sequence[Sequence[Box]], image_size: Tuple[int, int],
                  anchors: Sequence[Tuple[int, int]]) -> List[torch.Tensor]:
    """
    每个尺度的训练目标 N×5×h×w：[objectness, 中心 x 偏移, 中心 y 偏移, log(w/anchor), log(h/anchor)]
    目标中心所在单元为正样本；同一单元多个目标时保留面积较大者
    """
    height, width = image_size
    targets = [torch.zeros(len(boxes_per_image), 5, math.ceil(height / s), math.ceil(width / s)) for s, _ in anchors]
    for n, boxes in enumerate(boxes_per_image):
        for x, y, w, h in sorted(boxes, key=lambda b: b[2] * b[3]):
            scale = _pick_scale(max(w, h), anchors)
            stride, anchor = anchors[scale]
            cx, cy = x + w / 2.0, y + h / 2.0
            gx = min(int(cx // stride), targets[scale].shape[3] - 1)
            gy = min(int(cy // stride), targets[scale].shape[2] - 1)
            targets[scale][n, :, gy, gx] = torch.tensor([
                1.0,
                cx / stride - gx,
                cy / stride - gy,
                float(np.clip(math.log(w / anchor), -MAX_LOG_SCALE, MAX_LOG_SCALE)),
                float(np.clip(math.log(h / anchor), -MAX_LOG_SCALE, MAX_LOG_SCALE)),
            ])
    return targets


def detection_loss(outputs: Sequence[torch.Tensor], targets: Sequence[torch.Tensor],
                   mask_logits: Optional[torch.Tensor] = None,
                   mask_targets: Optional[torch.Tensor] = None) -> Dict[str, torch.Tensor]:
    """
    目标置信度 BCE（按正样本数归一化）+ 正样本上的框回归 + 可选的掩膜 BCE
    """
    positives = sum(float(t[:, 0].sum()) for t in targets)
    norm = max(1.0, positives)
    obj_loss = sum(F.binary_cross_entropy_with_logits(o[:, 0], t[:, 0], reduction="sum") for o, t in zip(outputs, targets)) / norm
    box_loss = outputs[0].new_zeros(())
    for o, t in zip(outputs, targets):
        pos = t[:, 0] > 0
        if pos.any():
            offsets = torch.sigmoid(o[:, 1:3].permute(0, 2, 3, 1)[pos])
            scales = o[:, 3:5].permute(0, 2, 3, 1)[pos]
            wanted = t[:, 1:5].permute(0, 2, 3, 1)[pos]
            box_loss = box_loss + (F.mse_loss(offsets, wanted[:, :2], reduction="sum")
                                   + F.smooth_l1_loss(scales, wanted[:, 2:], reduction="sum"))
    box_loss = box_loss / norm
    mask_loss = outputs[0].new_zeros(())
    if mask_logits is not None and mask_targets is not None:
        mask_loss = F.binary_cross_entropy_with_logits(mask_logits[:, 0], mask_targets)
    return {"loss": obj_loss + box_loss + mask_loss, "obj_loss": obj_loss, "box_loss": box_loss, "mask_loss": mask_loss}


def _training_rows(manifest: DatasetManifest, mode: str):
    """
    按模式选取训练输入：he 用真实 H&E，cd20 用虚拟 CD20，fused 用一一配对的两者
    :return: [(patch_id, CHW 数组, 标注行)]
    """
    if mode == "fused":
        pairs = manifest.pairs()
        return [(he.patch_id, fuse_channels(read_rgb(he.image_path), read_rgb(cd20.image_path)), he)
                for he, cd20 in pairs]
    stain = StainDomain.HE if mode == "he" else StainDomain.VIRTUAL_CD20
    return [(row.patch_id, as_chw(read_rgb(row.image_path)), row) for row in manifest.filter(stain=stain)]


def train_detector(config: DetectorConfig, manifest: DatasetManifest, out_dir: str,
                   progress: bool = False) -> DetectorModel:
    """
    训练网格检测器
    :param config: 检测配置（mode 决定输入为 he / cd20 / fused）
    :param manifest: 训练清单；fused 模式需要 H&E 与虚拟 CD20 一一配对
    :param out_dir: 输出目录，写 detector.pt 与 training_curve.csv
    :param progress: 是否显示进度条
    """
    config.validate()
    rows = _training_rows(manifest, config.mode)
    if not rows:
        raise VipastainError(f"{config.mode} 模式没有可用的训练图块")
    missing = [row.patch_id for _, _, row in rows if not row.annotation_path]
    if missing:
        raise VipastainError(f"以下训练图块缺少标注: {', '.join(missing)}")
    annotations = load_manifest_annotations(DatasetManifest([row for _, _, row in rows]))
    if config.mask_head and any("tls" not in row.mask_paths for _, _, row in rows):
        raise VipastainError("启用掩膜分支需要所有训练图块提供 tls 掩膜")

    torch.use_deterministic_algorithms(True, warn_only=True)
    model = DetectorModel.build(config)
    network = model.network
    device = model.device
    images = torch.cat([input_tensor(array, device) for _, array, _ in rows])
    boxes = [annotations.get(patch_id, []) for patch_id, _, _ in rows]
    targets = [t.to(device) for t in build_targets(boxes, images.shape[-2:], model.anchors())]
    mask_targets = None
    if config.mask_head:
        mask_targets = torch.from_numpy(
            np.stack([read_mask(row.mask_paths["tls"]) for _, _, row in rows]).astype(np.float32)).to(device)

    optimizer = torch.optim.Adam(network.parameters(), lr=config.learning_rate)
    os.makedirs(out_dir, exist_ok=True)
    curve_path = os.path.join(out_dir, "training_curve.csv")
    logger.info("开始检测训练 mode=%s patches=%d instances=%d epochs=%d", config.mode, len(rows),
                sum(len(b) for b in boxes), config.epochs)

    network.train()
    with open(curve_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CURVE_HEADER)
        for epoch in tqdm(range(config.epochs), desc=f"detector {config.mode}", disable=not progress):
            generator = torch.Generator().manual_seed(config.seed * 100003 + epoch)
            order = torch.randperm(len(rows), generator=generator)
            totals = {name: 0.0 for name in CURVE_HEADER[1:]}
            for start in range(0, len(rows), config.batch_size):
                index = order[start:start + config.batch_size].to(device)
                outputs, mask_logits = network(images[index])
                losses = detection_loss(outputs, [t[index] for t in targets], mask_logits,
                                        mask_targets[index] if mask_targets is not None else None)
                if not torch.isfinite(losses["loss"]):
                    raise NonFiniteError(f"检测训练第 {epoch + 1} 轮损失非有限: "
                                         f"{ {k: float(v) for k, v in losses.items()} }")
                optimizer.zero_grad()
                losses["loss"].backward()
                optimizer.step()
                for name in totals:
                    totals[name] += float(losses[name].detach()) * len(index)
            row = [epoch + 1] + [totals[name] / len(rows) for name in CURVE_HEADER[1:]]
            writer.writerow(row)
            logger.debug("detector epoch=%d loss=%.4f", epoch + 1, row[1])

    network.eval()
    model.save(os.path.join(out_dir, "detector.pt"))
    return model
