import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from errors import ShapeMismatchError
from patchio.imageio import read_rgb
from patchio.manifest import DatasetManifest
from patchio.patch import GridPatchRef, StainDomain
from .boxes import Detection, box_mask, nms
from .model import DetectorModel, decode_scale

logger = logging.getLogger(__name__)


def as_chw(image: np.ndarray) -> np.ndarray:
    """HxWx3 RGB → 3xHxW"""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"需要 HxWx3 的 RGB 图像: shape={image.shape}")
    return np.ascontiguousarray(image.transpose(2, 0, 1))


def fuse_channels(he_patch: np.ndarray, cd20_patch: np.ndarray) -> np.ndarray:
    """
    早融合：通道顺序为 [he.R, he.G, he.B, cd20.R, cd20.G, cd20.B]
    :param he_patch: 真实 H&E，HxWx3
    :param cd20_patch: （虚拟）CD20，HxWx3
    :return: 6xHxW 数组
    """
    he, cd20 = np.asarray(he_patch), np.asarray(cd20_patch)
    if he.shape != cd20.shape:
        raise ShapeMismatchError(f"H&E 与 CD20 图块尺寸不一致: {he.shape} vs {cd20.shape}")
    return np.concatenate([as_chw(he), as_chw(cd20)], axis=0)


def split_fused(fused: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """fuse_channels 的逆：返回两幅 HxWx3 图像"""
    if fused.ndim != 3 or fused.shape[0] != 6:
        raise ShapeMismatchError(f"需要 6xHxW 的融合输入: shape={fused.shape}")
    return fused[:3].transpose(1, 2, 0).copy(), fused[3:].transpose(1, 2, 0).copy()


def input_tensor(array: np.ndarray, device="cpu") -> torch.Tensor:
    """CxHxW uint8（或 HxWx3）→ 1xCxHxW，取值归一化到 [0,1]"""
    array = np.asarray(array)
    if array.ndim == 3 and array.shape[2] == 3 and array.shape[0] not in (3, 6):
        array = as_chw(array)
    return torch.from_numpy(array.astype(np.float32) / 255.0).unsqueeze(0).to(device)


def detect_patch(model: DetectorModel, input_image: np.ndarray, patch_id: Optional[str] = None) -> List[Detection]:
    """
    单图块检测：置信度过滤后做 NMS，框裁剪到图块范围
    :param model: 检测模型
    :param input_image: 3xHxW / HxWx3（he、cd20）或 6xHxW（fused）
    :param patch_id: 写入检测结果的图块编号
    :return: 图块坐标系下的检测，得分均 ≥ score_threshold
    """
    x = input_tensor(input_image, model.device)
    if x.shape[1] != model.input_channels:
        raise ShapeMismatchError(f"模型需要 {model.input_channels} 通道输入，实际 {x.shape[1]}")
    height, width = x.shape[-2:]
    network = model.network
    network.eval()
    with torch.no_grad():
        outputs, mask_logits = network(x)

    union_mask = None
    if mask_logits is not None:
        union_mask = (torch.sigmoid(mask_logits[0, 0]) > 0.5).cpu().numpy()

    candidates = []
    for raw, (stride, anchor) in zip(outputs, model.anchors()):
        scores, boxes = decode_scale(raw, stride, anchor)
        keep = scores[0] >= model.score_threshold
        for score, (bx, by, bw, bh) in zip(scores[0][keep].tolist(), boxes[0][keep].tolist()):
            x0, y0 = max(0.0, bx), max(0.0, by)
            x1, y1 = min(float(width), bx + bw), min(float(height), by + bh)
            if x1 <= x0 or y1 <= y0:
                continue
            box = (x0, y0, x1 - x0, y1 - y0)
            mask = box_mask(box, (height, width))
            if union_mask is not None:
                mask &= union_mask
            candidates.append(Detection(box=box, score=float(score), source=model.config.mode,
                                        patch_id=patch_id, instance_mask=mask))
    return nms(candidates, model.config.nms_iou)


def detect_wsi(model: DetectorModel, grid_patches: Iterable[Tuple[GridPatchRef, np.ndarray]]) -> List[Detection]:
    """
    整图检测：逐图块检测，按图块原点平移到整图坐标，再做跨图块 NMS 去除重叠区的重复检测
    :param grid_patches: [(GridPatchRef, 图块输入), …]
    """
    translated = []
    for ref, image in grid_patches:
        for det in detect_patch(model, image, ref.patch_id):
            translated.append(det.translated(ref.origin_x, ref.origin_y, ref.slide_id))
    return nms(translated, model.config.nms_iou)


def model_inputs(manifest: DatasetManifest, mode: str) -> List[Tuple[str, np.ndarray]]:
    """按检测模式从清单取输入：he → H&E，cd20 → 虚拟 CD20，fused → 配对融合"""
    if mode == "fused":
        return [(he.patch_id, fuse_channels(read_rgb(he.image_path), read_rgb(cd20.image_path)))
                for he, cd20 in manifest.pairs()]
    stain = StainDomain.HE if mode == "he" else StainDomain.VIRTUAL_CD20
    return [(row.patch_id, as_chw(read_rgb(row.image_path))) for row in manifest.filter(stain=stain)]


def detect_manifest(model: DetectorModel, manifest: DatasetManifest) -> List[Detection]:
    detections = []
    for patch_id, array in model_inputs(manifest, model.config.mode):
        detections.extend(detect_patch(model, array, patch_id))
    logger.info("检测完成 mode=%s patches=%d detections=%d", model.config.mode,
                len(manifest), len(detections))
    return detections


def instance_masks(detections: Sequence[Detection], shape: Tuple[int, int]) -> List[np.ndarray]:
    """检测对应的实例掩膜；没有掩膜分支输出时退化为矩形掩膜"""
    return [det.instance_mask if det.instance_mask is not None else box_mask(det.box, shape) for det in detections]
