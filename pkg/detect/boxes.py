import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from errors import VipastainError

logger = logging.getLogger(__name__)

SOURCES = ("he", "cd20", "fused")
FRAMES = ("patch", "wsi")


@dataclass(frozen=True)
class Detection:
    box: Tuple[float, float, float, float]
    score: float
    source: str = "he"
    frame: str = "patch"
    patch_id: Optional[str] = None
    slide_id: Optional[str] = None
    instance_mask: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        x, y, w, h = self.box
        if w <= 0 or h <= 0:
            raise ValueError(f"检测框宽高必须为正: {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"检测得分必须在 [0,1] 内: {self.score}")
        if self.frame not in FRAMES:
            raise ValueError(f"未知坐标系: {self.frame}")
        if self.frame == "wsi" and not self.slide_id:
            raise ValueError("整图坐标系下的检测必须带 slide_id")

    @property
    def key(self) -> Optional[str]:
        """NMS 只在同一图块（或同一切片）内部进行"""
        return self.slide_id if self.frame == "wsi" else self.patch_id

    def order_key(self):
        return (-self.score,) + tuple(self.box)

    def translated(self, dx: float, dy: float, slide_id: str) -> "Detection":
        x, y, w, h = self.box
        return replace(self, box=(x + dx, y + dy, w, h), frame="wsi", slide_id=slide_id, instance_mask=None)


def iou(box_a, box_b) -> float:
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


def _nms_group(detections: List[Detection], iou_threshold: float) -> List[Detection]:
    kept: List[Detection] = []
    for det in sorted(detections, key=Detection.order_key):
        if all(iou(det.box, k.box) <= iou_threshold for k in kept):
            kept.append(det)
    return kept


def nms(detections: Iterable[Detection], iou_threshold: float = 0.5) -> List[Detection]:
    """
    贪心非极大值抑制：按得分降序保留，删除与已保留框 IoU 超过阈值的框；
    得分相同时坐标 (x, y) 较小者优先。不同图块/切片的检测互不抑制
    :param detections: 检测列表
    :param iou_threshold: IoU 阈值，0 < t < 1
    :return: 保留的检测，按 (−score, x, y, w, h) 排序
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold 必须在 (0,1) 内: {iou_threshold}")
    groups: Dict[Optional[str], List[Detection]] = {}
    for det in detections:
        groups.setdefault(det.key, []).append(det)
    kept = []
    for key in sorted(groups, key=lambda k: (k is not None, k or "")):
        kept.extend(_nms_group(groups[key], iou_threshold))
    return sorted(kept, key=lambda d: (d.key or "",) + d.order_key())


def merge_detections(dets_he: Iterable[Detection], dets_cd20: Iterable[Detection],
                     iou_threshold: float = 0.5) -> List[Detection]:
    """
    两个检测器结果的后融合：并集后做 NMS，保留者的 source 不变
    """
    union = list(dets_he) + list(dets_cd20)
    frames = {det.frame for det in union}
    if len(frames) > 1:
        raise ValueError(f"待合并的检测处于不同坐标系: {sorted(frames)}")
    return nms(union, iou_threshold)


def box_mask(box, shape: Tuple[int, int]) -> np.ndarray:
    """检测框对应的矩形实例掩膜（按像素栅格取整）"""
    x, y, w, h = box
    mask = np.zeros(shape, dtype=bool)
    x0, y0 = max(0, int(np.floor(x))), max(0, int(np.floor(y)))
    x1, y1 = min(shape[1], int(np.ceil(x + w))), min(shape[0], int(np.ceil(y + h)))
    if x1 > x0 and y1 > y0:
        mask[y0:y1, x0:x1] = True
    return mask


def write_detections(path: str, detections: Iterable[Detection]):
    """JSON lines：{"patch_id"|"slide_id", "box", "score", "source"}"""
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for det in detections:
                record = {"slide_id": det.slide_id} if det.frame == "wsi" else {"patch_id": det.patch_id}
                record.update({"box": [float(v) for v in det.box], "score": float(det.score), "source": det.source})
                f.write(json.dumps(record) + "\n")
    except OSError as e:
        raise VipastainError(f"写入检测结果失败: {path}: {e}")


def read_detections(path: str) -> List[Detection]:
    detections = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                record = json.loads(line)
                wsi = "slide_id" in record
                detections.append(Detection(
                    box=tuple(float(v) for v in record["box"]),
                    score=float(record["score"]),
                    source=record.get("source", "he"),
                    frame="wsi" if wsi else "patch",
                    patch_id=None if wsi else record.get("patch_id"),
                    slide_id=record.get("slide_id"),
                ))
    except FileNotFoundError:
        raise VipastainError(f"检测结果文件不存在: {path}")
    except (OSError, ValueError, KeyError) as e:
        raise VipastainError(f"读取检测结果失败: {path}: {e}")
    return detections
