"""
检测评估：贪心匹配、精确率/召回率/F1，以及像素级掩膜精确率/召回率。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from detect.boxes import Detection, iou
from errors import ShapeMismatchError

logger = logging.getLogger(__name__)

Box = Tuple[float, float, float, float]


@dataclass
class MatchResult:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)

    def __add__(self, other: "MatchResult") -> "MatchResult":
        return MatchResult(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
            self.pairs + other.pairs,
        )


class PrecisionRecall(NamedTuple):
    precision: float
    recall: float
    precision_degenerate: bool = False
    recall_degenerate: bool = False


def _box_and_score(pred) -> Tuple[Box, float]:
    if isinstance(pred, Detection):
        return tuple(pred.box), pred.score
    box, score = pred
    return tuple(box), float(score)


def match_detections(preds: Sequence, gts: Sequence[Box], iou_threshold: float = 0.5) -> MatchResult:
    """
    贪心匹配：预测按得分降序（同分按框坐标）依次与 IoU 最高且 ≥ 阈值的未匹配真值配对
    :param preds: Detection 或 (box, score) 序列
    :param gts: 真值框序列
    :param iou_threshold: 匹配阈值
    :return: MatchResult，pairs 中为 (预测下标, 真值下标, IoU)
    """
    scored = [(i,) + _box_and_score(p) for i, p in enumerate(preds)]
    order = sorted(scored, key=lambda item: (-item[2],) + item[1])
    matched_gt = set()
    pairs = []
    for index, box, _ in order:
        best, best_iou = None, iou_threshold
        for g, gt in enumerate(gts):
            if g in matched_gt:
                continue
            overlap = iou(box, gt)
            if overlap >= best_iou and (best is None or overlap > best_iou):
                best, best_iou = g, overlap
        if best is not None:
            matched_gt.add(best)
            pairs.append((index, best, best_iou))
    tp = len(pairs)
    return MatchResult(true_positives=tp, false_positives=len(preds) - tp, false_negatives=len(gts) - tp, pairs=pairs)


def match_by_patch(detections: Sequence[Detection], annotations: Dict[str, Sequence[Box]],
                   iou_threshold: float = 0.5) -> MatchResult:
    """逐图块匹配后累加；没有真值的图块上的检测全部计为 FP"""
    grouped: Dict[Optional[str], List[Detection]] = {}
    for det in detections:
        grouped.setdefault(det.key, []).append(det)
    total = MatchResult()
    for key in sorted(set(grouped) | set(annotations), key=lambda k: k or ""):
        total = total + match_detections(grouped.get(key, []), annotations.get(key, []), iou_threshold)
    return total


def precision_recall(match: MatchResult) -> PrecisionRecall:
    """分母为 0 时结果为 0 并置位对应标志"""
    predicted = match.true_positives + match.false_positives
    actual = match.true_positives + match.false_negatives
    return PrecisionRecall(
        precision=match.true_positives / predicted if predicted else 0.0,
        recall=match.true_positives / actual if actual else 0.0,
        precision_degenerate=predicted == 0,
        recall_degenerate=actual == 0,
    )


def f1_score(precision: float, recall: float) -> float:
    """调和平均；P、R 可以是 [0,1] 比例也可以是百分数"""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _union(masks, shape=None) -> Optional[np.ndarray]:
    if isinstance(masks, np.ndarray) and masks.ndim == 2:
        return masks.astype(bool)
    union = None
    for mask in masks:
        mask = np.asarray(mask, dtype=bool)
        if union is None:
            union = mask.copy()
        elif mask.shape != union.shape:
            raise ShapeMismatchError(f"实例掩膜尺寸不一致: {mask.shape} vs {union.shape}")
        else:
            union |= mask
    if union is None and shape is not None:
        union = np.zeros(shape, dtype=bool)
    return union


def mask_precision_recall(pred_masks, gt_masks) -> PrecisionRecall:
    """
    像素级掩膜精确率/召回率，在所有实例的并集上计算
    :param pred_masks: 单幅二值图或实例掩膜序列
    :param gt_masks: 同上
    """
    gt = _union(gt_masks)
    pred = _union(pred_masks, None if gt is None else gt.shape)
    if gt is None:
        gt = np.zeros(pred.shape, dtype=bool) if pred is not None else np.zeros((0, 0), dtype=bool)
    if pred is None:
        pred = np.zeros(gt.shape, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"预测掩膜与真值掩膜尺寸不一致: {pred.shape} vs {gt.shape}")
    overlap = int(np.logical_and(pred, gt).sum())
    n_pred, n_gt = int(pred.sum()), int(gt.sum())
    return PrecisionRecall(
        precision=overlap / n_pred if n_pred else 0.0,
        recall=overlap / n_gt if n_gt else 0.0,
        precision_degenerate=n_pred == 0,
        recall_degenerate=n_gt == 0,
    )


def detection_report(match: MatchResult, masks: Optional[PrecisionRecall] = None,
                     fid: Optional[float] = None) -> dict:
    """报告 JSON：p_box, r_box, f1_box, p_mask, r_mask, fid 及退化标志"""
    boxes = precision_recall(match)
    report = {
        "p_box": boxes.precision,
        "r_box": boxes.recall,
        "f1_box": f1_score(boxes.precision, boxes.recall),
        "p_mask": masks.precision if masks else None,
        "r_mask": masks.recall if masks else None,
        "fid": fid,
        "tp": match.true_positives,
        "fp": match.false_positives,
        "fn": match.false_negatives,
        "flags": {
            "p_box_degenerate": boxes.precision_degenerate,
            "r_box_degenerate": boxes.recall_degenerate,
            "p_mask_degenerate": masks.precision_degenerate if masks else None,
            "r_mask_degenerate": masks.recall_degenerate if masks else None,
        },
    }
    return report
