from collections import defaultdict
from typing import Dict, Optional, Sequence

import numpy as np

from detect.boxes import Detection, box_mask
from patchio.imageio import read_mask
from patchio.manifest import DatasetManifest
from .matching import PrecisionRecall, detection_report, mask_precision_recall, match_by_patch


def manifest_mask_metrics(detections: Sequence[Detection], manifest: DatasetManifest,
                          kind: str = "tls") -> Optional[PrecisionRecall]:
    """
    逐图块把检测的实例掩膜（缺省为矩形）与真值 TLS 掩膜比较，像素计数在所有图块上累加
    :return: PrecisionRecall；清单中没有该种掩膜时返回 None
    """
    rows = {row.patch_id: row for row in manifest if kind in row.mask_paths}
    if not rows:
        return None
    by_patch = defaultdict(list)
    for det in detections:
        if det.patch_id in rows:
            by_patch[det.patch_id].append(det)

    preds, gts = [], []
    for patch_id in sorted(rows):
        gt = read_mask(rows[patch_id].mask_paths[kind])
        pred = np.zeros_like(gt)
        for det in by_patch.get(patch_id, []):
            pred |= det.instance_mask if det.instance_mask is not None else box_mask(det.box, gt.shape)
        preds.append(pred)
        gts.append(gt)
    return mask_precision_recall(np.concatenate(preds, axis=0), np.concatenate(gts, axis=0))


def evaluate_detections(detections: Sequence[Detection], annotations: Dict[str, Sequence],
                        iou_threshold: float = 0.5, manifest: Optional[DatasetManifest] = None,
                        fid: Optional[float] = None) -> dict:
    """
    检测评估报告 {"p_box","r_box","f1_box","p_mask","r_mask","fid", …}
    :param annotations: {patch_id: [box, …]}，只评估其中出现的图块
    """
    scoped = [det for det in detections if det.key in annotations]
    match = match_by_patch(scoped, annotations, iou_threshold)
    masks = manifest_mask_metrics(scoped, manifest) if manifest is not None else None
    return detection_report(match, masks, fid)
