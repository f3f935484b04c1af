import logging
from typing import Optional

from detect.boxes import read_detections
from evalmetrics.report import evaluate_detections
from patchio.manifest import DatasetManifest, read_annotations
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


class EvaluateStage(Stage):
    name = "evaluate"

    def execute(self, context: RunContext, dets: str, gt: str, iou: Optional[float] = None,
                manifest: Optional[str] = None) -> dict:
        """
        计算检测框精确率、召回率、F1，给出清单时附带像素级掩膜精确率/召回率
        :param dets: 检测结果 JSON lines
        :param gt: 真值标注 JSON lines
        :param iou: 匹配 IoU 阈值，默认取 [evaluate] match_iou
        :param manifest: 含 tls 掩膜的清单，用于掩膜指标
        """
        threshold = iou if iou is not None else context.config.get("evaluate", "match_iou")
        detections = read_detections(dets)
        annotations = read_annotations(gt)
        rows = DatasetManifest.read_csv(manifest) if manifest else None
        if rows is not None:
            annotations = {pid: boxes for pid, boxes in annotations.items()
                           if pid in {row.patch_id for row in rows}}
        report = evaluate_detections(detections, annotations, threshold, rows)
        logger.info("评估完成 p_box=%.4f r_box=%.4f f1_box=%.4f", report["p_box"], report["r_box"], report["f1_box"])
        return report
