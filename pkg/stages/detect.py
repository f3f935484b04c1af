import logging
from typing import Optional

from detect.boxes import merge_detections, write_detections
from detect.inference import detect_manifest
from detect.model import DetectorModel
from patchio.manifest import DatasetManifest
from .stage import RunContext, Stage
from .train_detector import split_rows

logger = logging.getLogger(__name__)


class DetectStage(Stage):
    name = "detect"

    def execute(self, context: RunContext, model: str, manifest: str, out: Optional[str] = None,
                split: Optional[str] = "val", merge_with: Optional[str] = None) -> dict:
        """
        在清单图块上运行检测，结果写为 JSON lines
        :param model: 检测模型
        :param manifest: 数据集清单 CSV
        :param out: 输出路径，默认 <run>/dets/<mode>.jsonl
        :param split: 检测使用的 split
        :param merge_with: 第二个检测模型，给出时两者结果并集后做 NMS（后融合）
        """
        device = context.config.get("run", "device")
        rows = split_rows(DatasetManifest.read_csv(manifest), split)
        primary = DetectorModel.load(model, device)
        detections = detect_manifest(primary, rows)
        label = primary.config.mode
        if merge_with:
            secondary = DetectorModel.load(merge_with, device)
            detections = merge_detections(detections, detect_manifest(secondary, rows), primary.config.nms_iou)
            label = f"{label}+{secondary.config.mode}"
        out = out or context.path("dets", f"{label}.jsonl")
        write_detections(out, detections)
        return {"detections": out, "count": len(detections), "mode": label}
