import logging
import os
from typing import Optional

from detect.model import DetectorConfig
from detect.trainer import train_detector
from patchio.manifest import DatasetManifest
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


def split_rows(manifest: DatasetManifest, split: Optional[str]) -> DatasetManifest:
    if split and len(manifest.filter(split=split)):
        return manifest.filter(split=split)
    return manifest


class TrainDetectorStage(Stage):
    name = "train-detector"

    def execute(self, context: RunContext, mode: str, manifest: str, out: Optional[str] = None,
                split: Optional[str] = "train") -> dict:
        """
        训练 TLS 检测器：he 用 H&E，cd20 用虚拟 CD20，fused 用六通道早融合
        :param mode: he | cd20 | fused
        :param manifest: 同时包含 H&E 与虚拟 CD20 行的清单（he 模式只需 H&E）
        :param out: 输出目录，默认 <run>/checkpoints/detector-<mode>
        :param split: 训练使用的 split
        """
        config = DetectorConfig.from_config(context.config, mode)
        rows = split_rows(DatasetManifest.read_csv(manifest), split)
        out = out or os.path.join(context.path("checkpoints"), f"detector-{mode}")
        train_detector(config, rows, out, context.progress)
        return {"model": os.path.join(out, "detector.pt"), "curve": os.path.join(out, "training_curve.csv")}
