import logging
import os
from typing import Optional

from maskextract.calibrate import calibrate_thresholds, mask_rules_from_config
from maskextract.masks import load_threshold_file
from patchio.imageio import read_rgb
from patchio.manifest import DatasetManifest
from patchio.patch import StainDomain
from transfer.bundle import TransferConfig
from transfer.trainer import train
from .calibrate import select_rows
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


def domain_thresholds(context: RunContext, domain: StainDomain, manifest: DatasetManifest, path: Optional[str]):
    """读取阈值文件；未给出时在训练清单上汇总标定"""
    if path:
        return load_threshold_file(path)
    section = context.config.section("maskextract")
    return calibrate_thresholds((read_rgb(row.image_path) for row in manifest), domain,
                                mask_rules_from_config(context.config, domain),
                                section["otsu_thresholds"], section["working_index"])


class TrainTransferStage(Stage):
    name = "train-transfer"

    def execute(self, context: RunContext, he: str, cd20: str, he_thresholds: Optional[str] = None,
                cd20_thresholds: Optional[str] = None, out: Optional[str] = None, resume: Optional[str] = None,
                lambda_mask: Optional[float] = None, max_steps: Optional[int] = None) -> dict:
        """
        训练带掩膜约束的 H&E ↔ CD20 循环一致转换模型
        :param he: H&E 清单 CSV
        :param cd20: CD20 清单 CSV
        :param he_thresholds: H&E 阈值 JSON，缺省时在训练集上标定
        :param cd20_thresholds: CD20 阈值 JSON，缺省时在训练集上标定
        :param out: 输出目录，默认 <run>/checkpoints/transfer
        :param resume: 从该检查点续训
        :param lambda_mask: 覆盖 [transfer] lambda_mask
        :param max_steps: 达到该全局步数后停止
        """
        config = TransferConfig.from_config(context.config)
        if lambda_mask is not None:
            config.lambda_mask = lambda_mask
        manifest_a = select_rows(DatasetManifest.read_csv(he), StainDomain.HE, "train")
        manifest_b = select_rows(DatasetManifest.read_csv(cd20), StainDomain.CD20, "train")
        thresholds = {
            StainDomain.HE: domain_thresholds(context, StainDomain.HE, manifest_a, he_thresholds),
            StainDomain.CD20: domain_thresholds(context, StainDomain.CD20, manifest_b, cd20_thresholds),
        }
        out = out or os.path.join(context.path("checkpoints"), "transfer")
        bundle = train(config, manifest_a, manifest_b, thresholds, out, resume, max_steps, context.progress)
        return {
            "checkpoint": os.path.join(out, "checkpoint.pt"),
            "loss_report": os.path.join(out, "loss_report.csv"),
            "steps": bundle.step,
        }
