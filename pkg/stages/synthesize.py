import logging
import os
from typing import Optional

from patchio.manifest import DatasetManifest
from patchio.tiling import SLIDE_INFO_FILE, find_slide_info
from transfer.bundle import TranslatorBundle
from transfer.trainer import synthesize_manifest
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


class SynthesizeStage(Stage):
    name = "synthesize"
    flag_aliases = {"source": "--in"}

    def execute(self, context: RunContext, checkpoint: str, source: str, out: Optional[str] = None,
                direction: str = "a2b") -> dict:
        """
        用训练好的转换模型生成虚拟染色图块，文件名保持原图块编号
        :param checkpoint: 转换模型检查点
        :param source: 输入清单 CSV 或含 manifest.csv 的目录
        :param out: 输出目录，默认 <run>/patches/virtual-<direction>
        :param direction: a2b（H&E → 虚拟 CD20）或 b2a
        """
        bundle = TranslatorBundle.load(checkpoint, context.config.get("run", "device"))
        path = os.path.join(source, "manifest.csv") if os.path.isdir(source) else source
        out = out or os.path.join(context.path("patches"), f"virtual-{direction}")
        virtual = synthesize_manifest(bundle, DatasetManifest.read_csv(path), out, direction)
        info = find_slide_info(path)
        if info is not None:
            info.save(os.path.join(out, SLIDE_INFO_FILE))
        return {"manifest": os.path.join(out, "manifest.csv"), "patches": len(virtual)}
