import logging
import os
from typing import Optional

from patchio.dataset import dataset_summary, split_dataset
from patchio.imageio import read_rgb
from patchio.manifest import DatasetManifest
from patchio.patch import StainDomain
from patchio.stain import compute_stain_stats
from synthdata.corpus import generate_corpus
from synthdata.scene import SceneSpec
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


class GenCorpusStage(Stage):
    name = "gen-corpus"

    def execute(self, context: RunContext, stain: str = "he", count: Optional[int] = None, start: int = 0,
                split_ratio: Optional[float] = None, out: Optional[str] = None) -> dict:
        """
        生成带真值掩膜与 TLS 标注的伪组织学语料，并按切片划分 train / val
        :param stain: 染色域 he 或 cd20
        :param count: 图块数量，默认取 [corpus] count + val_count
        :param start: 场景起始序号
        :param split_ratio: 训练集比例，默认取 [patchio] split_ratio
        :param out: 输出目录，默认 <run>/patches/<stain>
        """
        config = context.config
        corpus = config.section("corpus")
        domain = StainDomain(stain)
        count = count if count is not None else corpus["count"] + corpus["val_count"]
        out = out or os.path.join(context.path("patches"), domain.value)

        spec = SceneSpec.from_config(corpus, seed=context.seed)
        manifest = generate_corpus(spec, count, out, domain, start=start, progress=context.progress)
        if len(manifest.slide_ids) >= 2:
            ratio = split_ratio if split_ratio is not None else config.get("patchio", "split_ratio")
            train, val = split_dataset(manifest, ratio, context.seed)
            manifest = DatasetManifest(train.rows + val.rows)
        manifest_path = os.path.join(out, "manifest.csv")
        manifest.write_csv(manifest_path)

        stats = compute_stain_stats(read_rgb(row.image_path) for row in manifest)
        stats.save(os.path.join(out, "stain_stats.json"))
        summary = dataset_summary(manifest)
        logger.info("语料完成 stain=%s count=%d summary=%s", domain.value, count, summary)
        return {"manifest": manifest_path, "summary": summary, "stain_stats": stats.to_dict()}
