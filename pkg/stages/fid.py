import logging
from typing import Optional

from evalmetrics.extractors import extractor_from_config
from evalmetrics.fid import extract_features, frechet_distance
from patchio.imageio import read_image_set
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


class FidStage(Stage):
    name = "fid"

    def execute(self, context: RunContext, set_a: str, set_b: str, extractor: Optional[str] = None) -> dict:
        """
        两组图像之间的 Fréchet 距离
        :param set_a: 图像集 A（清单 CSV、含清单的目录或 PNG 目录）
        :param set_b: 图像集 B
        :param extractor: 特征提取器注册名，默认取 [evaluate] extractor
        """
        model = extractor_from_config(context.config, extractor)
        features_a = extract_features([image for _, image in read_image_set(set_a)], model)
        features_b = extract_features([image for _, image in read_image_set(set_b)], model)
        distance = frechet_distance(features_a, features_b)
        logger.info("FID=%.6f extractor=%s n_a=%d n_b=%d", distance, model.name,
                    features_a.features.shape[0], features_b.features.shape[0])
        return {"fid": distance, "extractor": model.name}
