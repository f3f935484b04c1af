import importlib
import logging

import numpy as np

from errors import ConfigError, ShapeMismatchError
from .base import BaseExtractor

logger = logging.getLogger(__name__)


class ExternalExtractor(BaseExtractor):
    """
    外部特征提取器挂钩：target 为 "module:attr"，指向可调用对象 f(images N×H×W×3 uint8) → N×d，
    可用于接入预训练网络（例如 Inception 特征）。
    """
    name = "external"

    def __init__(self, target: str, feature_dim: int = 64, debug: bool = False):
        super().__init__(feature_dim, debug)
        module_name, _, attr = target.partition(":")
        if not module_name or not attr:
            raise ConfigError(f"外部提取器 target 必须是 module:attr 形式: {target!r}")
        try:
            module = importlib.import_module(module_name)
            self.function = getattr(module, attr)
        except (ImportError, AttributeError) as e:
            raise ConfigError(f"无法加载外部提取器 {target}: {e}")
        self.target = target
        self.name = f"external:{target}"

    @classmethod
    def from_config(cls, config: dict):
        return cls(target=config.get("target", ""), feature_dim=int(config.get("feature_dim", 64)),
                   debug=bool(config.get("debug", False)))

    def embed(self, images: np.ndarray) -> np.ndarray:
        features = np.asarray(self.function(images), dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(images):
            raise ShapeMismatchError(f"外部提取器输出形状错误: {features.shape}")
        return features
