from abc import ABC, abstractmethod

import numpy as np


class BaseExtractor(ABC):
    name = "base"

    def __init__(self, feature_dim: int = 64, debug: bool = False):
        """
        初始化特征提取器基类
        :param feature_dim: 输出特征维度
        :param debug: 是否输出调试日志
        """
        if feature_dim < 1:
            raise ValueError(f"feature_dim 必须为正: {feature_dim}")
        self.feature_dim = feature_dim
        self.debug = debug

    @abstractmethod
    def embed(self, images: np.ndarray) -> np.ndarray:
        """
        把一批图像映射为特征，所有提取器必须实现此方法
        :param images: N×H×W×3 uint8
        :return: N×feature_dim float64，对同一输入必须确定
        """

    @classmethod
    def from_config(cls, config: dict):
        """
        根据配置创建实例
        默认实现，子类可以根据需要重写
        """
        return cls(feature_dim=int(config.get("feature_dim", 64)), debug=bool(config.get("debug", False)))
