import logging

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .base import BaseExtractor

logger = logging.getLogger(__name__)


class RandomConvExtractor(BaseExtractor):
    """
    固定种子的随机权重卷积嵌入器。三层步长 2 卷积后做全局均值与标准差池化，
    再经固定随机投影到 feature_dim 维。只用于相对比较，不依赖预训练权重。
    """
    name = "random-conv"

    def __init__(self, feature_dim: int = 64, seed: int = 0, debug: bool = False):
        super().__init__(feature_dim, debug)
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList([nn.Conv2d(3, 16, 3, stride=2, padding=1),
                                    nn.Conv2d(16, 32, 3, stride=2, padding=1),
                                    nn.Conv2d(32, 64, 3, stride=2, padding=1)]).double()
        with torch.no_grad():
            for conv in self.convs:
                fan_in = conv.in_channels * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator, dtype=torch.float64)
                                  * np.sqrt(2.0 / fan_in))
                conv.bias.zero_()
        self.projection = torch.randn(128, feature_dim, generator=generator, dtype=torch.float64) / np.sqrt(128.0)

    @classmethod
    def from_config(cls, config: dict):
        return cls(feature_dim=int(config.get("feature_dim", 64)), seed=int(config.get("seed", 0)),
                   debug=bool(config.get("debug", False)))

    def embed(self, images: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.asarray(images, dtype=np.float64)).permute(0, 3, 1, 2) / 127.5 - 1.0
        with torch.no_grad():
            for conv in self.convs:
                x = F.leaky_relu(conv(x), 0.2)
            pooled = torch.cat([x.mean(dim=(2, 3)), x.std(dim=(2, 3), unbiased=False)], dim=1)
            features = pooled @ self.projection
        if self.debug:
            logger.debug("random-conv embed n=%d d=%d", features.shape[0], features.shape[1])
        return features.numpy()
