"""
单阶段网格检测器：步长 8 与 16 两个检测尺度，每个网格单元一个锚框，
输出目标置信度与框回归 (tx, ty, tw, th)。
"""
import logging
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import ConfigError, VipastainError

logger = logging.getLogger(__name__)

STRIDES = (8, 16)
MODES = ("he", "cd20", "fused")
MAX_LOG_SCALE = 4.0


@dataclass
class DetectorConfig:
    mode: str = "he"
    epochs: int = 40
    batch_size: int = 8
    learning_rate: float = 1e-3
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    base_channels: int = 16
    anchor_sizes: Tuple[int, int] = (16, 32)
    mask_head: bool = False
    seed: int = 7
    device: str = "cpu"

    @property
    def input_channels(self) -> int:
        return 6 if self.mode == "fused" else 3

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"检测模式必须是 {MODES} 之一: {self.mode}")
        if self.epochs < 1:
            raise ConfigError(f"epochs 必须 ≥ 1: {self.epochs}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ConfigError(f"score_threshold 必须在 [0,1] 内: {self.score_threshold}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError(f"nms_iou 必须在 (0,1) 内: {self.nms_iou}")
        if len(self.anchor_sizes) != len(STRIDES) or min(self.anchor_sizes) <= 0:
            raise ConfigError(f"anchor_sizes 需要 {len(STRIDES)} 个正整数: {self.anchor_sizes}")

    @classmethod
    def from_config(cls, config, mode: str) -> "DetectorConfig":
        section = config.section("detect")
        anchors = tuple(int(v) for v in str(section.pop("anchor_sizes")).split(","))
        return cls(
            mode=mode,
            anchor_sizes=anchors,
            seed=config.get("run", "seed"),
            device=config.get("run", "device"),
            **{key: section[key] for key in section if key in cls.__dataclass_fields__},
        )


def _conv(in_channels: int, out_channels: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, 3, stride=stride, padding=1),
        nn.BatchNorm2d(out_channels),
        nn.LeakyReLU(0.1, inplace=True),
    )


class GridDetector(nn.Module):
    def __init__(self, input_channels: int = 3, base_channels: int = 16, mask_head: bool = False):
        super().__init__()
        if input_channels not in (3, 6):
            raise ValueError(f"input_channels 必须是 3 或 6: {input_channels}")
        c = base_channels
        self.input_channels = input_channels
        self.stem = nn.Sequential(
            _conv(input_channels, c, 2),
            _conv(c, c * 2, 2),
            _conv(c * 2, c * 4, 2),
            _conv(c * 4, c * 4, 1),
        )
        self.down = nn.Sequential(_conv(c * 4, c * 8, 2), _conv(c * 8, c * 8, 1))
        self.heads = nn.ModuleList([nn.Conv2d(c * 4, 5, 1), nn.Conv2d(c * 8, 5, 1)])
        self.mask = nn.Conv2d(c * 4, 1, 1) if mask_head else None

    def forward(self, x):
        """
        :return: ([每个尺度 N×5×h×w 的原始输出], 掩膜 logits N×1×H×W 或 None)
        """
        f8 = self.stem(x)
        f16 = self.down(f8)
        outputs = [self.heads[0](f8), self.heads[1](f16)]
        mask_logits = None
        if self.mask is not None:
            mask_logits = F.interpolate(self.mask(f8), size=x.shape[-2:], mode="bilinear", align_corners=False)
        return outputs, mask_logits


def decode_scale(raw: torch.Tensor, stride: int, anchor: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    把一个尺度的原始输出解码为 (scores N×h×w, boxes N×h×w×4)，框为 (x, y, w, h) 像素坐标
    """
    n, _, h, w = raw.shape
    gy, gx = torch.meshgrid(torch.arange(h, device=raw.device), torch.arange(w, device=raw.device), indexing="ij")
    scores = torch.sigmoid(raw[:, 0])
    cx = (gx + torch.sigmoid(raw[:, 1])) * stride
    cy = (gy + torch.sigmoid(raw[:, 2])) * stride
    bw = anchor * torch.exp(raw[:, 3].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE))
    bh = anchor * torch.exp(raw[:, 4].clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE))
    boxes = torch.stack([cx - bw / 2, cy - bh / 2, bw, bh], dim=-1)
    return scores, boxes


@dataclass
class DetectorModel:
    config: DetectorConfig
    network: GridDetector

    @property
    def input_channels(self) -> int:
        return self.network.input_channels

    @property
    def score_threshold(self) -> float:
        return self.config.score_threshold

    @property
    def device(self) -> torch.device:
        return next(self.network.parameters()).device

    @classmethod
    def build(cls, config: DetectorConfig) -> "DetectorModel":
        config.validate()
        torch.manual_seed(config.seed)
        network = GridDetector(config.input_channels, config.base_channels, config.mask_head)
        return cls(config=config, network=network.to(torch.device(config.device)))

    def save(self, path: str):
        try:
            torch.save({"config": asdict(self.config), "network": self.network.state_dict()}, path)
        except OSError as e:
            raise VipastainError(f"写入检测模型失败: {path}: {e}")
        logger.info("检测模型已保存 path=%s mode=%s", path, self.config.mode)

    @classmethod
    def load(cls, path: str, device: Optional[str] = None) -> "DetectorModel":
        try:
            archive = torch.load(path, map_location="cpu", weights_only=False)
        except (OSError, RuntimeError) as e:
            raise VipastainError(f"读取检测模型失败: {path}: {e}")
        data = archive["config"]
        data["anchor_sizes"] = tuple(data["anchor_sizes"])
        config = DetectorConfig(**data)
        if device:
            config.device = device
        model = cls.build(config)
        model.network.load_state_dict(archive["network"])
        model.network.eval()
        return model

    def anchors(self) -> List[Tuple[int, int]]:
        """[(stride, anchor_size), …]"""
        return list(zip(STRIDES, self.config.anchor_sizes))
