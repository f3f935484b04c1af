"""
从单通道阈值化提取组织掩膜：细胞核 m_n、红细胞 m_r、细胞核+红细胞 m_{n+r}、IHC 阳性 m_p。
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np
import torch
from scipy import ndimage
from scipy.special import expit

from errors import DomainMismatchError, ShapeMismatchError, VipastainError
from patchio.patch import Patch, StainDomain

logger = logging.getLogger(__name__)

CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}
DEFAULT_WORKING_INDEX = 5

# 每个染色域需要提取的掩膜种类
DOMAIN_KINDS = {
    StainDomain.HE: ("nucleus", "nucleus_plus_rbc"),
    StainDomain.CD20: ("nucleus", "positive"),
}

MASK_SUFFIXES = {
    "nucleus": "_mn",
    "rbc": "_mr",
    "nucleus_plus_rbc": "_mnr",
    "positive": "_mp",
}

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class Polarity(str, Enum):
    KEEP_BELOW = "keep-below"
    KEEP_ABOVE = "keep-above"


def default_min_component_px(patch_size: int) -> int:
    """512 像素图块下为 16，按面积比例缩放，下限 2"""
    return max(2, int(round(16 * (patch_size / 512.0) ** 2)))


@dataclass(frozen=True)
class ThresholdSet:
    domain: StainDomain
    channel: str
    thresholds: Tuple[int, ...]
    working_index: int = DEFAULT_WORKING_INDEX
    polarity: Polarity = Polarity.KEEP_BELOW

    def __post_init__(self):
        object.__setattr__(self, "domain", StainDomain(self.domain))
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        object.__setattr__(self, "thresholds", tuple(int(t) for t in self.thresholds))
        if self.channel not in CHANNEL_INDEX:
            raise ValueError(f"通道必须是 R/G/B: {self.channel}")
        values = self.thresholds
        if not 1 <= len(values) <= 7:
            raise ValueError(f"阈值个数必须在 [1,7] 内: {values}")
        if any(t < 0 or t > 255 for t in values) or any(a >= b for a, b in zip(values, values[1:])):
            raise ValueError(f"阈值必须严格递增且在 [0,255] 内: {values}")
        if not 0 <= self.working_index < len(values):
            raise ValueError(f"working_index 越界: {self.working_index}")

    @property
    def working_threshold(self) -> int:
        return self.thresholds[self.working_index]

    def flipped(self) -> "ThresholdSet":
        polarity = Polarity.KEEP_ABOVE if self.polarity == Polarity.KEEP_BELOW else Polarity.KEEP_BELOW
        return ThresholdSet(self.domain, self.channel, self.thresholds, self.working_index, polarity)

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.value,
            "channel": self.channel,
            "thresholds": list(self.thresholds),
            "working_index": self.working_index,
            "polarity": self.polarity.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdSet":
        return cls(
            domain=data["domain"],
            channel=data["channel"],
            thresholds=tuple(data["thresholds"]),
            working_index=data.get("working_index", DEFAULT_WORKING_INDEX),
            polarity=data.get("polarity", Polarity.KEEP_BELOW.value),
        )


def save_threshold_file(path: str, threshold_sets: Dict[str, ThresholdSet]):
    """写出 {kind: ThresholdSet} 到 JSON 文件"""
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump({kind: ts.to_dict() for kind, ts in sorted(threshold_sets.items())}, f, indent=2)
    except OSError as e:
        raise VipastainError(f"写入阈值文件失败: {path}: {e}")


def load_threshold_file(path: str) -> Dict[str, ThresholdSet]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return {kind: ThresholdSet.from_dict(item) for kind, item in data.items()}
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise VipastainError(f"读取阈值文件失败: {path}: {e}")


@dataclass
class TissueMaskSet:
    nucleus: Optional[np.ndarray] = None
    rbc: Optional[np.ndarray] = None
    nucleus_plus_rbc: Optional[np.ndarray] = None
    positive: Optional[np.ndarray] = None
    sources: Dict[str, ThresholdSet] = field(default_factory=dict)

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        """按固定顺序返回非空的 (kind, mask)"""
        for kind in MASK_SUFFIXES:
            mask = getattr(self, kind)
            if mask is not None:
                yield kind, mask


def split_channels(patch: Union[Patch, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    拆分 RGB 图块为 (x_r, x_g, x_b)
    :param patch: Patch 或 HxWx3 数组
    """
    image = patch.image if isinstance(patch, Patch) else np.asarray(patch)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"需要 HxWx3 的 RGB 图像: shape={image.shape}")
    return image[..., 0].copy(), image[..., 1].copy(), image[..., 2].copy()


def extract_region(channel: np.ndarray, threshold_set: ThresholdSet) -> np.ndarray:
    t = threshold_set.working_threshold
    if threshold_set.polarity == Polarity.KEEP_BELOW:
        return np.asarray(channel) <= t
    return np.asarray(channel) > t


def clean_mask(mask: np.ndarray, min_component_px: int, fill_holes: bool = True) -> np.ndarray:
    """
    去除小于 min_component_px 的 8 连通前景，再填充不接触边界的 4 连通背景
    :param mask: 二值掩膜
    :param min_component_px: 最小连通域像素数，≥ 0
    :param fill_holes: 是否填洞
    """
    if min_component_px < 0:
        raise ValueError(f"min_component_px 不能为负: {min_component_px}")
    cleaned = np.asarray(mask, dtype=bool).copy()

    if min_component_px > 0 and cleaned.any():
        labels, count = ndimage.label(cleaned, structure=_EIGHT_CONNECTED)
        sizes = np.bincount(labels.ravel(), minlength=count + 1)
        small = sizes < min_component_px
        small[0] = False
        cleaned[small[labels]] = False

    if fill_holes:
        # binary_fill_holes 默认十字结构元，背景按 4 连通从边界泛洪
        cleaned = ndimage.binary_fill_holes(cleaned)
    return cleaned


def soft_mask(channel, threshold: float, temperature: float, polarity: Polarity = Polarity.KEEP_BELOW):
    """
    阈值化的可微松弛：keep-below 为 sigmoid((t − x)/T)，keep-above 取镜像
    :param channel: numpy 数组或 torch 张量，取值尺度与阈值一致（0..255）
    :param threshold: 工作阈值
    :param temperature: 温度 T > 0，T → 0 时趋近硬掩膜
    """
    if temperature <= 0:
        raise ValueError(f"temperature 必须为正: {temperature}")
    sign = 1.0 if Polarity(polarity) == Polarity.KEEP_BELOW else -1.0
    if isinstance(channel, torch.Tensor):
        return torch.sigmoid(sign * (threshold - channel) / temperature)
    return expit(sign * (threshold - np.asarray(channel, dtype=np.float64)) / temperature)


def _check_domain(patch, threshold_set: ThresholdSet, domain: StainDomain):
    if threshold_set.domain != domain:
        raise DomainMismatchError(f"阈值集属于 {threshold_set.domain.value}，期望 {domain.value}")
    if isinstance(patch, Patch) and StainDomain(patch.stain).base != domain:
        raise DomainMismatchError(f"图块染色域 {patch.stain} 与 {domain.value} 不符")


def _region_or_empty(channels, threshold_set: Optional[ThresholdSet], kind: str,
                     min_component_px: int, fill_holes: bool) -> np.ndarray:
    if threshold_set is None:
        logger.warning("缺少 %s 阈值（直方图退化），输出空掩膜", kind)
        return np.zeros(channels[0].shape, dtype=bool)
    channel = channels[CHANNEL_INDEX[threshold_set.channel]]
    return clean_mask(extract_region(channel, threshold_set), min_component_px, fill_holes)


def extract_he_masks(patch, thresholds_blue: Optional[ThresholdSet], thresholds_red: Optional[ThresholdSet],
                     min_component_px: Optional[int] = None, fill_holes: bool = True) -> TissueMaskSet:
    """
    H&E 掩膜：m_n 来自蓝通道，m_{n+r} 来自红通道，m_r = m_{n+r} XOR m_n
    :param patch: H&E（或虚拟 H&E）图块
    :param thresholds_blue: 细胞核阈值集；None 表示退化，输出空掩膜并告警
    :param thresholds_red: 细胞核+红细胞阈值集
    :param min_component_px: 最小连通域，默认按图块尺寸推算
    :param fill_holes: 是否填洞
    """
    channels = split_channels(patch)
    for ts in (thresholds_blue, thresholds_red):
        if ts is not None:
            _check_domain(patch, ts, StainDomain.HE)
    if min_component_px is None:
        min_component_px = default_min_component_px(channels[0].shape[0])

    nucleus = _region_or_empty(channels, thresholds_blue, "nucleus", min_component_px, fill_holes)
    nucleus_plus_rbc = _region_or_empty(channels, thresholds_red, "nucleus_plus_rbc", min_component_px, fill_holes)
    sources = {kind: ts for kind, ts in (("nucleus", thresholds_blue), ("nucleus_plus_rbc", thresholds_red))
               if ts is not None}
    return TissueMaskSet(
        nucleus=nucleus,
        rbc=np.logical_xor(nucleus_plus_rbc, nucleus),
        nucleus_plus_rbc=nucleus_plus_rbc,
        sources=sources,
    )


def extract_cd20_masks(patch, thresholds_blue: Optional[ThresholdSet], thresholds_green: Optional[ThresholdSet],
                       min_component_px: Optional[int] = None, fill_holes: bool = True) -> TissueMaskSet:
    """
    CD20 掩膜：m_n 来自蓝通道，m_p 来自绿通道
    """
    channels = split_channels(patch)
    for ts in (thresholds_blue, thresholds_green):
        if ts is not None:
            _check_domain(patch, ts, StainDomain.CD20)
    if min_component_px is None:
        min_component_px = default_min_component_px(channels[0].shape[0])

    sources = {kind: ts for kind, ts in (("nucleus", thresholds_blue), ("positive", thresholds_green))
               if ts is not None}
    return TissueMaskSet(
        nucleus=_region_or_empty(channels, thresholds_blue, "nucleus", min_component_px, fill_holes),
        positive=_region_or_empty(channels, thresholds_green, "positive", min_component_px, fill_holes),
        sources=sources,
    )


def extract_masks(patch, domain: StainDomain, threshold_sets: Dict[str, Optional[ThresholdSet]],
                  min_component_px: Optional[int] = None, fill_holes: bool = True) -> TissueMaskSet:
    """按染色域分派到 extract_he_masks / extract_cd20_masks"""
    domain = StainDomain(domain).base
    if domain == StainDomain.HE:
        return extract_he_masks(patch, threshold_sets.get("nucleus"), threshold_sets.get("nucleus_plus_rbc"),
                                min_component_px, fill_holes)
    return extract_cd20_masks(patch, threshold_sets.get("nucleus"), threshold_sets.get("positive"),
                              min_component_px, fill_holes)
