"""
Reinhard 式染色归一化：在去相关的对立色空间中逐通道匹配均值与标准差。

对立色空间使用正交线性变换（亮度、黄蓝、红绿三轴），因此 RGB 上的常数平移
在每个通道上也只是常数平移，归一化后被完全消除。
统计量只在组织像素上计算：亮度通道上做 Otsu 二分，背景为较亮的一类。
"""
import json
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
from skimage.filters import threshold_otsu

from errors import VipastainError

STD_EPSILON = 1e-3
# 组织像素少于该数目时退回使用全部像素
MIN_TISSUE_PIXELS = 2

# 行向量为 l、alpha、beta 三个正交基
_OPPONENT = np.array([
    [1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0)],
    [1.0 / np.sqrt(6.0), 1.0 / np.sqrt(6.0), -2.0 / np.sqrt(6.0)],
    [1.0 / np.sqrt(2.0), -1.0 / np.sqrt(2.0), 0.0],
])

STAT_NAMES = ("l_mean", "alpha_mean", "beta_mean", "l_std", "alpha_std", "beta_std")


def rgb_to_opponent(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64) @ _OPPONENT.T


def opponent_to_rgb(values: np.ndarray) -> np.ndarray:
    return values @ _OPPONENT


@dataclass(frozen=True)
class StainStats:
    means: Tuple[float, float, float]
    stds: Tuple[float, float, float]

    def __post_init__(self):
        if any(s <= 0 for s in self.stds):
            raise ValueError(f"标准差必须为正: {self.stds}")

    def to_dict(self) -> dict:
        return dict(zip(STAT_NAMES, [float(v) for v in self.means + self.stds]))

    @classmethod
    def from_dict(cls, data: dict) -> "StainStats":
        values = [float(data[name]) for name in STAT_NAMES]
        return cls(means=tuple(values[:3]), stds=tuple(values[3:]))

    def save(self, path: str):
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        except OSError as e:
            raise VipastainError(f"写入染色统计失败: {path}: {e}")

    @classmethod
    def load(cls, path: str) -> "StainStats":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls.from_dict(json.load(f))
        except (OSError, ValueError, KeyError) as e:
            raise VipastainError(f"读取染色统计失败: {path}: {e}")


def tissue_values(image: np.ndarray) -> np.ndarray:
    """
    一幅图像中组织像素的对立色值（N×3）
    亮度比 Otsu 阈值暗的像素视为组织；图像亮度恒定或组织像素过少时返回全部像素
    """
    values = rgb_to_opponent(np.asarray(image).reshape(-1, 3))
    luminance = values[:, 0]
    if np.ptp(luminance) == 0:
        return values
    tissue = luminance < threshold_otsu(luminance)
    if tissue.sum() < MIN_TISSUE_PIXELS:
        return values
    return values[tissue]


def compute_stain_stats(images: Iterable[np.ndarray]) -> StainStats:
    """
    汇总所有图像的组织像素，计算对立色空间中的逐通道均值和标准差
    :param images: RGB 图像序列
    :return: StainStats（标准差下限为 STD_EPSILON）
    """
    values = [tissue_values(image) for image in images]
    if not values:
        raise ValueError("compute_stain_stats 需要至少一幅图像")
    values = np.concatenate(values, axis=0)
    means = values.mean(axis=0)
    stds = np.maximum(values.std(axis=0), STD_EPSILON)
    return StainStats(means=tuple(float(v) for v in means), stds=tuple(float(v) for v in stds))


def normalize_stain(image: np.ndarray, reference: StainStats) -> np.ndarray:
    """
    逐通道仿射变换，使图像统计量等于参考统计量，结果截断到 [0,255]
    :param image: HxWx3 uint8
    :param reference: 目标统计量
    :return: 归一化后的 uint8 图像
    """
    source = compute_stain_stats([image])
    values = rgb_to_opponent(image.reshape(-1, 3))
    src_mean, src_std = np.array(source.means), np.array(source.stds)
    ref_mean, ref_std = np.array(reference.means), np.array(reference.stds)
    mapped = (values - src_mean) / src_std * ref_std + ref_mean
    rgb = opponent_to_rgb(mapped).reshape(image.shape)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
