"""
多阈值 Otsu：把灰度直方图划分为 k+1 类，使类间方差最大。

类划分为 {v ≤ t1}, {t1 < v ≤ t2}, …, {v > tk}。总均值与阈值无关，
因此最大化类间方差等价于最大化 Σ S_i² / W_i（W 为类内像素占比，S 为一阶矩）。
求解用累积零阶/一阶矩上的动态规划，复杂度 O(k·L²)。
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from errors import DegenerateHistogramError

logger = logging.getLogger(__name__)

LEVELS = 256
MAX_CLASSES_SPLIT = 7
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ChannelHistogram:
    bins: np.ndarray

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim != 1 or bins.size < 2:
            raise ValueError(f"直方图必须是长度 ≥ 2 的一维数组: shape={bins.shape}")
        if (bins < 0).any():
            raise ValueError("直方图计数不能为负")
        object.__setattr__(self, "bins", bins.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.bins.sum())

    @property
    def populated(self) -> int:
        return int(np.count_nonzero(self.bins))

    def __add__(self, other: "ChannelHistogram") -> "ChannelHistogram":
        if self.bins.shape != other.bins.shape:
            raise ValueError("只能合并长度相同的直方图")
        return ChannelHistogram(self.bins + other.bins)

    @classmethod
    def from_channel(cls, channel: np.ndarray) -> "ChannelHistogram":
        """8 位单通道图像的 256 级直方图"""
        values = np.asarray(channel)
        if values.size and (values.min() < 0 or values.max() > LEVELS - 1):
            raise ValueError("通道取值必须在 [0,255] 内")
        return cls(np.bincount(values.astype(np.int64).ravel(), minlength=LEVELS))

    @classmethod
    def pooled(cls, channels: Iterable[np.ndarray]) -> "ChannelHistogram":
        total = np.zeros(LEVELS, dtype=np.int64)
        for channel in channels:
            total += cls.from_channel(channel).bins
        return cls(total)


def _as_bins(hist: Union[ChannelHistogram, Sequence[int], np.ndarray]) -> np.ndarray:
    if isinstance(hist, ChannelHistogram):
        return hist.bins
    return ChannelHistogram(np.asarray(hist)).bins


def _class_scores(bins: np.ndarray) -> np.ndarray:
    """F[s, t] = S(s..t)² / W(s..t)，空类记 0，t < s 记 -inf"""
    p = bins.astype(np.float64) / bins.sum()
    levels = np.arange(p.size, dtype=np.float64)
    c0 = np.concatenate([[0.0], np.cumsum(p)])
    c1 = np.concatenate([[0.0], np.cumsum(p * levels)])
    w = c0[None, 1:] - c0[:-1, None]
    s = c1[None, 1:] - c1[:-1, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(w > 0, s * s / np.where(w > 0, w, 1.0), 0.0)
    upper = np.triu(np.ones_like(scores, dtype=bool))
    return np.where(upper, scores, -np.inf)


def between_class_variance(hist, thresholds: Sequence[int]) -> float:
    """
    给定阈值下 k+1 类的类间方差 Σ W_i (μ_i − μ)²
    :param hist: ChannelHistogram 或计数数组
    :param thresholds: 严格递增的阈值
    """
    bins = _as_bins(hist)
    p = bins.astype(np.float64) / bins.sum()
    levels = np.arange(p.size, dtype=np.float64)
    mean = float((p * levels).sum())
    edges = [-1] + list(thresholds) + [p.size - 1]
    variance = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        w = p[lo + 1:hi + 1].sum()
        if w > 0:
            mu = (p[lo + 1:hi + 1] * levels[lo + 1:hi + 1]).sum() / w
            variance += w * (mu - mean) ** 2
    return float(variance)


def multi_otsu(hist, k: int = MAX_CLASSES_SPLIT) -> Tuple[int, ...]:
    """
    多阈值 Otsu。最优解不唯一时取字典序最小的阈值元组
    :param hist: ChannelHistogram 或任意长度 L ≥ 2 的计数数组
    :param k: 阈值个数，1 ≤ k ≤ 7
    :return: k 个严格递增的阈值，t_k ≤ L−2
    """
    if not 1 <= k <= MAX_CLASSES_SPLIT:
        raise ValueError(f"k 必须在 [1,{MAX_CLASSES_SPLIT}] 内: {k}")
    bins = _as_bins(hist)
    populated = int(np.count_nonzero(bins))
    if populated < k + 1:
        raise DegenerateHistogramError(f"直方图只有 {populated} 个非空灰度级，无法划分 {k + 1} 类")

    levels = bins.size
    scores = _class_scores(bins)

    # best[j][s]：把 [s, L-1] 划分为 j 类的最大得分
    best = [None, scores[:, levels - 1].copy()]
    for j in range(2, k + 2):
        tail = np.full(levels, -np.inf)
        tail[:levels - 1] = best[j - 1][1:]
        # 第一类为 [s, t]，t ≤ L-j，剩余 j-1 类至少各占一个灰度级
        candidates = scores + tail[None, :]
        candidates[:, levels - j + 1:] = -np.inf
        best.append(candidates.max(axis=1))

    optimum = float(best[k + 1][0])
    tolerance = TIE_TOLERANCE * max(1.0, abs(optimum))

    # 从左到右贪心地取能达到最优值的最小阈值
    thresholds = []
    start, acc = 0, 0.0
    for j in range(k + 1, 1, -1):
        for t in range(start, levels - j + 1):
            if acc + scores[start, t] + best[j - 1][t + 1] >= optimum - tolerance:
                thresholds.append(t)
                acc += scores[start, t]
                start = t + 1
                break
    logger.debug("multi_otsu k=%d thresholds=%s", k, thresholds)
    return tuple(thresholds)
