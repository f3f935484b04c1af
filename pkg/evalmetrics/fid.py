"""
Fréchet 距离：两组特征的高斯拟合之间的距离 ‖μa−μb‖² + Tr(Σa + Σb − 2(ΣaΣb)^{1/2})。
矩阵平方根通过对称矩阵 √Σa·Σb·√Σa 的特征分解求迹，避免非对称 sqrtm。
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from errors import NonFiniteError, ShapeMismatchError, VipastainError

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FeatureSet:
    features: np.ndarray
    extractor: str = "unknown"

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features[:, None]
        if features.ndim != 2:
            raise ShapeMismatchError(f"特征矩阵必须是 n×d: shape={features.shape}")
        if features.shape[0] < 2:
            raise ValueError(f"估计协方差至少需要 2 个样本: n={features.shape[0]}")
        if not np.isfinite(features).all():
            raise NonFiniteError("特征中含有非有限值")
        object.__setattr__(self, "features", features)

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def statistics(self):
        mean = self.features.mean(axis=0)
        cov = np.atleast_2d(np.cov(self.features, rowvar=False, ddof=1))
        return mean, cov


def _psd_eigenvalues(matrix: np.ndarray, what: str) -> np.ndarray:
    values = linalg.eigh((matrix + matrix.T) / 2.0, eigvals_only=True)
    scale = max(1.0, float(np.abs(values).max()))
    if values.min() < -EIGEN_TOLERANCE * scale:
        raise VipastainError(f"{what} 存在超出容差的负特征值: {values.min():.3e}")
    return np.clip(values, 0.0, None)


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    values, vectors = linalg.eigh((matrix + matrix.T) / 2.0)
    scale = max(1.0, float(np.abs(values).max()))
    if values.min() < -EIGEN_TOLERANCE * scale:
        raise VipastainError(f"协方差存在超出容差的负特征值: {values.min():.3e}")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_distance(fa: FeatureSet, fb: FeatureSet) -> float:
    """
    :param fa: 特征集 A
    :param fb: 特征集 B（维度需与 A 相同）
    :return: 非负的 Fréchet 距离
    """
    if fa.dimension != fb.dimension:
        raise ShapeMismatchError(f"特征维度不一致: {fa.dimension} vs {fb.dimension}")
    mu_a, cov_a = fa.statistics()
    mu_b, cov_b = fb.statistics()
    root_a = _sqrtm_psd(cov_a)
    product = root_a @ cov_b @ root_a
    trace_sqrt = float(np.sqrt(_psd_eigenvalues(product, "√Σa·Σb·√Σa")).sum())
    diff = mu_a - mu_b
    distance = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    if not np.isfinite(distance):
        raise NonFiniteError(f"Fréchet 距离非有限: {distance}")
    return max(0.0, distance)


def extract_features(patches: Sequence[np.ndarray], extractor) -> FeatureSet:
    """
    :param patches: uint8 RGB 图块序列（n ≥ 2，尺寸一致）
    :param extractor: BaseExtractor 实例
    """
    if len(patches) < 2:
        raise ValueError(f"提取特征至少需要 2 个图块: n={len(patches)}")
    images = np.stack([np.asarray(p) for p in patches])
    features = extractor.embed(images)
    if features.shape[0] != len(patches):
        raise ShapeMismatchError(f"特征行数 {features.shape[0]} 与图块数 {len(patches)} 不符")
    logger.debug("特征提取完成 extractor=%s n=%d d=%d", extractor.name, *features.shape)
    return FeatureSet(features=features, extractor=extractor.name)
