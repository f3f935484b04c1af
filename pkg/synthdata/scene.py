from dataclasses import dataclass, field, fields
from typing import List, Tuple

import numpy as np

RGB = Tuple[int, int, int]
Box = Tuple[int, int, int, int]

MIN_CANVAS = 64
MIN_TLS_DENSITY = 20


@dataclass(frozen=True)
class Palette:
    """
    伪染色调色板。颜色按通道可分性选取而非照片级真实：
    H&E 背景与红细胞在蓝通道饱和，CD20 细胞核与背景在绿通道饱和，
    目标组织从核心到边缘做径向渐变，覆盖较宽的灰度范围。
    """
    he_background: RGB = (255, 190, 255)
    hematoxylin_core: RGB = (30, 10, 20)
    hematoxylin_rim: RGB = (200, 130, 200)
    red_blood_cell: RGB = (120, 20, 255)
    cd20_background: RGB = (235, 255, 255)
    counterstain_core: RGB = (20, 255, 30)
    counterstain_rim: RGB = (190, 255, 200)
    dab_core: RGB = (90, 5, 10)
    dab_rim: RGB = (230, 200, 150)

    def colors(self) -> List[RGB]:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass(frozen=True)
class SceneSpec:
    canvas_size: int = 64
    nucleus_count: int = 14
    nucleus_radius_range: Tuple[int, int] = (2, 4)
    rbc_blob_count: int = 3
    tls_cluster_count: int = 1
    tls_cluster_density: int = 24
    tls_cluster_radius: int = 14
    palette: Palette = field(default_factory=Palette)
    noise_sigma: float = 6.0
    seed: int = 0

    def validate(self):
        if self.canvas_size < MIN_CANVAS:
            raise ValueError(f"canvas_size 必须 ≥ {MIN_CANVAS}: {self.canvas_size}")
        low, high = self.nucleus_radius_range
        if not 1 <= low <= high:
            raise ValueError(f"nucleus_radius_range 无效: {self.nucleus_radius_range}")
        for name in ("nucleus_count", "rbc_blob_count", "tls_cluster_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} 不能为负: {getattr(self, name)}")
        if self.tls_cluster_count and self.tls_cluster_density < MIN_TLS_DENSITY:
            raise ValueError(f"TLS 簇至少包含 {MIN_TLS_DENSITY} 个细胞核: {self.tls_cluster_density}")
        if self.tls_cluster_count and self.tls_cluster_radius <= high:
            raise ValueError(f"tls_cluster_radius 必须大于细胞核最大半径: {self.tls_cluster_radius}")
        if not 0 <= self.noise_sigma <= 255:
            raise ValueError(f"noise_sigma 必须在 [0,255] 内: {self.noise_sigma}")
        colors = self.palette.colors()
        if len(set(colors)) != len(colors):
            raise ValueError("调色板颜色必须互不相同")

    def with_seed(self, seed: int) -> "SceneSpec":
        return SceneSpec(
            canvas_size=self.canvas_size,
            nucleus_count=self.nucleus_count,
            nucleus_radius_range=self.nucleus_radius_range,
            rbc_blob_count=self.rbc_blob_count,
            tls_cluster_count=self.tls_cluster_count,
            tls_cluster_density=self.tls_cluster_density,
            tls_cluster_radius=self.tls_cluster_radius,
            palette=self.palette,
            noise_sigma=self.noise_sigma,
            seed=seed,
        )

    @classmethod
    def from_config(cls, config: dict, seed: int = 0) -> "SceneSpec":
        """
        从 [corpus] 配置节构造场景
        :param config: PipelineConfig.section("corpus")
        :param seed: 场景种子
        """
        return cls(
            canvas_size=config.get("canvas_size", 64),
            nucleus_count=config.get("nucleus_count", 14),
            nucleus_radius_range=(config.get("nucleus_radius_min", 2), config.get("nucleus_radius_max", 4)),
            rbc_blob_count=config.get("rbc_blob_count", 3),
            tls_cluster_count=config.get("tls_cluster_count", 1),
            tls_cluster_density=config.get("tls_cluster_density", 24),
            tls_cluster_radius=config.get("tls_cluster_radius", 14),
            noise_sigma=float(config.get("noise_sigma", 6.0)),
            seed=seed,
        )


@dataclass
class GroundTruth:
    nucleus_mask: np.ndarray
    rbc_mask: np.ndarray
    positive_mask: np.ndarray
    tls_boxes: List[Box] = field(default_factory=list)
    tls_masks: List[np.ndarray] = field(default_factory=list)
    nucleus_centers: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def tls_union(self) -> np.ndarray:
        union = np.zeros_like(self.nucleus_mask)
        for mask in self.tls_masks:
            union |= mask
        return union


def tight_box(mask: np.ndarray) -> Box:
    """掩膜的紧致外接框 (x, y, w, h)"""
    ys, xs = np.nonzero(mask)
    x0, y0 = int(xs.min()), int(ys.min())
    return x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1
