import re
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

PATCH_ID_PATTERN = re.compile(r"^(?P<slide>.+)_x(?P<x>\d+)_y(?P<y>\d+)$")


class StainDomain(str, Enum):
    HE = "he"
    CD20 = "cd20"
    VIRTUAL_CD20 = "virtual-cd20"
    VIRTUAL_HE = "virtual-he"

    @property
    def base(self) -> "StainDomain":
        """虚拟染色按其目标域处理（阈值、掩膜规则相同）"""
        if self is StainDomain.VIRTUAL_CD20:
            return StainDomain.CD20
        if self is StainDomain.VIRTUAL_HE:
            return StainDomain.HE
        return self


def format_patch_id(slide_id: str, origin_x: int, origin_y: int) -> str:
    return f"{slide_id}_x{origin_x}_y{origin_y}"


def parse_patch_id(patch_id: str) -> Tuple[str, int, int]:
    """
    解析 {slide_id}_x{origin_x}_y{origin_y} 形式的图块编号
    :return: (slide_id, origin_x, origin_y)
    """
    match = PATCH_ID_PATTERN.match(patch_id)
    if not match:
        raise ValueError(f"图块编号格式错误: {patch_id}")
    return match.group("slide"), int(match.group("x")), int(match.group("y"))


@dataclass
class Patch:
    """带来源信息的 RGB 图块，image 为 HxWx3 uint8"""
    image: np.ndarray
    slide_id: str
    grid_x: int = 0
    grid_y: int = 0
    stain: StainDomain = StainDomain.HE
    origin_x: int = 0
    origin_y: int = 0

    @property
    def patch_id(self) -> str:
        return format_patch_id(self.slide_id, self.origin_x, self.origin_y)

    @property
    def size(self) -> Tuple[int, int]:
        return self.image.shape[1], self.image.shape[0]


@dataclass(frozen=True)
class GridPatchRef:
    slide_id: str
    grid_x: int
    grid_y: int
    origin_x: int
    origin_y: int
    size: int
    path: str = ""

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"图块尺寸必须为正: {self.size}")

    @property
    def patch_id(self) -> str:
        return format_patch_id(self.slide_id, self.origin_x, self.origin_y)

    @property
    def file_name(self) -> str:
        return f"{self.patch_id}.png"
