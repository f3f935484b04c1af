import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from skimage.transform import resize

from errors import CoverageGapError, ShapeMismatchError, VipastainError
from .patch import GridPatchRef, Patch, StainDomain, parse_patch_id

logger = logging.getLogger(__name__)

MIN_PATCH_SIZE = 64
SLIDE_INFO_FILE = "slide.json"


def _grid_count(length: int, patch_size: int, stride: int) -> int:
    return max(1, math.ceil((length - patch_size) / stride) + 1)


def rescale_image(image: np.ndarray, factor: float) -> np.ndarray:
    """按比例缩放整幅图像（双线性，保持 uint8 取值范围）"""
    height = int(round(image.shape[0] * factor))
    width = int(round(image.shape[1] * factor))
    scaled = resize(image, (height, width) + image.shape[2:], order=1, preserve_range=True, anti_aliasing=factor < 1)
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def tile_image(image: np.ndarray, patch_size: int = 512, overlap: int = 0, slide_id: str = "slide",
               stain: StainDomain = StainDomain.HE,
               rescale_from: Optional[int] = None) -> List[Tuple[GridPatchRef, Patch]]:
    """
    将大图切分为按坐标编址的图块，右/下边缘不足部分用反射填充
    :param image: HxWxC 图像
    :param patch_size: 工作图块尺寸（像素）
    :param overlap: 相邻图块重叠像素数，步长 = patch_size - overlap
    :param slide_id: 切片编号
    :param stain: 染色域
    :param rescale_from: 若给出，先把原图按 patch_size / rescale_from 缩放（原始 1024 像素图块缩到 512）
    :return: [(GridPatchRef, Patch), …]，按 (grid_y, grid_x) 行优先排列
    """
    if patch_size < MIN_PATCH_SIZE:
        raise ValueError(f"patch_size 必须 ≥ {MIN_PATCH_SIZE}: {patch_size}")
    if not 0 <= overlap < patch_size:
        raise ValueError(f"overlap 必须满足 0 ≤ overlap < patch_size: {overlap}")
    if rescale_from:
        image = rescale_image(image, patch_size / float(rescale_from))

    height, width = image.shape[:2]
    if height < patch_size or width < patch_size:
        raise ShapeMismatchError(f"图像尺寸 {width}x{height} 小于一个图块 {patch_size}")

    stride = patch_size - overlap
    cols = _grid_count(width, patch_size, stride)
    rows = _grid_count(height, patch_size, stride)
    pad_w = (cols - 1) * stride + patch_size - width
    pad_h = (rows - 1) * stride + patch_size - height
    pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (image.ndim - 2)
    padded = np.pad(image, pad, mode="reflect") if (pad_h or pad_w) else image

    tiles = []
    for gy in range(rows):
        for gx in range(cols):
            ox, oy = gx * stride, gy * stride
            data = padded[oy:oy + patch_size, ox:ox + patch_size].copy()
            ref = GridPatchRef(slide_id=slide_id, grid_x=gx, grid_y=gy, origin_x=ox, origin_y=oy, size=patch_size)
            patch = Patch(image=data, slide_id=slide_id, grid_x=gx, grid_y=gy, stain=stain, origin_x=ox, origin_y=oy)
            tiles.append((ref, patch))
    logger.debug("切分完成 slide=%s grid=%dx%d stride=%d", slide_id, cols, rows, stride)
    return tiles


def _infer_stride(refs: Sequence[GridPatchRef], patch_size: int) -> int:
    for ref in refs:
        if ref.grid_x > 0:
            return ref.origin_x // ref.grid_x
        if ref.grid_y > 0:
            return ref.origin_y // ref.grid_y
    return patch_size


def stitch_patches(refs_and_images: Sequence[Tuple[GridPatchRef, np.ndarray]],
                   target_dims: Tuple[int, int]) -> np.ndarray:
    """
    按坐标把图块拼回整图，重叠区域取算术平均，结果裁剪到 target_dims
    :param refs_and_images: [(GridPatchRef, 图块数组), …]
    :param target_dims: 输出尺寸 (height, width)
    :return: 拼接后的图像，dtype 与输入图块一致
    """
    if not refs_and_images:
        raise CoverageGapError([(0, 0)])
    sizes = {image.shape[:2] for _, image in refs_and_images}
    if len(sizes) != 1:
        raise ShapeMismatchError(f"图块尺寸不一致: {sorted(sizes)}")
    patch_h, patch_w = sizes.pop()
    refs = [ref for ref, _ in refs_and_images]
    first = refs_and_images[0][1]

    target_h, target_w = target_dims
    canvas_h = max(target_h, max(ref.origin_y + patch_h for ref in refs))
    canvas_w = max(target_w, max(ref.origin_x + patch_w for ref in refs))
    extra = first.shape[2:]
    total = np.zeros((canvas_h, canvas_w) + extra, dtype=np.float64)
    count = np.zeros((canvas_h, canvas_w), dtype=np.int64)

    # 累加顺序无关，结果与图块顺序无关
    for ref, image in refs_and_images:
        total[ref.origin_y:ref.origin_y + patch_h, ref.origin_x:ref.origin_x + patch_w] += image
        count[ref.origin_y:ref.origin_y + patch_h, ref.origin_x:ref.origin_x + patch_w] += 1

    if (count[:target_h, :target_w] == 0).any():
        stride = _infer_stride(refs, patch_w)
        present = {(ref.grid_x, ref.grid_y) for ref in refs}
        expected = {
            (gx, gy)
            for gy in range(_grid_count(target_h, patch_h, stride))
            for gx in range(_grid_count(target_w, patch_w, stride))
        }
        raise CoverageGapError(sorted(expected - present))

    counts = count[:target_h, :target_w]
    if extra:
        counts = counts.reshape(counts.shape + (1,) * len(extra))
    averaged = total[:target_h, :target_w] / counts
    if np.issubdtype(first.dtype, np.integer):
        return np.rint(averaged).astype(first.dtype)
    return averaged.astype(first.dtype)


def refs_from_patch_ids(patch_ids: Sequence[str], patch_size: int) -> List[GridPatchRef]:
    """
    由 {slide_id}_x{ox}_y{oy} 编号恢复网格引用；步长取所有原点坐标的最小正间距
    """
    parsed = [parse_patch_id(pid) for pid in patch_ids]
    origins = sorted({v for _, ox, oy in parsed for v in (ox, oy)})
    gaps = [b - a for a, b in zip(origins, origins[1:]) if b > a]
    stride = min(gaps) if gaps else patch_size
    stride = min(stride, patch_size)
    return [
        GridPatchRef(slide_id=slide, grid_x=ox // stride, grid_y=oy // stride, origin_x=ox, origin_y=oy,
                     size=patch_size)
        for slide, ox, oy in parsed
    ]


@dataclass(frozen=True)
class SlideInfo:
    """切分时记录的整图尺寸（工作尺度，已计入 rescale），拼接时据此裁掉反射填充"""
    slide_id: str
    height: int
    width: int
    patch_size: int
    overlap: int = 0

    def save(self, path: str):
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(asdict(self), f, indent=2, sort_keys=True)
        except OSError as e:
            raise VipastainError(f"写入切片信息失败: {path}: {e}")

    @classmethod
    def load(cls, path: str) -> "SlideInfo":
        try:
            with open(path, "r", encoding="utf-8") as f:
                return cls(**json.load(f))
        except (OSError, TypeError, ValueError) as e:
            raise VipastainError(f"读取切片信息失败: {path}: {e}")


def find_slide_info(manifest_path: str) -> Optional[SlideInfo]:
    """清单同目录下的 slide.json；不存在时返回 None"""
    path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), SLIDE_INFO_FILE)
    return SlideInfo.load(path) if os.path.exists(path) else None
