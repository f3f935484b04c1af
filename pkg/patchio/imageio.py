import os
from typing import List, Tuple

import numpy as np
from PIL import Image

from errors import VipastainError


def read_rgb(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()
    except OSError as e:
        raise VipastainError(f"读取图像失败: {path}: {e}")


def write_rgb(path: str, image: np.ndarray):
    _ensure_parent(path)
    try:
        Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), mode="RGB").save(path)
    except OSError as e:
        raise VipastainError(f"写入图像失败: {path}: {e}")


def read_mask(path: str) -> np.ndarray:
    """读取 0/255 掩膜为布尔数组"""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L")) > 127
    except OSError as e:
        raise VipastainError(f"读取掩膜失败: {path}: {e}")


def write_mask(path: str, mask: np.ndarray):
    """布尔掩膜写为单通道 0/255 PNG"""
    _ensure_parent(path)
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="L").save(path)
    except OSError as e:
        raise VipastainError(f"写入掩膜失败: {path}: {e}")


def _ensure_parent(path: str):
    parent = os.path.dirname(path)
    if parent:
        try:
            os.makedirs(parent, exist_ok=True)
        except OSError as e:
            raise VipastainError(f"无法创建目录: {parent}: {e}")


def read_image_set(path: str) -> List[Tuple[str, np.ndarray]]:
    """
    读取一组图像：清单 CSV、含 manifest.csv 的目录，或直接存放 PNG 的目录（按文件名排序）
    :return: [(patch_id 或文件名主干, image), …]
    """
    from .manifest import DatasetManifest

    if os.path.isfile(path):
        return [(row.patch_id, read_rgb(row.image_path)) for row in DatasetManifest.read_csv(path)]
    if os.path.isfile(os.path.join(path, "manifest.csv")):
        return read_image_set(os.path.join(path, "manifest.csv"))
    directory = os.path.join(path, "images") if os.path.isdir(os.path.join(path, "images")) else path
    try:
        names = sorted(name for name in os.listdir(directory) if name.lower().endswith(".png"))
    except OSError as e:
        raise VipastainError(f"读取图像目录失败: {directory}: {e}")
    return [(os.path.splitext(name)[0], read_rgb(os.path.join(directory, name))) for name in names]
