import math
from collections import Counter
from typing import Dict, Tuple

import numpy as np

from .manifest import DatasetManifest
from .patch import StainDomain


def split_dataset(manifest: DatasetManifest, ratio: float = 0.8, seed: int = 0) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    按切片分层的确定性随机划分，同一切片的图块不会同时出现在两个子集中
    :param manifest: 待划分清单
    :param ratio: 训练集切片比例，0 < ratio < 1
    :param seed: 随机种子
    :return: (训练清单, 验证清单)，split 字段分别为 train / val
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio 必须在 (0,1) 内: {ratio}")
    slides = manifest.slide_ids
    if len(slides) < 2:
        raise ValueError(f"至少需要 2 个切片才能划分，当前 {len(slides)} 个")

    order = np.random.default_rng(seed).permutation(len(slides))
    n_train = min(max(math.floor(ratio * len(slides) + 1e-9), 1), len(slides) - 1)
    train_slides = {slides[i] for i in order[:n_train]}

    train = DatasetManifest([row for row in manifest if row.slide_id in train_slides]).with_split("train")
    val = DatasetManifest([row for row in manifest if row.slide_id not in train_slides]).with_split("val")
    return train, val


def dataset_summary(manifest: DatasetManifest) -> Dict[str, Dict[str, int]]:
    """
    数据集组成统计：每个 split 下各染色域的切片数与图块数
    :return: {split: {"he_slides": n, "he_patches": n, …}}
    """
    summary: Dict[str, Dict[str, int]] = {}
    slides: Dict[Tuple[str, StainDomain], set] = {}
    patches: Counter = Counter()
    for row in manifest:
        slides.setdefault((row.split, row.stain), set()).add(row.slide_id)
        patches[(row.split, row.stain)] += 1
    for (split, stain), ids in sorted(slides.items(), key=lambda item: (item[0][0], item[0][1].value)):
        entry = summary.setdefault(split, {})
        entry[f"{stain.value}_slides"] = len(ids)
        entry[f"{stain.value}_patches"] = patches[(split, stain)]
    return summary
