"""
伪组织学图块渲染。所有随机量来自 SceneSpec.seed，同一场景逐字节可复现。
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from skimage.draw import disk

from errors import PlacementError
from patchio.patch import Patch, StainDomain
from .scene import GroundTruth, SceneSpec, tight_box

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 500
DISC_GAP = 3
_FALLOFF_NORM = 1.0 - np.exp(-2.0)


@dataclass
class _Ellipse:
    cy: float
    cx: float
    a: float
    b: float
    theta: float
    in_cluster: bool = False


@dataclass
class _Layout:
    discs: List[Tuple[int, int, int]] = field(default_factory=list)
    nuclei: List[_Ellipse] = field(default_factory=list)
    rbcs: List[_Ellipse] = field(default_factory=list)


def _falloff(rho2: np.ndarray) -> np.ndarray:
    """高斯径向衰减：核心 0，边缘 1"""
    return (1.0 - np.exp(-2.0 * np.clip(rho2, 0.0, 1.0))) / _FALLOFF_NORM


def _ellipse_pixels(shape: Tuple[int, int], e: _Ellipse):
    reach = max(e.a, e.b)
    y0, y1 = max(0, int(np.floor(e.cy - reach))), min(shape[0], int(np.ceil(e.cy + reach)) + 1)
    x0, x1 = max(0, int(np.floor(e.cx - reach))), min(shape[1], int(np.ceil(e.cx + reach)) + 1)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy, dx = yy - e.cy, xx - e.cx
    cos, sin = np.cos(e.theta), np.sin(e.theta)
    u = (dx * cos + dy * sin) / e.a
    v = (-dx * sin + dy * cos) / e.b
    rho2 = u * u + v * v
    inside = rho2 <= 1.0
    return yy[inside], xx[inside], rho2[inside]


def _disc_pixels(shape: Tuple[int, int], cy: int, cx: int, r: int):
    rr, cc = disk((cy, cx), r, shape=shape)
    rho2 = ((rr - cy) ** 2 + (cc - cx) ** 2) / float(r * r)
    return rr, cc, rho2


def _random_ellipse(rng: np.random.Generator, cy: float, cx: float, radius_range: Tuple[int, int]) -> _Ellipse:
    a = rng.uniform(radius_range[0], radius_range[1])
    b = max(1.0, a * rng.uniform(0.7, 1.0))
    return _Ellipse(cy=cy, cx=cx, a=a, b=b, theta=rng.uniform(0.0, np.pi))


def _layout(spec: SceneSpec, rng: np.random.Generator, with_rbc: bool) -> _Layout:
    size = spec.canvas_size
    shape = (size, size)
    low, high = spec.nucleus_radius_range
    layout = _Layout()

    # 1. TLS 圆盘互不重叠，并保留间隙
    r = spec.tls_cluster_radius
    for i in range(spec.tls_cluster_count):
        for _ in range(MAX_ATTEMPTS):
            if size - 2 * r - 3 < 1:
                break
            cy, cx = (int(v) for v in rng.integers(r + 1, size - r - 1, size=2))
            if all((cy - oy) ** 2 + (cx - ox) ** 2 > (r + orr + DISC_GAP) ** 2 for oy, ox, orr in layout.discs):
                layout.discs.append((cy, cx, r))
                break
        else:
            raise PlacementError("tls_cluster", i, MAX_ATTEMPTS)
        if len(layout.discs) != i + 1:
            raise PlacementError("tls_cluster", i, 0)

        # 簇内细胞核允许相互重叠，中心落在圆盘内
        for _ in range(spec.tls_cluster_density):
            radius = (r - high - 1) * np.sqrt(rng.uniform())
            angle = rng.uniform(0.0, 2.0 * np.pi)
            e = _random_ellipse(rng, cy + radius * np.sin(angle), cx + radius * np.cos(angle), (low, high))
            e.in_cluster = True
            layout.nuclei.append(e)

    # 2. 散在细胞核，不进入 TLS 圆盘
    for i in range(spec.nucleus_count):
        for _ in range(MAX_ATTEMPTS):
            if size - 2 * high - 2 < 1:
                break
            cy, cx = rng.uniform(high + 1, size - high - 1, size=2)
            if all((cy - oy) ** 2 + (cx - ox) ** 2 >= (orr + high + 2) ** 2 for oy, ox, orr in layout.discs):
                layout.nuclei.append(_random_ellipse(rng, cy, cx, (low, high)))
                break
        else:
            raise PlacementError("nucleus", i, MAX_ATTEMPTS)
        if len(layout.nuclei) != spec.tls_cluster_count * spec.tls_cluster_density + i + 1:
            raise PlacementError("nucleus", i, 0)

    if not with_rbc:
        return layout

    # 3. 红细胞与细胞核、TLS 圆盘均不接触
    occupied = np.zeros(shape, dtype=bool)
    for e in layout.nuclei:
        rr, cc, _ = _ellipse_pixels(shape, e)
        occupied[rr, cc] = True
    for cy, cx, rad in layout.discs:
        rr, cc, _ = _disc_pixels(shape, cy, cx, rad)
        occupied[rr, cc] = True
    for i in range(spec.rbc_blob_count):
        for _ in range(MAX_ATTEMPTS):
            cy, cx = rng.uniform(high + 2, size - high - 2, size=2)
            e = _random_ellipse(rng, cy, cx, (low + 1, high + 1))
            rr, cc, _ = _ellipse_pixels(shape, _Ellipse(e.cy, e.cx, e.a + 1, e.b + 1, e.theta))
            if not occupied[rr, cc].any():
                rr, cc, _ = _ellipse_pixels(shape, e)
                occupied[rr, cc] = True
                layout.rbcs.append(e)
                break
        else:
            raise PlacementError("rbc_blob", i, MAX_ATTEMPTS)
    return layout


def _blank_truth(size: int) -> GroundTruth:
    empty = np.zeros((size, size), dtype=bool)
    return GroundTruth(nucleus_mask=empty.copy(), rbc_mask=empty.copy(), positive_mask=empty.copy())


def _shade(image: np.ndarray, where: np.ndarray, s: np.ndarray, core, rim):
    core = np.asarray(core, dtype=np.float64)
    rim = np.asarray(rim, dtype=np.float64)
    image[where] = core + s[where][:, None] * (rim - core)


def _finish(image: np.ndarray, spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)


def _add_tls(truth: GroundTruth, layout: _Layout, shape: Tuple[int, int]):
    for cy, cx, r in layout.discs:
        mask = np.zeros(shape, dtype=bool)
        rr, cc, _ = _disc_pixels(shape, cy, cx, r)
        mask[rr, cc] = True
        truth.tls_masks.append(mask)
        truth.tls_boxes.append(tight_box(mask))


def generate_pseudo_he(spec: SceneSpec) -> Tuple[Patch, GroundTruth]:
    """
    生成伪 H&E 图块：粉色背景上的深色椭圆细胞核、红细胞斑块，TLS 为密集细胞核聚集
    :param spec: 场景参数
    :return: (Patch, GroundTruth)，真值掩膜由构造精确给出
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    layout = _layout(spec, rng, with_rbc=True)
    size = spec.canvas_size
    shape = (size, size)
    palette = spec.palette

    truth = _blank_truth(size)
    image = np.empty(shape + (3,), dtype=np.float64)
    image[:] = palette.he_background

    # 重叠细胞核取更深（衰减值更小）的一方
    nucleus_s = np.full(shape, np.inf)
    for e in layout.nuclei:
        rr, cc, rho2 = _ellipse_pixels(shape, e)
        nucleus_s[rr, cc] = np.minimum(nucleus_s[rr, cc], _falloff(rho2))
        truth.nucleus_centers.append((e.cx, e.cy))
    truth.nucleus_mask = np.isfinite(nucleus_s)
    _shade(image, truth.nucleus_mask, nucleus_s, palette.hematoxylin_core, palette.hematoxylin_rim)

    for e in layout.rbcs:
        rr, cc, _ = _ellipse_pixels(shape, e)
        truth.rbc_mask[rr, cc] = True
    truth.rbc_mask &= ~truth.nucleus_mask
    image[truth.rbc_mask] = palette.red_blood_cell

    _add_tls(truth, layout, shape)
    patch = Patch(image=_finish(image, spec, rng), slide_id=f"scene{spec.seed}", stain=StainDomain.HE)
    logger.debug("生成伪 H&E seed=%d nuclei=%d rbc=%d tls=%d", spec.seed, len(layout.nuclei),
                 len(layout.rbcs), len(layout.discs))
    return patch, truth


def generate_pseudo_cd20(spec: SceneSpec) -> Tuple[Patch, GroundTruth]:
    """
    生成伪 CD20 图块：复染细胞核，TLS 区域为棕色 DAB 阳性圆斑
    :param spec: 场景参数（rbc_blob_count 在 CD20 中不使用）
    :return: (Patch, GroundTruth)，positive_mask 非空当且仅当 tls_cluster_count > 0
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    layout = _layout(spec, rng, with_rbc=False)
    size = spec.canvas_size
    shape = (size, size)
    palette = spec.palette

    truth = _blank_truth(size)
    image = np.empty(shape + (3,), dtype=np.float64)
    image[:] = palette.cd20_background

    dab_s = np.full(shape, np.inf)
    for cy, cx, r in layout.discs:
        rr, cc, rho2 = _disc_pixels(shape, cy, cx, r)
        dab_s[rr, cc] = np.minimum(dab_s[rr, cc], _falloff(rho2))

    counter_s = np.full(shape, np.inf)
    for e in layout.nuclei:
        rr, cc, rho2 = _ellipse_pixels(shape, e)
        truth.nucleus_mask[rr, cc] = True
        truth.nucleus_centers.append((e.cx, e.cy))
        if e.in_cluster:
            # 阳性 B 细胞：核区比周围阳性反应更深
            dab_s[rr, cc] = np.minimum(dab_s[rr, cc], 0.5 * _falloff(rho2))
        else:
            counter_s[rr, cc] = np.minimum(counter_s[rr, cc], _falloff(rho2))

    counter = np.isfinite(counter_s)
    _shade(image, counter, counter_s, palette.counterstain_core, palette.counterstain_rim)
    truth.positive_mask = np.isfinite(dab_s)
    _shade(image, truth.positive_mask, dab_s, palette.dab_core, palette.dab_rim)

    _add_tls(truth, layout, shape)
    patch = Patch(image=_finish(image, spec, rng), slide_id=f"scene{spec.seed}", stain=StainDomain.CD20)
    logger.debug("生成伪 CD20 seed=%d nuclei=%d tls=%d", spec.seed, len(layout.nuclei), len(layout.discs))
    return patch, truth
