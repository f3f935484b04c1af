"""
对抗损失与带掩膜约束的循环一致损失。
"""
from typing import Dict, Tuple

import torch
import torch.nn.functional as F

from errors import NonFiniteError, ShapeMismatchError

EPSILON = 1e-7
MASK_LOSS_MODES = ("l1", "cross-entropy")


def _check_finite(name: str, tensor: torch.Tensor):
    if not torch.isfinite(tensor).all():
        raise NonFiniteError(f"{name} 含有非有限值")


def generator_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """非饱和生成器损失 −mean(log D(fake))"""
    _check_finite("d_fake", d_fake)
    return -torch.log(d_fake.clamp(EPSILON, 1.0 - EPSILON)).mean()


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    _check_finite("d_real", d_real)
    _check_finite("d_fake", d_fake)
    real = -torch.log(d_real.clamp(EPSILON, 1.0 - EPSILON)).mean()
    fake = -torch.log(1.0 - d_fake.clamp(EPSILON, 1.0 - EPSILON)).mean()
    return real + fake


def adversarial_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    :param d_real: 判别器对真实图像的得分 (0,1)
    :param d_fake: 判别器对生成图像的得分 (0,1)
    :return: (disc_loss, gen_loss)
    """
    return discriminator_loss(d_real, d_fake), generator_loss(d_fake)


def cycle_image_loss(x: torch.Tensor, x_reconstructed: torch.Tensor) -> torch.Tensor:
    if x.shape != x_reconstructed.shape:
        raise ShapeMismatchError(f"重建图像尺寸不一致: {tuple(x.shape)} vs {tuple(x_reconstructed.shape)}")
    return (x - x_reconstructed).abs().mean()


def mask_consistency_loss(masks_src: Dict[str, torch.Tensor], masks_dst: Dict[str, torch.Tensor],
                          mode: str = "l1") -> torch.Tensor:
    """
    同类掩膜之间的一致性损失，对所有配对种类取平均
    :param masks_src: {kind: 软掩膜}，交叉熵模式下按 0.5 硬化作为目标
    :param masks_dst: {kind: 软掩膜}
    :param mode: l1 | cross-entropy
    """
    if mode not in MASK_LOSS_MODES:
        raise ValueError(f"未知的掩膜损失模式: {mode}")
    kinds = sorted(k for k in masks_src if masks_src[k] is not None and masks_dst.get(k) is not None)
    if not kinds:
        raise ValueError("没有可配对的掩膜种类")

    terms = []
    for kind in kinds:
        src, dst = masks_src[kind], masks_dst[kind]
        if src.shape != dst.shape:
            raise ShapeMismatchError(f"掩膜 {kind} 尺寸不一致: {tuple(src.shape)} vs {tuple(dst.shape)}")
        if mode == "l1":
            terms.append((src - dst).abs().mean())
        else:
            target = (src > 0.5).to(dst.dtype)
            terms.append(F.binary_cross_entropy(dst.clamp(EPSILON, 1.0 - EPSILON), target))
    return torch.stack(terms).mean()
