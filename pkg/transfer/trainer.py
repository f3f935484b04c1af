"""
带掩膜约束的循环一致对抗训练。

训练时掩膜由冻结阈值的 soft_mask 计算，评估时才使用硬掩膜。
总目标 = L_GAN_AB + L_GAN_BA + λ_cycle·L_cycle_image + λ_mask·L_cycle_mask，
权重为 0 的项仍会计算并记录，但在无梯度上下文中计算，不参与更新。
"""
import csv
import logging
import math
import os
from contextlib import nullcontext
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from errors import DomainMismatchError, NonFiniteError, VipastainError
from maskextract.masks import CHANNEL_INDEX, Polarity, ThresholdSet, soft_mask
from patchio.imageio import read_rgb, write_rgb
from patchio.manifest import DatasetManifest, ManifestRow
from patchio.patch import Patch, StainDomain
from .bundle import Thresholds, TransferConfig, TranslatorBundle
from .losses import adversarial_loss, cycle_image_loss, discriminator_loss, generator_loss, mask_consistency_loss

logger = logging.getLogger(__name__)

LOSS_HEADER = ("step", "l_gan_ab", "l_gan_ba", "l_cycle_img", "l_cycle_mask")
DIRECTIONS = {
    "a2b": (StainDomain.HE, StainDomain.VIRTUAL_CD20),
    "b2a": (StainDomain.CD20, StainDomain.VIRTUAL_HE),
}


@dataclass
class LossReport:
    step: int
    l_gan_ab: float
    l_gan_ba: float
    l_cycle_img: float
    l_cycle_mask: float
    l_disc_a: float = 0.0
    l_disc_b: float = 0.0

    def csv_row(self) -> List:
        return [getattr(self, name) for name in LOSS_HEADER]


def images_to_tensor(images: Sequence[np.ndarray], device="cpu", dtype=torch.float32) -> torch.Tensor:
    """uint8 HxWx3 图像序列 → [−1,1] 的 NCHW 张量"""
    array = np.stack([np.asarray(image) for image in images]).astype(np.float32)
    tensor = torch.from_numpy(array).permute(0, 3, 1, 2).contiguous()
    return (tensor / 127.5 - 1.0).to(device=device, dtype=dtype)


def tensor_to_images(tensor: torch.Tensor) -> List[np.ndarray]:
    array = ((tensor.detach().cpu().clamp(-1.0, 1.0) + 1.0) * 127.5).permute(0, 2, 3, 1).numpy()
    return [np.clip(np.rint(image), 0, 255).astype(np.uint8) for image in array]


def _intensity(x: torch.Tensor, channel: str) -> torch.Tensor:
    return (x[:, CHANNEL_INDEX[channel]] + 1.0) * 127.5


def domain_soft_masks(x: torch.Tensor, thresholds: Dict[str, ThresholdSet], temperature: float) -> Dict[str, torch.Tensor]:
    """
    按冻结阈值计算软掩膜；H&E 另外给出红细胞软掩膜 m_{n+r} ⊕ m_n 的松弛 a + b − 2ab
    """
    masks = {
        kind: soft_mask(_intensity(x, ts.channel), ts.working_threshold, temperature, ts.polarity)
        for kind, ts in thresholds.items()
    }
    if "nucleus_plus_rbc" in masks and "nucleus" in masks:
        a, b = masks.pop("nucleus_plus_rbc"), masks["nucleus"]
        masks["rbc"] = a + b - 2.0 * a * b
    return masks


def forward_cycle(bundle: TranslatorBundle, x_a: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """H&E → 虚拟 CD20 → 重建 H&E"""
    x_b_virtual = bundle.g_ab(x_a)
    return x_b_virtual, bundle.g_ba(x_b_virtual)


def backward_cycle(bundle: TranslatorBundle, x_b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """CD20 → 虚拟 H&E → 重建 CD20"""
    x_a_virtual = bundle.g_ba(x_b)
    return x_a_virtual, bundle.g_ab(x_a_virtual)


def _mask_cycle_loss(bundle: TranslatorBundle, x_a, x_b, cycle) -> torch.Tensor:
    config = bundle.config
    temperature = config.soft_temperature
    he, cd20 = bundle.thresholds[StainDomain.HE], bundle.thresholds[StainDomain.CD20]
    x_b_virtual, x_a_rec, x_a_virtual, x_b_rec = cycle

    terms = [
        mask_consistency_loss(domain_soft_masks(x_a, he, temperature),
                              domain_soft_masks(x_a_rec, he, temperature), config.mask_loss_mode),
        mask_consistency_loss(domain_soft_masks(x_b, cd20, temperature),
                              domain_soft_masks(x_b_rec, cd20, temperature), config.mask_loss_mode),
    ]
    if config.mask_pairing == "cross-domain-nucleus":
        terms.append(mask_consistency_loss(
            {"nucleus": domain_soft_masks(x_a, he, temperature)["nucleus"]},
            {"nucleus": domain_soft_masks(x_b_virtual, cd20, temperature)["nucleus"]}, config.mask_loss_mode))
        terms.append(mask_consistency_loss(
            {"nucleus": domain_soft_masks(x_b, cd20, temperature)["nucleus"]},
            {"nucleus": domain_soft_masks(x_a_virtual, he, temperature)["nucleus"]}, config.mask_loss_mode))
    return torch.stack(terms).sum()


def generator_objective(bundle: TranslatorBundle, x_a: torch.Tensor, x_b: torch.Tensor):
    """
    生成器总目标及各分项
    :return: (total, {"gan_ab", "gan_ba", "cycle_img", "cycle_mask"}, (x_b_virtual, x_a_virtual))
    """
    config = bundle.config
    x_b_virtual, x_a_rec = forward_cycle(bundle, x_a)
    x_a_virtual, x_b_rec = backward_cycle(bundle, x_b)
    cycle = (x_b_virtual, x_a_rec, x_a_virtual, x_b_rec)

    gan_ab = generator_loss(bundle.d_b(x_b_virtual))
    gan_ba = generator_loss(bundle.d_a(x_a_virtual))

    with (torch.no_grad() if config.lambda_cycle == 0 else nullcontext()):
        cycle_img = cycle_image_loss(x_a, x_a_rec) + cycle_image_loss(x_b, x_b_rec)
    with (torch.no_grad() if config.lambda_mask == 0 else nullcontext()):
        cycle_mask = _mask_cycle_loss(bundle, x_a, x_b, cycle)

    total = gan_ab + gan_ba
    if config.lambda_cycle > 0:
        total = total + config.lambda_cycle * cycle_img
    if config.lambda_mask > 0:
        total = total + config.lambda_mask * cycle_mask
    parts = {"gan_ab": gan_ab, "gan_ba": gan_ba, "cycle_img": cycle_img, "cycle_mask": cycle_mask}
    return total, parts, (x_b_virtual, x_a_virtual)


def _set_requires_grad(modules, flag: bool):
    for module in modules:
        for p in module.parameters():
            p.requires_grad_(flag)


def train_step(bundle: TranslatorBundle, batch_a: torch.Tensor, batch_b: torch.Tensor) -> LossReport:
    """
    一次生成器更新与一次判别器更新
    :param batch_a: H&E 批次，[−1,1] NCHW
    :param batch_b: CD20 批次
    :return: 本步 LossReport
    """
    step = bundle.step + 1
    discriminators = (bundle.d_a, bundle.d_b)

    _set_requires_grad(discriminators, False)
    bundle.optimizer_g.zero_grad()
    total, parts, (x_b_virtual, x_a_virtual) = generator_objective(bundle, batch_a, batch_b)
    values = {name: float(v.detach()) for name, v in parts.items()}
    if not all(math.isfinite(v) for v in values.values()) or not torch.isfinite(total):
        raise NonFiniteError(f"第 {step} 步生成器损失非有限: {values}")
    total.backward()
    bundle.optimizer_g.step()

    _set_requires_grad(discriminators, True)
    bundle.optimizer_d.zero_grad()
    disc_a = discriminator_loss(bundle.d_a(batch_a), bundle.d_a(x_a_virtual.detach()))
    disc_b = discriminator_loss(bundle.d_b(batch_b), bundle.d_b(x_b_virtual.detach()))
    disc_total = disc_a + disc_b
    if not torch.isfinite(disc_total):
        raise NonFiniteError(f"第 {step} 步判别器损失非有限: disc_a={float(disc_a)} disc_b={float(disc_b)}")
    disc_total.backward()
    bundle.optimizer_d.step()

    bundle.step = step
    return LossReport(
        step=step,
        l_gan_ab=values["gan_ab"],
        l_gan_ba=values["gan_ba"],
        l_cycle_img=values["cycle_img"],
        l_cycle_mask=values["cycle_mask"],
        l_disc_a=float(disc_a.detach()),
        l_disc_b=float(disc_b.detach()),
    )


def load_domain_images(manifest: DatasetManifest) -> List[np.ndarray]:
    return [read_rgb(row.image_path) for row in manifest]


def _epoch_batches(n_a: int, n_b: int, batch_size: int, seed: int, epoch: int):
    """每个 epoch 用 (seed, epoch) 派生的排列，保证断点续训可复现"""
    generator = torch.Generator().manual_seed(seed * 100003 + epoch)
    perm_a = torch.randperm(n_a, generator=generator)
    perm_b = torch.randperm(n_b, generator=generator)
    steps = math.ceil(max(n_a, n_b) / batch_size)
    for s in range(steps):
        offsets = torch.arange(s * batch_size, (s + 1) * batch_size)
        yield perm_a[offsets % n_a], perm_b[offsets % n_b]


def steps_per_epoch(n_a: int, n_b: int, batch_size: int) -> int:
    return math.ceil(max(n_a, n_b) / batch_size)


def train(config: TransferConfig, manifest_a: DatasetManifest, manifest_b: DatasetManifest, thresholds: Thresholds,
          out_dir: str, resume: Optional[str] = None, max_steps: Optional[int] = None,
          progress: bool = False) -> TranslatorBundle:
    """
    完整训练循环
    :param config: 转换配置
    :param manifest_a: H&E 训练清单
    :param manifest_b: CD20 训练清单
    :param thresholds: 两个染色域的冻结阈值
    :param out_dir: 输出目录，写 checkpoint.pt 与 loss_report.csv
    :param resume: 续训检查点路径
    :param max_steps: 达到该全局步数后提前停止（None 表示训练完 epochs）
    :param progress: 是否显示进度条
    """
    config.validate()
    if len(manifest_a) == 0 or len(manifest_b) == 0:
        raise VipastainError(f"训练清单为空: he={len(manifest_a)} cd20={len(manifest_b)}")
    torch.use_deterministic_algorithms(True, warn_only=True)
    os.makedirs(out_dir, exist_ok=True)

    bundle = TranslatorBundle.load(resume, config.device) if resume else TranslatorBundle.build(config, thresholds)
    device = bundle.device
    images_a = images_to_tensor(load_domain_images(manifest_a), device)
    images_b = images_to_tensor(load_domain_images(manifest_b), device)
    per_epoch = steps_per_epoch(len(images_a), len(images_b), config.batch_size)

    report_path = os.path.join(out_dir, "loss_report.csv")
    new_report = not (resume and os.path.exists(report_path))
    checkpoint_path = os.path.join(out_dir, "checkpoint.pt")
    if bundle.step >= config.epochs * per_epoch:
        logger.info("检查点已训练完成 step=%d epochs=%d，跳过训练", bundle.step, config.epochs)
        return bundle
    logger.info("开始转换训练 he=%d cd20=%d epochs=%d steps_per_epoch=%d start_step=%d",
                len(images_a), len(images_b), config.epochs, per_epoch, bundle.step)

    with open(report_path, "w" if new_report else "a", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        if new_report:
            writer.writerow(LOSS_HEADER)
        for epoch in range(bundle.step // per_epoch, config.epochs):
            skip = bundle.step - epoch * per_epoch
            batches = list(_epoch_batches(len(images_a), len(images_b), config.batch_size, config.seed, epoch))
            for idx_a, idx_b in tqdm(batches[skip:], desc=f"transfer epoch {epoch + 1}", disable=not progress):
                report = train_step(bundle, images_a[idx_a], images_b[idx_b])
                writer.writerow(report.csv_row())
                logger.debug("step=%d %s", report.step, asdict(report))
                if max_steps is not None and bundle.step >= max_steps:
                    bundle.save(checkpoint_path)
                    return bundle
            f.flush()
            bundle.save(checkpoint_path)
            logger.info("epoch=%d 完成 gan_ab=%.4f gan_ba=%.4f cycle_img=%.4f cycle_mask=%.4f", epoch + 1,
                        report.l_gan_ab, report.l_gan_ba, report.l_cycle_img, report.l_cycle_mask)
    return bundle


def synthesize(bundle: TranslatorBundle, patches: Sequence, direction: str = "a2b") -> List[np.ndarray]:
    """
    单次生成器前向得到虚拟染色图块
    :param bundle: 训练好的模型
    :param patches: Patch 或 uint8 RGB 数组序列
    :param direction: a2b（H&E → 虚拟 CD20）或 b2a
    :return: 与输入同尺寸的 uint8 图像
    """
    if direction not in DIRECTIONS:
        raise DomainMismatchError(f"未知方向: {direction}")
    source, _ = DIRECTIONS[direction]
    images = []
    for patch in patches:
        if isinstance(patch, Patch):
            if StainDomain(patch.stain) != source:
                raise DomainMismatchError(f"方向 {direction} 需要 {source.value} 图块，实际为 {patch.stain}")
            images.append(patch.image)
        else:
            images.append(np.asarray(patch))
    if not images:
        return []
    generator = bundle.g_ab if direction == "a2b" else bundle.g_ba
    generator.eval()
    outputs = []
    with torch.no_grad():
        for image in images:
            x = images_to_tensor([image], bundle.device, next(generator.parameters()).dtype)
            outputs.extend(tensor_to_images(generator(x)))
    generator.train()
    return outputs


def synthesize_manifest(bundle: TranslatorBundle, manifest: DatasetManifest, out_dir: str,
                        direction: str = "a2b") -> DatasetManifest:
    """
    对清单中的每个图块生成虚拟染色，文件名保持 patch_id，写出新清单
    """
    source, target = DIRECTIONS[direction]
    rows = []
    for row in manifest:
        if row.stain != source:
            raise DomainMismatchError(f"图块 {row.patch_id} 染色域为 {row.stain.value}，方向 {direction} 需要 {source.value}")
        image = synthesize(bundle, [read_rgb(row.image_path)], direction)[0]
        path = os.path.join(out_dir, "images", f"{row.patch_id}.png")
        write_rgb(path, image)
        rows.append(ManifestRow(patch_id=row.patch_id, stain=target, split=row.split, image_path=path,
                                mask_paths={k: v for k, v in row.mask_paths.items() if k == "tls"},
                                annotation_path=row.annotation_path))
    result = DatasetManifest(rows)
    result.write_csv(os.path.join(out_dir, "manifest.csv"))
    logger.info("虚拟染色完成 direction=%s count=%d out=%s", direction, len(rows), out_dir)
    return result
