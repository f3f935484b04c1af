"""
转换模型打包：两个生成器、两个判别器、优化器状态、配置快照、冻结阈值与步数，存为单个归档。
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import torch

from errors import ConfigError, VipastainError
from maskextract.masks import ThresholdSet
from patchio.patch import StainDomain
from .losses import MASK_LOSS_MODES
from .networks import PatchDiscriminator, ResidualGenerator

logger = logging.getLogger(__name__)

MASK_PAIRINGS = ("cycle-only", "cross-domain-nucleus")

Thresholds = Dict[StainDomain, Dict[str, ThresholdSet]]


@dataclass
class TransferConfig:
    patch_size: int = 64
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 2e-4
    beta1: float = 0.5
    lambda_cycle: float = 10.0
    lambda_mask: float = 5.0
    mask_loss_mode: str = "l1"
    mask_pairing: str = "cycle-only"
    soft_temperature: float = 5.0
    base_channels: int = 16
    residual_blocks: int = 3
    disc_channels: int = 16
    identity_init: bool = False
    seed: int = 7
    device: str = "cpu"

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs 必须 ≥ 1: {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size 必须 ≥ 1: {self.batch_size}")
        if self.lambda_cycle < 0 or self.lambda_mask < 0:
            raise ConfigError(f"损失权重不能为负: λ_cycle={self.lambda_cycle} λ_mask={self.lambda_mask}")
        if self.mask_loss_mode not in MASK_LOSS_MODES:
            raise ConfigError(f"mask_loss_mode 必须是 {MASK_LOSS_MODES} 之一: {self.mask_loss_mode}")
        if self.mask_pairing not in MASK_PAIRINGS:
            raise ConfigError(f"mask_pairing 必须是 {MASK_PAIRINGS} 之一: {self.mask_pairing}")
        if self.soft_temperature <= 0:
            raise ConfigError(f"soft_temperature 必须为正: {self.soft_temperature}")
        if self.patch_size % 4:
            raise ConfigError(f"patch_size 必须能被 4 整除: {self.patch_size}")

    @classmethod
    def from_config(cls, config) -> "TransferConfig":
        """从 PipelineConfig 的 [transfer]、[patchio]、[run] 节构造"""
        section = config.section("transfer")
        return cls(
            patch_size=config.get("patchio", "patch_size"),
            seed=config.get("run", "seed"),
            device=config.get("run", "device"),
            **{key: section[key] for key in section if key in cls.__dataclass_fields__},
        )


@dataclass
class TranslatorBundle:
    config: TransferConfig
    thresholds: Thresholds
    g_ab: ResidualGenerator
    g_ba: ResidualGenerator
    d_a: PatchDiscriminator
    d_b: PatchDiscriminator
    step: int = 0
    optimizer_g: Optional[torch.optim.Optimizer] = field(default=None, repr=False)
    optimizer_d: Optional[torch.optim.Optimizer] = field(default=None, repr=False)

    @classmethod
    def build(cls, config: TransferConfig, thresholds: Thresholds, dtype: torch.dtype = torch.float32) -> "TranslatorBundle":
        """
        按配置初始化网络与 Adam 优化器，初始化由 config.seed 决定
        :param config: 转换配置
        :param thresholds: {StainDomain.HE: {kind: ThresholdSet}, StainDomain.CD20: {…}}
        :param dtype: 参数精度（梯度检查使用 float64）
        """
        config.validate()
        for domain in (StainDomain.HE, StainDomain.CD20):
            if not thresholds.get(domain):
                raise VipastainError(f"缺少 {domain.value} 的标定阈值")
        torch.manual_seed(config.seed)
        device = torch.device(config.device)

        def generator():
            return ResidualGenerator(config.base_channels, config.residual_blocks, config.identity_init).to(device, dtype)

        def discriminator():
            return PatchDiscriminator(config.disc_channels).to(device, dtype)

        bundle = cls(config=config, thresholds=thresholds, g_ab=generator(), g_ba=generator(),
                     d_a=discriminator(), d_b=discriminator())
        betas = (config.beta1, 0.999)
        bundle.optimizer_g = torch.optim.Adam(
            list(bundle.g_ab.parameters()) + list(bundle.g_ba.parameters()), lr=config.learning_rate, betas=betas)
        bundle.optimizer_d = torch.optim.Adam(
            list(bundle.d_a.parameters()) + list(bundle.d_b.parameters()), lr=config.learning_rate, betas=betas)
        return bundle

    @property
    def device(self) -> torch.device:
        return next(self.g_ab.parameters()).device

    def save(self, path: str):
        archive = {
            "config": asdict(self.config),
            "thresholds": {domain.value: {kind: ts.to_dict() for kind, ts in sets.items()}
                           for domain, sets in self.thresholds.items()},
            "step": self.step,
            "networks": {name: getattr(self, name).state_dict() for name in ("g_ab", "g_ba", "d_a", "d_b")},
            "optimizers": {
                "g": self.optimizer_g.state_dict() if self.optimizer_g else None,
                "d": self.optimizer_d.state_dict() if self.optimizer_d else None,
            },
        }
        try:
            torch.save(archive, path)
        except OSError as e:
            raise VipastainError(f"写入检查点失败: {path}: {e}")
        logger.info("检查点已保存 path=%s step=%d", path, self.step)

    @classmethod
    def load(cls, path: str, device: Optional[str] = None) -> "TranslatorBundle":
        try:
            archive = torch.load(path, map_location="cpu", weights_only=False)
        except (OSError, RuntimeError) as e:
            raise VipastainError(f"读取检查点失败: {path}: {e}")
        config = TransferConfig(**archive["config"])
        if device:
            config.device = device
        thresholds = {
            StainDomain(domain): {kind: ThresholdSet.from_dict(item) for kind, item in sets.items()}
            for domain, sets in archive["thresholds"].items()
        }
        bundle = cls.build(config, thresholds)
        for name, state in archive["networks"].items():
            getattr(bundle, name).load_state_dict(state)
        if archive["optimizers"]["g"]:
            bundle.optimizer_g.load_state_dict(archive["optimizers"]["g"])
        if archive["optimizers"]["d"]:
            bundle.optimizer_d.load_state_dict(archive["optimizers"]["d"])
        bundle.step = int(archive["step"])
        return bundle
