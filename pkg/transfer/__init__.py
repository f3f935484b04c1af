from .networks import PatchDiscriminator, ResidualBlock, ResidualGenerator
from .losses import adversarial_loss, cycle_image_loss, discriminator_loss, generator_loss, mask_consistency_loss
from .bundle import TransferConfig, TranslatorBundle
from .trainer import (
    LOSS_HEADER,
    LossReport,
    backward_cycle,
    domain_soft_masks,
    forward_cycle,
    generator_objective,
    images_to_tensor,
    synthesize,
    synthesize_manifest,
    tensor_to_images,
    train,
    train_step,
)

__all__ = [
    "PatchDiscriminator",
    "ResidualBlock",
    "ResidualGenerator",
    "adversarial_loss",
    "cycle_image_loss",
    "discriminator_loss",
    "generator_loss",
    "mask_consistency_loss",
    "TransferConfig",
    "TranslatorBundle",
    "LOSS_HEADER",
    "LossReport",
    "backward_cycle",
    "domain_soft_masks",
    "forward_cycle",
    "generator_objective",
    "images_to_tensor",
    "synthesize",
    "synthesize_manifest",
    "tensor_to_images",
    "train",
    "train_step",
]
