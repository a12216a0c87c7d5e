from .losses import adversarial_loss, cycle_loss, generator_adversarial_loss, patch_nce_loss
from .train import (
    GanConfig,
    GanDivergence,
    generate,
    load_generator,
    save_checkpoint,
    train_cut,
    train_cyclegan,
    train_gan,
)

__all__ = [
    "GanConfig",
    "GanDivergence",
    "adversarial_loss",
    "cycle_loss",
    "generate",
    "generator_adversarial_loss",
    "load_generator",
    "patch_nce_loss",
    "save_checkpoint",
    "train_cut",
    "train_cyclegan",
    "train_gan",
]
