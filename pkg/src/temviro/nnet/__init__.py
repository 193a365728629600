"""From-scratch tensor engine: U-Net layers, hand-derived backprop, Adam,
gradient checking, and bit-exact checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import TrainHyper, adam_step
from .unet import DESK_CONFIG, UNet, UNetConfig, build_unet

__all__ = [
    "DESK_CONFIG",
    "TrainHyper",
    "UNet",
    "UNetConfig",
    "adam_step",
    "build_unet",
    "grad_check",
    "load_checkpoint",
    "save_checkpoint",
]
