"""DCT-domain volumetric attacks, baselines and segmentation metrics."""

from ._volfreq import (
    Model,
    attack,
    dct3,
    dice_per_class,
    fpm,
    generate,
    hd95,
    idct3,
    run,
    ssim,
)

__all__ = [
    "Model",
    "attack",
    "dct3",
    "dice_per_class",
    "fpm",
    "generate",
    "hd95",
    "idct3",
    "run",
    "ssim",
]
