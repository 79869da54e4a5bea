"""Two-stream image translation with traceable diffeomorphic deformation.

Images passed to the model are 2-D float arrays in [-1, 1]; metric functions
take images on the 0..255 scale. Fields are [2, H, W] with the row component
first.
"""

from ._core import (
    IoError,
    Model,
    NumericalError,
    checksum,
    edge_dice,
    evaluate,
    fold_fraction,
    generate_pairs,
    gradcheck,
    integrate_velocity,
    jacobian_determinant,
    load_dataset,
    mae,
    nmi,
    psnr,
    ssim,
    synth,
    train,
    warp,
)

__all__ = [
    "IoError",
    "Model",
    "NumericalError",
    "checksum",
    "edge_dice",
    "evaluate",
    "fold_fraction",
    "generate_pairs",
    "gradcheck",
    "integrate_velocity",
    "jacobian_determinant",
    "load_dataset",
    "mae",
    "nmi",
    "psnr",
    "ssim",
    "synth",
    "train",
    "warp",
]


def to_pixels(image):
    """[-1, 1] -> 0..255."""
    return (image + 1.0) * 127.5
