"""One-step diffusion super-resolution with learned time-step selection.

Images are float arrays in [0, 1] shaped (3, H, W) or (B, 3, H, W).
"""

from ._osdsr import (
    Error,
    Model,
    commands,
    default_attributes,
    default_config,
    degrade,
    derive_sample_seed,
    gumbel_softmax_select,
    jpeg_codec_available,
    load_image,
    normalize_config,
    pair_normalize,
    psnr_y,
    rgb_to_y,
    save_image,
    ssim_y,
    synthesize_gt,
    total_loss,
)

__all__ = [
    "Error",
    "Model",
    "commands",
    "default_attributes",
    "default_config",
    "degrade",
    "derive_sample_seed",
    "gumbel_softmax_select",
    "jpeg_codec_available",
    "load_image",
    "normalize_config",
    "pair_normalize",
    "psnr_y",
    "rgb_to_y",
    "save_image",
    "ssim_y",
    "synthesize_gt",
    "total_loss",
]
