"""Brightness-adaptive dithering of magnitude reconstructions."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter

from .errors import InvalidInputError

__all__ = ["dither", "local_noise_std", "SIGMA_BRAIN", "SIGMA_KNEE", "SIGMA_KNEE_FAT_SUPPRESSED", "PATCH_SIZE"]

SIGMA_BRAIN = 0.02
SIGMA_KNEE = 0.02
SIGMA_KNEE_FAT_SUPPRESSED = 0.03
PATCH_SIZE = 11


def local_noise_std(normalized: np.ndarray, sigma: float, patch: int = PATCH_SIZE) -> np.ndarray:
    """``sigma * sqrt(local median)`` over a ``patch x patch`` reflect-padded window."""
    size = (1, patch, patch) if normalized.ndim == 3 else patch
    med = median_filter(normalized, size=size, mode="reflect")
    return sigma * np.sqrt(np.clip(med, 0.0, None))


def dither(image, sigma: float = SIGMA_BRAIN, seed: int = 0, patch: int = PATCH_SIZE) -> np.ndarray:
    """Normalize by the maximum and add zero-mean Gaussian noise.

    The noise standard deviation at each pixel is ``sigma`` times the square
    root of the median of the normalized image over the surrounding
    ``patch x patch`` window, so dark regions receive little noise.
    An all-zero image is returned unchanged.

    Args:
        image: Nonnegative real image ``(H, W)`` (or a stack ``(S, H, W)``,
            filtered slice by slice).
        sigma: Noise scale; 0.02 for brain and non fat-suppressed knee,
            0.03 for fat-suppressed knee.
        seed: Seed of the noise generator.
    """
    image = np.asarray(image, dtype=np.float64)
    if not sigma >= 0:
        raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
    if image.ndim not in (2, 3):
        raise InvalidInputError(f"expected a 2D image or a stack of them, got shape {image.shape}")
    if not np.isfinite(image).all():
        raise InvalidInputError("image contains non-finite values")
    peak = image.max()
    if peak <= 0:
        return image.copy()
    normalized = image / peak
    if sigma == 0:
        return normalized
    std = local_noise_std(normalized, sigma, patch)
    rng = np.random.default_rng(seed)
    return normalized + std * rng.standard_normal(normalized.shape)
