"""Pixel-level RGB -> IR translation: channel-mean grayscale plus intensity rescaling."""

from __future__ import annotations

import math

import numpy as np

from .errors import ChannelMismatch
from .raster import GrayMap, Raster, quantize

RGB2IR_FACTOR = 1.3
SAR2IR_FACTOR = 1.15


def check_factor(factor: float) -> float:
    factor = float(factor)
    if not (math.isfinite(factor) and factor > 0.0):
        raise ValueError(f"intensity factor must be positive and finite, got {factor!r}")
    return factor


def to_grayscale(img: Raster) -> GrayMap:
    """Unweighted mean of the three channels (each channel's distance from black)."""
    if img.channels != 3:
        raise ChannelMismatch(f"grayscale conversion needs 3 channels, got {img.channels}")
    px = img.pixels.astype(np.float64)
    # integer sum first: exact, and symmetric under channel permutation
    total = px[:, :, 0] + px[:, :, 1] + px[:, :, 2]
    return GrayMap(total / 3.0)


def reconstruct_density(gray: GrayMap, factor: float) -> GrayMap:
    """Scale every gray value by ``factor`` and saturate to [0, 255]."""
    factor = check_factor(factor)
    return GrayMap(np.clip(gray.values * factor, 0.0, 255.0))


def rgb_to_ir(img: Raster, factor: float = RGB2IR_FACTOR) -> Raster:
    return quantize(reconstruct_density(to_grayscale(img), factor))


def gray_of(img: Raster) -> GrayMap:
    """View a single-channel raster as a gray map."""
    if img.channels != 1:
        raise ChannelMismatch(f"expected a single-channel raster, got {img.channels}")
    return GrayMap(img.pixels[:, :, 0].astype(np.float64))
