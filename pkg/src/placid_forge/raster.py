"""Raster I/O and quantization helpers.

PNG is the only raster format. Encoder settings are pinned so that identical
pixel content always produces identical bytes, which the golden-output tests
rely on. Quantization rounds half away from zero on every platform.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

PNG_COMPRESS_LEVEL = 6


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """Map float values in [0, 1] to uint8, rounding half away from zero."""
    scaled = np.asarray(values, dtype=np.float64) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def to_float(raster: np.ndarray) -> np.ndarray:
    """uint8 raster to float64 in [0, 1]."""
    return np.asarray(raster, dtype=np.float64) / 255.0


def save_png(raster: np.ndarray, path: Path | str) -> None:
    """Write a gray (HxW), RGB (HxWx3), or RGBA (HxWx4) uint8 raster."""
    arr = np.asarray(raster)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 raster, got {arr.dtype}")
    if arr.ndim == 2:
        mode = "L"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        mode = "RGB"
    elif arr.ndim == 3 and arr.shape[2] == 4:
        mode = "RGBA"
    else:
        raise ValueError(f"unsupported raster shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode).save(path, format="PNG", compress_level=PNG_COMPRESS_LEVEL)


def load_rgb(path: Path | str) -> np.ndarray:
    """Load an image as HxWx3 uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_rgba(path: Path | str) -> np.ndarray:
    """Load an image as HxWx4 uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGBA"), dtype=np.uint8)


def load_mask(path: Path | str) -> np.ndarray:
    """Load a gray PNG as a boolean mask (nonzero pixels are True)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8) > 0


def save_mask(mask: np.ndarray, path: Path | str) -> None:
    """Write a boolean mask as a 0/255 gray PNG."""
    save_png(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), path)


def image_size(path: Path | str) -> tuple[int, int]:
    """Return (width, height) from the image header without decoding pixels."""
    with Image.open(path) as im:
        return im.size
