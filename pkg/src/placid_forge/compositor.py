"""Pixel-level assembly: warps, white boxes, scatter placement, shadows, and
z-ordered alpha compositing of single frames.

All blending happens on float64 premultiplied color; 8-bit values are
produced once at the end of a frame by rounding half away from zero, so
identical inputs give identical bytes on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateTransformError, PlacementError
from .raster import quantize_u8
from .rng import derive_seed, make_rng

ZERO_OFFSETS: tuple[tuple[float, float], ...] = ((0.0, 0.0),) * 4

SHADOW_SHEAR_CAP = 3.0
SHADOW_FLATTEN = 0.25


@dataclass(frozen=True)
class Transform2D:
    """Similarity transform plus optional per-corner perspective offsets.

    Maps the source raster's center to ``translation_xy`` on the output
    canvas; scale and rotation are applied about the raster center. Nonzero
    ``perspective_offsets`` displace the four mapped corners (TL, TR, BR, BL)
    and turn the mapping into a homography.
    """

    scale: float = 1.0
    rotation_deg: float = 0.0
    translation_xy: tuple[float, float] = (0.0, 0.0)
    perspective_offsets: tuple[tuple[float, float], ...] = ZERO_OFFSETS

    def __post_init__(self):
        if self.scale <= 0.0:
            raise ValueError(f"scale must be > 0, got {self.scale}")

    def is_affine(self) -> bool:
        return all(ox == 0.0 and oy == 0.0 for ox, oy in self.perspective_offsets)

    def corners(self, src_size: tuple[int, int]) -> np.ndarray:
        """Destination quad (4x2) for the source corners TL, TR, BR, BL."""
        w, h = src_size
        src = np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)
        mapped = _affine_forward(src, self, src_size)
        return mapped + np.asarray(self.perspective_offsets, dtype=np.float64)


@dataclass(frozen=True)
class Layer:
    raster: np.ndarray  # RGBA uint8
    transform: Transform2D
    alpha_mul: float = 1.0
    z: int = 0

    def __post_init__(self):
        if not (0.0 <= self.alpha_mul <= 1.0):
            raise ValueError(f"alpha_mul must be in [0,1], got {self.alpha_mul}")


def _affine_forward(points: np.ndarray, t: Transform2D, src_size: tuple[int, int]) -> np.ndarray:
    w, h = src_size
    cx, cy = w / 2.0, h / 2.0
    theta = math.radians(t.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx = (points[:, 0] - cx) * t.scale
    dy = (points[:, 1] - cy) * t.scale
    out = np.empty_like(points)
    out[:, 0] = t.translation_xy[0] + cos_t * dx - sin_t * dy
    out[:, 1] = t.translation_xy[1] + sin_t * dx + cos_t * dy
    return out


def validate_quad(quad: np.ndarray) -> None:
    """Require a convex quad with positive area."""
    crosses = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(a[0] * b[1] - a[1] * b[0])
    area = 0.0
    for i in range(4):
        x0, y0 = quad[i]
        x1, y1 = quad[(i + 1) % 4]
        area += x0 * y1 - x1 * y0
    if abs(area) / 2.0 <= 0.0:
        raise DegenerateTransformError("transform collapses the raster to zero area")
    signs = {c > 0 for c in crosses if c != 0}
    if len(signs) > 1 or any(c == 0 for c in crosses):
        raise DegenerateTransformError("transform produces a non-convex quadrilateral")


def _homography_from_corners(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    a = np.zeros((8, 8), dtype=np.float64)
    b = np.zeros(8, dtype=np.float64)
    for i in range(4):
        sx, sy = src[i]
        dx, dy = dst[i]
        a[2 * i] = [sx, sy, 1, 0, 0, 0, -sx * dx, -sy * dx]
        a[2 * i + 1] = [0, 0, 0, sx, sy, 1, -sx * dy, -sy * dy]
        b[2 * i] = dx
        b[2 * i + 1] = dy
    coeffs = np.linalg.solve(a, b)
    return np.append(coeffs, 1.0).reshape(3, 3)


def _premultiply(raster: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(raster, dtype=np.float64) / 255.0
    alpha = arr[:, :, 3]
    return arr[:, :, :3] * alpha[:, :, None], alpha


def _bilinear_gather(channel: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample with pixel-center convention; positions outside read as zero."""
    h, w = channel.shape[:2]
    padded = np.zeros((h + 2, w + 2) + channel.shape[2:], dtype=np.float64)
    padded[1 : h + 1, 1 : w + 1] = channel
    u = sx - 0.5
    v = sy - 0.5
    # beyond one pixel past the border every bilinear tap is zero
    valid = (u >= -1.0) & (u <= w) & (v >= -1.0) & (v <= h)
    u = np.where(valid, u, -1.0)
    v = np.where(valid, v, -1.0)
    x0 = np.floor(u).astype(np.int64) + 1
    y0 = np.floor(v).astype(np.int64) + 1
    fx = u + 1.0 - x0
    fy = v + 1.0 - y0
    x1 = np.minimum(x0 + 1, w + 1)
    y1 = np.minimum(y0 + 1, h + 1)
    if channel.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
        valid = valid[..., None]
    p00 = padded[y0, x0]
    p01 = padded[y0, x1]
    p10 = padded[y1, x0]
    p11 = padded[y1, x1]
    top = p00 * (1 - fx) + p01 * fx
    bot = p10 * (1 - fx) + p11 * fx
    return np.where(valid, top * (1 - fy) + bot * fy, 0.0)


def _warp_premult(
    raster: np.ndarray, t: Transform2D, out_size: tuple[int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Warp an RGBA raster; returns premultiplied RGB and alpha as float
    canvases of out_size."""
    out_w, out_h = out_size
    src_h, src_w = raster.shape[:2]
    quad = t.corners((src_w, src_h))
    validate_quad(quad)

    rgb_p, alpha = _premultiply(raster)
    out_rgb = np.zeros((out_h, out_w, 3), dtype=np.float64)
    out_a = np.zeros((out_h, out_w), dtype=np.float64)

    x_lo = max(0, int(math.floor(quad[:, 0].min())) - 1)
    x_hi = min(out_w, int(math.ceil(quad[:, 0].max())) + 1)
    y_lo = max(0, int(math.floor(quad[:, 1].min())) - 1)
    y_hi = min(out_h, int(math.ceil(quad[:, 1].max())) + 1)
    if x_lo >= x_hi or y_lo >= y_hi:
        return out_rgb, out_a

    xs = np.arange(x_lo, x_hi, dtype=np.float64) + 0.5
    ys = np.arange(y_lo, y_hi, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)

    if t.is_affine():
        cx, cy = src_w / 2.0, src_h / 2.0
        theta = math.radians(t.rotation_deg)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        dx = gx - t.translation_xy[0]
        dy = gy - t.translation_xy[1]
        sx = (cos_t * dx + sin_t * dy) / t.scale + cx
        sy = (-sin_t * dx + cos_t * dy) / t.scale + cy
    else:
        src_corners = np.array(
            [[0, 0], [src_w, 0], [src_w, src_h], [0, src_h]], dtype=np.float64
        )
        h_inv = np.linalg.inv(_homography_from_corners(src_corners, quad))
        denom = h_inv[2, 0] * gx + h_inv[2, 1] * gy + h_inv[2, 2]
        sx = (h_inv[0, 0] * gx + h_inv[0, 1] * gy + h_inv[0, 2]) / denom
        sy = (h_inv[1, 0] * gx + h_inv[1, 1] * gy + h_inv[1, 2]) / denom

    out_rgb[y_lo:y_hi, x_lo:x_hi] = _bilinear_gather(rgb_p, sx, sy)
    out_a[y_lo:y_hi, x_lo:x_hi] = _bilinear_gather(alpha, sx, sy)
    return out_rgb, out_a


def warp(raster: np.ndarray, t: Transform2D, out_size: tuple[int, int]) -> np.ndarray:
    """Inverse-mapped bilinear warp to an RGBA canvas of out_size."""
    rgb_p, alpha = _warp_premult(raster, t, out_size)
    out = np.zeros((out_size[1], out_size[0], 4), dtype=np.uint8)
    safe = np.maximum(alpha, 1e-12)
    rgb = np.where(alpha[:, :, None] > 0, rgb_p / safe[:, :, None], 0.0)
    out[:, :, :3] = quantize_u8(rgb)
    out[:, :, 3] = quantize_u8(alpha)
    return out


def alpha_bbox(raster: np.ndarray) -> tuple[int, int, int, int]:
    """Tight (x, y, w, h) box around nonzero alpha."""
    alpha = raster[:, :, 3]
    rows = np.flatnonzero(alpha.any(axis=1))
    cols = np.flatnonzero(alpha.any(axis=0))
    if rows.size == 0:
        raise ValueError("raster has no visible pixels")
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def white_box_embed(cutout: np.ndarray, padding_frac: float = 0.0) -> np.ndarray:
    """Paste a cutout onto an opaque white box to mimic an unsegmented photo."""
    if not (0.0 <= padding_frac <= 0.5):
        raise ValueError(f"padding_frac must be in [0,0.5], got {padding_frac}")
    x, y, w, h = alpha_bbox(cutout)
    crop = cutout[y : y + h, x : x + w]
    pad_x = round(padding_frac * w)
    pad_y = round(padding_frac * h)
    box_w, box_h = w + 2 * pad_x, h + 2 * pad_y

    base = np.ones((box_h, box_w, 3), dtype=np.float64)
    rgb_p, alpha = _premultiply(crop)
    x0 = (box_w - w) // 2
    y0 = (box_h - h) // 2
    region = base[y0 : y0 + h, x0 : x0 + w]
    base[y0 : y0 + h, x0 : x0 + w] = rgb_p + region * (1.0 - alpha[:, :, None])

    out = np.empty((box_h, box_w, 4), dtype=np.uint8)
    out[:, :, :3] = quantize_u8(base)
    out[:, :, 3] = 255
    return out


def scatter_layout(
    item_sizes: list[tuple[float, float]],
    canvas: tuple[int, int],
    seed: int,
    max_tries: int = 200,
) -> list[tuple[float, float]]:
    """Seeded rejection sampling of non-overlapping, fully in-bounds rects.

    Items are placed in a seed-shuffled order; the returned centers are in
    input order. Raises PlacementError when an item cannot be placed within
    max_tries attempts.
    """
    cw, ch = canvas
    for i, (w, h) in enumerate(item_sizes):
        if w > cw or h > ch:
            raise PlacementError(f"item {i} ({w}x{h}) does not fit the {cw}x{ch} canvas")
    rng = make_rng(derive_seed(seed, "scatter"))
    order = rng.permutation(len(item_sizes))
    centers: list[tuple[float, float] | None] = [None] * len(item_sizes)
    placed: list[tuple[float, float, float, float]] = []
    for idx in order:
        w, h = item_sizes[idx]
        for _ in range(max_tries):
            cx = rng.uniform(w / 2.0, cw - w / 2.0)
            cy = rng.uniform(h / 2.0, ch - h / 2.0)
            rect = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
            overlaps = any(
                rect[0] < r[2] and r[0] < rect[2] and rect[1] < r[3] and r[1] < rect[3]
                for r in placed
            )
            if not overlaps:
                placed.append(rect)
                centers[idx] = (cx, cy)
                break
        else:
            raise PlacementError(
                f"could not place item {idx} after {max_tries} tries; shrink items and retry"
            )
    return [c for c in centers if c is not None]


@dataclass(frozen=True)
class Light:
    direction_deg: float  # azimuth the light comes from; 0 = from the right, 90 = from above
    elevation_deg: float


@dataclass(frozen=True)
class ShadowParams:
    blur_px: int = 3
    opacity: float = 0.5


def shear_silhouette(
    alpha: np.ndarray, shear: float, flatten: float = 1.0, pad: int = 0
) -> tuple[np.ndarray, tuple[int, int]]:
    """Shear an alpha silhouette along its ground line, compressing height
    by `flatten`. Returns the resampled band and its integer offset relative
    to the silhouette raster's top-left corner."""
    rows = np.flatnonzero(alpha.any(axis=1))
    cols = np.flatnonzero(alpha.any(axis=0))
    if rows.size == 0:
        return np.zeros((1, 1), dtype=np.float64), (0, 0)
    y_top, y_bottom = float(rows[0]), float(rows[-1])
    ground = y_bottom + 1.0
    h_sil = ground - y_top
    x_left, x_right = float(cols[0]), float(cols[-1]) + 1.0

    x_lo = x_left + min(0.0, shear * h_sil)
    x_hi = x_right + max(0.0, shear * h_sil)
    y_lo = ground - flatten * h_sil
    ox = int(math.floor(x_lo)) - pad
    oy = int(math.floor(y_lo)) - pad
    out_w = int(math.ceil(x_hi)) - ox + pad + 1
    out_h = int(math.ceil(ground)) - oy + pad + 1

    xs = np.arange(out_w, dtype=np.float64) + 0.5 + ox
    ys = np.arange(out_h, dtype=np.float64) + 0.5 + oy
    gx, gy = np.meshgrid(xs, ys)
    height = (ground - gy) / flatten
    sy = ground - height
    sx = gx - shear * height
    valid = height >= 0
    sampled = _bilinear_gather(alpha.astype(np.float64), sx, sy)
    return np.where(valid, sampled, 0.0), (ox, oy)


def render_shadow(
    cutout: np.ndarray, light: Light, params: ShadowParams
) -> tuple[np.ndarray, tuple[int, int]]:
    """Heuristic cast shadow: the silhouette sheared away from the light,
    flattened onto the ground line, blurred, and tinted black.

    Returns (RGBA raster, offset of its top-left relative to the cutout's)."""
    if light.elevation_deg <= 0.0:
        raise ValueError("light elevation must be > 0 degrees")
    if not (0.0 < params.opacity <= 1.0):
        raise ValueError("shadow opacity must be in (0,1]")
    alpha = np.asarray(cutout[:, :, 3], dtype=np.float64) / 255.0
    if not (alpha > 0).any():
        return np.zeros((1, 1, 4), dtype=np.uint8), (0, 0)

    cot = 1.0 / math.tan(math.radians(light.elevation_deg))
    shear = -math.cos(math.radians(light.direction_deg)) * cot
    shear = max(-SHADOW_SHEAR_CAP, min(SHADOW_SHEAR_CAP, shear))

    band, (ox, oy) = shear_silhouette(alpha, shear, SHADOW_FLATTEN, pad=params.blur_px)
    if params.blur_px > 0:
        band = ndimage.uniform_filter(band, size=2 * params.blur_px + 1, mode="constant", cval=0.0)

    out = np.zeros(band.shape + (4,), dtype=np.uint8)
    out[:, :, 3] = quantize_u8(params.opacity * band)
    return out, (ox, oy)


def _composite_float(background: np.ndarray, layers: list[Layer], out_size: tuple[int, int]) -> np.ndarray:
    zs = [layer.z for layer in layers]
    if len(set(zs)) != len(zs):
        raise ValueError("z-order ties are forbidden between layers")
    out = background.copy()
    for layer in sorted(layers, key=lambda l: l.z):
        if layer.alpha_mul == 0.0:
            continue
        rgb_p, a = _warp_premult(layer.raster, layer.transform, out_size)
        a = a * layer.alpha_mul
        out = rgb_p * layer.alpha_mul + out * (1.0 - a)[:, :, None]
    return out


def composite_frame(background: np.ndarray, layers: list[Layer]) -> np.ndarray:
    """Alpha-composite layers over an opaque RGB background in ascending z."""
    bg = np.asarray(background, dtype=np.float64) / 255.0
    out_size = (background.shape[1], background.shape[0])
    return quantize_u8(_composite_float(bg, layers, out_size))
