"""Background pools: plain colors, procedural primitives, and photo selection.

Procedural backgrounds combine simple primitives (linear/radial gradients and
block textures) with palettes built from a seeded harmony rule. Everything is
deterministic in its seed.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import BackgroundSpec
from .raster import load_rgb, quantize_u8
from .rng import derive_seed, make_rng

PRIMITIVES = ("linear_gradient", "radial_gradient", "block_texture")

PHOTO_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ProceduralBackgroundPlan:
    primitive: str
    palette: tuple[tuple[int, int, int], ...]
    angle_deg: float = 0.0
    center_xy: tuple[float, float] | None = None
    radius: float | None = None
    block_size_px: int | None = None


def sample_palette(seed: int, n: int) -> list[tuple[int, int, int]]:
    """Sample n harmonious RGB colors: a base hue plus companions at +-30
    degrees (analogous) or +180 (complementary), rule chosen by seed."""
    if not (2 <= n <= 4):
        raise ValueError(f"palette size must be in [2,4], got {n}")
    rng = make_rng(derive_seed(seed, "palette"))
    base_hue = rng.uniform(0.0, 360.0)
    analogous = rng.random() < 0.5
    hues = [base_hue]
    for _ in range(n - 1):
        if analogous:
            offset = 30.0 if rng.random() < 0.5 else -30.0
        else:
            offset = 180.0
        hues.append((base_hue + offset) % 360.0)
    colors = []
    for hue in hues:
        sat = rng.uniform(0.2, 0.8)
        val = rng.uniform(0.3, 0.95)
        r, g, b = colorsys.hsv_to_rgb(hue / 360.0, sat, val)
        colors.append(tuple(int(v) for v in quantize_u8(np.array([r, g, b]))))
    return colors


def sample_plan(seed: int, canvas: tuple[int, int]) -> ProceduralBackgroundPlan:
    """Draw a full procedural plan (primitive, palette, params) from a seed."""
    rng = make_rng(derive_seed(seed, "bg-plan"))
    primitive = PRIMITIVES[int(rng.integers(len(PRIMITIVES)))]
    n_colors = int(rng.integers(2, 5))
    palette = tuple(sample_palette(int(rng.integers(2**63)), n_colors))
    w, h = canvas
    if primitive == "linear_gradient":
        return ProceduralBackgroundPlan(primitive, palette, angle_deg=float(rng.uniform(0, 360)))
    if primitive == "radial_gradient":
        cx = float(rng.uniform(0.25 * w, 0.75 * w))
        cy = float(rng.uniform(0.25 * h, 0.75 * h))
        radius = float(math.hypot(w, h) * rng.uniform(0.4, 0.8))
        return ProceduralBackgroundPlan(primitive, palette, center_xy=(cx, cy), radius=radius)
    block = int(rng.integers(8, max(9, min(w, h) // 4 + 1)))
    return ProceduralBackgroundPlan(primitive, palette, block_size_px=block)


def _palette_interp(palette: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation through palette stops, t in [0,1]."""
    n = len(palette)
    if n == 1:
        return np.broadcast_to(palette[0], t.shape + (3,)).astype(np.float64)
    pos = np.clip(t, 0.0, 1.0) * (n - 1)
    idx = np.minimum(pos.astype(np.int64), n - 2)
    frac = pos - idx
    lo = palette[idx]
    hi = palette[idx + 1]
    return (1.0 - frac[..., None]) * lo + frac[..., None] * hi


def synth_background(
    plan: ProceduralBackgroundPlan, size: tuple[int, int], seed: int
) -> np.ndarray:
    """Render a procedural plan to an RGB raster; deterministic in (plan, seed)."""
    w, h = size
    if w <= 0 or h <= 0:
        raise ValueError(f"canvas size must be positive, got {size}")
    palette = np.asarray(plan.palette, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64) + 0.5
    ys = np.arange(h, dtype=np.float64) + 0.5

    if plan.primitive == "linear_gradient":
        theta = math.radians(plan.angle_deg)
        ux, uy = math.cos(theta), math.sin(theta)
        proj = xs[None, :] * ux + ys[:, None] * uy
        lo, hi = proj.min(), proj.max()
        t = (proj - lo) / (hi - lo) if hi > lo else np.zeros_like(proj)
        rgb = _palette_interp(palette, t)
    elif plan.primitive == "radial_gradient":
        if plan.center_xy is None or plan.radius is None:
            raise ValueError("radial_gradient plan needs center_xy and radius")
        cx, cy = plan.center_xy
        dist = np.hypot(xs[None, :] - cx, ys[:, None] - cy)
        t = np.clip(dist / plan.radius, 0.0, 1.0)
        rgb = _palette_interp(palette, t)
    elif plan.primitive == "block_texture":
        if not plan.block_size_px or plan.block_size_px <= 0:
            raise ValueError("block_texture plan needs a positive block_size_px")
        b = plan.block_size_px
        gw, gh = -(-w // b), -(-h // b)
        rng = make_rng(derive_seed(seed, "blocks"))
        choices = rng.integers(len(palette), size=(gh, gw))
        grid = palette[choices]
        rgb = np.repeat(np.repeat(grid, b, axis=0), b, axis=1)[:h, :w]
    else:
        raise ValueError(f"unknown primitive {plan.primitive!r}")
    return quantize_u8(rgb / 255.0)


def list_photo_pool(photo_dir: Path | str) -> list[Path]:
    """Enumerate a photo pool in deterministic (lexicographic) order."""
    pool = sorted(
        p for p in Path(photo_dir).iterdir() if p.suffix.lower() in PHOTO_EXTENSIONS
    )
    return pool


def center_crop_resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Center-crop to the target aspect ratio, then rescale."""
    w, h = size
    ih, iw = image.shape[:2]
    target_aspect = w / h
    src_aspect = iw / ih
    if src_aspect > target_aspect:
        new_w = max(1, round(ih * target_aspect))
        x0 = (iw - new_w) // 2
        image = image[:, x0 : x0 + new_w]
    elif src_aspect < target_aspect:
        new_h = max(1, round(iw / target_aspect))
        y0 = (ih - new_h) // 2
        image = image[y0 : y0 + new_h, :]
    pil = Image.fromarray(image, "RGB").resize((w, h), Image.Resampling.BILINEAR)
    return np.asarray(pil, dtype=np.uint8)


def pick_background(
    spec: BackgroundSpec,
    pools: dict[str, Path | str] | None,
    seed: int,
    size: tuple[int, int],
) -> np.ndarray:
    """Resolve a BackgroundSpec to an RGB canvas raster."""
    w, h = size
    if spec.kind == "plain_color":
        color = np.asarray(spec.color, dtype=np.uint8)
        return np.broadcast_to(color, (h, w, 3)).copy()
    if spec.kind == "photo":
        if spec.photo_path is not None:
            return center_crop_resize(load_rgb(spec.photo_path), size)
        photo_dir = (pools or {}).get("photo_dir")
        if photo_dir is None:
            raise ValueError("photo background requested but no photo pool configured")
        pool = list_photo_pool(photo_dir)
        if not pool:
            raise ValueError(f"photo pool {photo_dir} is empty")
        rng = make_rng(derive_seed(seed, "photo-pick"))
        choice = pool[int(rng.integers(len(pool)))]
        return center_crop_resize(load_rgb(choice), size)
    if spec.kind == "procedural":
        plan = sample_plan(int(spec.procedural_seed), size)
        return synth_background(plan, size, int(spec.procedural_seed))
    if spec.kind == "inpainted_original":
        image = load_rgb(spec.photo_path)
        if image.shape[:2] != (h, w):
            raise ValueError(
                f"inpainted background {spec.photo_path} is {image.shape[1::-1]}, canvas is {size}"
            )
        return image
    raise ValueError(f"unknown background kind {spec.kind!r}")
