"""Independent brute-force oracles used to freeze expected values.

Everything here is deliberately naive: python loops and first-principles
formulas, sharing no code path with the package implementation.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def dilate_brute_force(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square structuring element dilation by marking each pixel's
    (2r+1)^2 neighborhood, clipped to the image bounds."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                y0, y1 = max(0, y - radius), min(h, y + radius + 1)
                x0, x1 = max(0, x - radius), min(w, x + radius + 1)
                out[y0:y1, x0:x1] = True
    return out


def over_pixel(
    fg_rgb: tuple[float, float, float], fg_alpha: float, bg_rgb: tuple[float, float, float]
) -> tuple[float, float, float]:
    """Source-over on one pixel, channels in [0,1]."""
    return tuple(f * fg_alpha + b * (1.0 - fg_alpha) for f, b in zip(fg_rgb, bg_rgb))


def round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def chamfer_brute_force(
    pixels: np.ndarray, mask: np.ndarray, colors: list[tuple[int, int, int]]
) -> float:
    """Double loop over masked pixels and target colors."""
    total = 0.0
    count = 0
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            best = min(
                math.sqrt(sum((float(pixels[y, x, c]) - color[c]) ** 2 for c in range(3)))
                for color in colors
            )
            total += best
            count += 1
    return total / count


def mse_brute_force(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    total = 0.0
    count = 0
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            for c in range(3):
                d = a[y, x, c] / 255.0 - b[y, x, c] / 255.0
                total += d * d
                count += 1
    return total / count


def kmeans_1d_optimal_sse(features: list[float], k: int) -> float:
    """Global optimum by exhausting contiguous partitions of the sorted
    points (optimal 1-D clusters are contiguous)."""
    xs = sorted(features)
    n = len(xs)
    best = math.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = [0, *cuts, n]
        sse = 0.0
        for i in range(k):
            group = xs[bounds[i] : bounds[i + 1]]
            mean = sum(group) / len(group)
            sse += sum((v - mean) ** 2 for v in group)
        best = min(best, sse)
    return best


def alpha_centroid(alpha: np.ndarray) -> tuple[float, float]:
    """Alpha-weighted centroid in continuous pixel-center coordinates."""
    total = alpha.sum()
    ys, xs = np.mgrid[0 : alpha.shape[0], 0 : alpha.shape[1]]
    cx = float(((xs + 0.5) * alpha).sum() / total)
    cy = float(((ys + 0.5) * alpha).sum() / total)
    return (cx, cy)


def cosine_brute_force(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)
