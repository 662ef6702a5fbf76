"""Timeline planning and frame rendering.

Objects travel on straight lines at constant speed from their scattered
start states to the target layout, while white boxes fade out and, on
white-canvas starts, the true background fades in. The last frame always
reproduces the standalone target composite bit for bit; subject-pair videos
are plain crossfades supervised only on the final frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .compositor import Layer, Transform2D, _composite_float, alpha_bbox
from .manifest import LayoutTarget, Placement
from .raster import load_rgb, quantize_u8, to_float


def lerp(a: float, b: float, u: float) -> float:
    """Endpoint-exact linear interpolation: u=0 gives a, u=1 gives b."""
    return (1.0 - u) * a + u * b


def shortest_angle_delta(start_deg: float, end_deg: float) -> float:
    """Signed rotation from start to end along the shorter arc; exact
    half-turn ties resolve counter-clockwise (+180)."""
    return 180.0 - ((180.0 - (end_deg - start_deg)) % 360.0)


@dataclass(frozen=True)
class ObjectState:
    center: tuple[float, float]
    scale: float
    rotation_deg: float = 0.0
    perspective: tuple[tuple[float, float], ...] = ((0.0, 0.0),) * 4


@dataclass(frozen=True)
class ShadowAttachment:
    raster: np.ndarray  # RGBA uint8
    offset: tuple[int, int]  # top-left relative to the cutout raster


@dataclass
class ObjectTrack:
    object_id: str
    transforms: list[Transform2D]
    white_box_alpha: list[float]
    relight_t: list[float]
    z_order: int
    fly_in: bool = False
    layer_alpha: list[float] | None = None  # extra fade, e.g. a replaced object
    shadow: ShadowAttachment | None = None


@dataclass
class Timeline:
    K: int
    mode: str
    tracks: list[ObjectTrack]
    background_fade_alpha: list[float]
    supervised_frames: list[int]


@dataclass
class RenderAsset:
    """Rasters the renderer needs for one object."""

    variants: list[np.ndarray]  # cutout first, then relit versions
    box: np.ndarray | None = None  # white-boxed image; None for fly-in objects


@dataclass
class BackgroundStates:
    initial_canvas: np.ndarray  # RGB uint8
    final_background: np.ndarray  # RGB uint8


def _off_canvas_start(
    target: Placement,
    size: tuple[int, int],
    canvas: tuple[int, int],
) -> tuple[float, float]:
    """Start center for a fly-in object: on the ray from the canvas center
    through the target center, just past the edge plus 10% of the diagonal."""
    cw, ch = canvas
    cx, cy = cw / 2.0, ch / 2.0
    dx = target.center_xy[0] - cx
    dy = target.center_xy[1] - cy
    norm = math.hypot(dx, dy)
    if norm < 1e-9:
        dx, dy, norm = 1.0, 0.0, 1.0
    ux, uy = dx / norm, dy / norm

    # axis-aligned half-extents of the rotated, scaled raster
    w, h = size
    theta = math.radians(target.rotation_deg)
    hx = (abs(math.cos(theta)) * w + abs(math.sin(theta)) * h) * target.scale / 2.0
    hy = (abs(math.sin(theta)) * w + abs(math.cos(theta)) * h) * target.scale / 2.0

    candidates = []
    if ux > 0:
        candidates.append((cw + hx - cx) / ux)
    elif ux < 0:
        candidates.append((-hx - cx) / ux)
    if uy > 0:
        candidates.append((ch + hy - cy) / uy)
    elif uy < 0:
        candidates.append((-hy - cy) / uy)
    t_exit = min(c for c in candidates if c > 0)
    t_start = t_exit + 0.1 * math.hypot(cw, ch)
    return (cx + ux * t_start, cy + uy * t_start)


def plan_timeline(
    initial: Mapping[str, ObjectState],
    target: LayoutTarget,
    K: int,
    mode: str,
    *,
    canvas: tuple[int, int],
    white_start: bool,
    sizes: Mapping[str, tuple[int, int]],
    design_elements: Sequence[str] = (),
) -> Timeline:
    """Linear constant-speed trajectories from initial states to the target."""
    if K < 2:
        raise ValueError("K must be >= 2")
    design = set(design_elements)
    target_ids = {p.object_id for p in target.placements}
    animated_ids = target_ids - design
    if set(initial) != animated_ids:
        raise ValueError(
            f"initial placements {sorted(initial)} do not match target objects {sorted(animated_ids)}"
        )

    us = [k / (K - 1) for k in range(K)]
    tracks: list[ObjectTrack] = []
    for placement in target.placements:
        oid = placement.object_id
        if oid in design:
            start_center = _off_canvas_start(placement, sizes[oid], canvas)
            start = ObjectState(
                center=start_center,
                scale=placement.scale,
                rotation_deg=placement.rotation_deg,
                perspective=placement.perspective,
            )
        else:
            start = initial[oid]
        rot_delta = shortest_angle_delta(start.rotation_deg, placement.rotation_deg)
        transforms = []
        for u in us:
            persp = tuple(
                (lerp(s[0], t[0], u), lerp(s[1], t[1], u))
                for s, t in zip(start.perspective, placement.perspective)
            )
            transforms.append(
                Transform2D(
                    scale=lerp(start.scale, placement.scale, u),
                    rotation_deg=start.rotation_deg + rot_delta * u if u < 1.0 else placement.rotation_deg,
                    translation_xy=(
                        lerp(start.center[0], placement.center_xy[0], u),
                        lerp(start.center[1], placement.center_xy[1], u),
                    ),
                    perspective_offsets=persp,
                )
            )
        tracks.append(
            ObjectTrack(
                object_id=oid,
                transforms=transforms,
                white_box_alpha=[0.0 if oid in design else 1.0 - u for u in us],
                relight_t=[lerp(0.0, placement.relight_t, u) for u in us],
                z_order=placement.z_order,
                fly_in=oid in design,
            )
        )

    fades = [u if white_start else 1.0 for u in us]
    supervised = [K - 1] if mode == "subject_pair" else list(range(K))
    return Timeline(
        K=K,
        mode=mode,
        tracks=tracks,
        background_fade_alpha=fades,
        supervised_frames=supervised,
    )


def relight_blend(variants: Sequence[np.ndarray], t: float) -> np.ndarray:
    """Blend along an ordered variant list at parameter t in [0,1].

    Two variants blend premultiplied RGB as (1-t)A + tB with alpha taken
    from the first; more variants interpolate piecewise-linearly.
    """
    if not variants:
        raise ValueError("need at least one variant")
    shapes = {v.shape for v in variants}
    if len(shapes) > 1:
        raise ValueError(f"variant dimensions differ: {sorted(shapes)}")
    if len(variants) == 1 or t <= 0.0:
        return variants[0].copy()
    if t >= 1.0:
        return variants[-1].copy()

    pos = t * (len(variants) - 1)
    i = min(int(pos), len(variants) - 2)
    u = pos - i
    alpha = to_float(variants[0][:, :, 3])
    a_p = to_float(variants[i][:, :, :3]) * to_float(variants[i][:, :, 3])[:, :, None]
    b_p = to_float(variants[i + 1][:, :, :3]) * to_float(variants[i + 1][:, :, 3])[:, :, None]
    blend = (1.0 - u) * a_p + u * b_p
    safe = np.maximum(alpha, 1e-12)[:, :, None]
    rgb = np.where(alpha[:, :, None] > 0, blend / safe, 0.0)
    out = np.empty(variants[0].shape, dtype=np.uint8)
    out[:, :, :3] = quantize_u8(rgb)
    out[:, :, 3] = variants[0][:, :, 3]
    return out


def _shadow_layer(
    track: ObjectTrack, asset: RenderAsset, k: int, u: float, z: int
) -> Layer | None:
    if track.shadow is None:
        return None
    t = track.transforms[k]
    cut_h, cut_w = asset.variants[0].shape[:2]
    sh_h, sh_w = track.shadow.raster.shape[:2]
    ox, oy = track.shadow.offset
    # the shadow raster's center, expressed relative to the cutout center,
    # rides along under the object's similarity transform
    delta_x = (ox + sh_w / 2.0) - cut_w / 2.0
    delta_y = (oy + sh_h / 2.0) - cut_h / 2.0
    theta = math.radians(t.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    dx = delta_x * t.scale
    dy = delta_y * t.scale
    translation = (
        t.translation_xy[0] + cos_t * dx - sin_t * dy,
        t.translation_xy[1] + sin_t * dx + cos_t * dy,
    )
    transform = Transform2D(scale=t.scale, rotation_deg=t.rotation_deg, translation_xy=translation)
    return Layer(raster=track.shadow.raster, transform=transform, alpha_mul=u, z=z)


def frame_layers(timeline: Timeline, assets: Mapping[str, RenderAsset], k: int) -> list[Layer]:
    """All compositor layers for frame k: shadows, then per object the white
    box beneath the relit cutout, in target z order."""
    u = k / (timeline.K - 1)
    ordered = sorted(timeline.tracks, key=lambda tr: tr.z_order)
    layers: list[Layer] = []
    n = len(ordered)
    for i, track in enumerate(ordered):
        shadow = _shadow_layer(track, assets[track.object_id], k, u, z=i - 2 * n)
        if shadow is not None:
            layers.append(shadow)
    for i, track in enumerate(ordered):
        asset = assets[track.object_id]
        fade = track.layer_alpha[k] if track.layer_alpha is not None else 1.0
        if asset.box is not None:
            box_alpha = track.white_box_alpha[k] * fade
            layers.append(
                Layer(raster=asset.box, transform=track.transforms[k], alpha_mul=box_alpha, z=2 * i)
            )
        cutout = relight_blend(asset.variants, track.relight_t[k])
        layers.append(
            Layer(raster=cutout, transform=track.transforms[k], alpha_mul=fade, z=2 * i + 1)
        )
    return layers


def target_layers(timeline: Timeline, assets: Mapping[str, RenderAsset]) -> list[Layer]:
    """The layers of the standalone target composite (final-frame state)."""
    return frame_layers(timeline, assets, timeline.K - 1)


def render_video(
    timeline: Timeline,
    assets: Mapping[str, RenderAsset],
    backgrounds: BackgroundStates,
) -> list[np.ndarray]:
    """Render all K frames; frame K-1 equals the standalone target composite."""
    init = to_float(backgrounds.initial_canvas)
    final = to_float(backgrounds.final_background)
    out_size = (init.shape[1], init.shape[0])
    frames = []
    for k in range(timeline.K):
        fade = timeline.background_fade_alpha[k]
        bg = (1.0 - fade) * init + fade * final
        layers = frame_layers(timeline, assets, k)
        frames.append(quantize_u8(_composite_float(bg, layers, out_size)))
    return frames


def crossfade_pair(
    first: np.ndarray,
    last: np.ndarray,
    K: int,
    external_frames_dir: Path | str | None = None,
) -> tuple[list[np.ndarray], list[int]]:
    """Per-pixel crossfade from first to last; only the last frame is
    supervised. A directory of K pre-rendered frames may substitute the
    interpolation."""
    if first.shape != last.shape:
        raise ValueError(f"frame shapes differ: {first.shape} vs {last.shape}")
    if K < 2:
        raise ValueError("K must be >= 2")
    if external_frames_dir is not None:
        files = sorted(Path(external_frames_dir).glob("*.png"))
        if len(files) != K:
            raise ValueError(f"external interpolation has {len(files)} frames, expected {K}")
        frames = [load_rgb(f) for f in files]
        for i, frame in enumerate(frames):
            if frame.shape != first.shape:
                raise ValueError(f"external frame {files[i].name} shape {frame.shape} != {first.shape}")
        return frames, [K - 1]
    a = to_float(first)
    b = to_float(last)
    frames = []
    for k in range(K):
        u = k / (K - 1)
        frames.append(quantize_u8((1.0 - u) * a + u * b))
    return frames, [K - 1]
