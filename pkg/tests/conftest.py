from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from placid_forge.manifest import (
    BackgroundSpec,
    Canvas,
    LayoutTarget,
    ObjectAsset,
    Placement,
    RealDims,
    SampleSpec,
)
from placid_forge.raster import save_png


def make_cutout(
    path: Path,
    size: tuple[int, int] = (20, 14),
    color: tuple[int, int, int] = (200, 60, 40),
    opaque: bool = True,
) -> Path:
    """Write a fully opaque rectangular RGBA cutout."""
    w, h = size
    raster = np.zeros((h, w, 4), dtype=np.uint8)
    raster[:, :, :3] = color
    raster[:, :, 3] = 255 if opaque else 0
    save_png(raster, path)
    return path


def make_asset(
    assets_dir: Path,
    oid: str,
    size: tuple[int, int] = (20, 14),
    color: tuple[int, int, int] = (200, 60, 40),
    real_dims: RealDims | None = None,
    n_variants: int = 0,
    label: str | None = None,
) -> ObjectAsset:
    cutout = make_cutout(assets_dir / f"{oid}.png", size, color)
    variants = []
    for i in range(n_variants):
        shade = tuple(min(255, c + 40 * (i + 1)) for c in color)
        variants.append(make_cutout(assets_dir / f"{oid}_relit_{i}.png", size, shade))
    return ObjectAsset(
        id=oid,
        label=label or oid,
        description=f"a {color[0]}-toned {oid}",
        cutout_path=cutout,
        real_dims=real_dims,
        relit_variants=tuple(variants),
    )


def make_spec(
    assets_dir: Path,
    sample_id: str = "sample_a",
    mode: str = "manual_design",
    n_objects: int = 2,
    K: int = 9,
    canvas: tuple[int, int] = (160, 120),
    seed: int = 7,
    background: BackgroundSpec | None = None,
    real_dims: list[RealDims] | None = None,
    sizes: list[tuple[int, int]] | None = None,
) -> SampleSpec:
    assets = []
    placements = []
    colors = [(200, 60, 40), (40, 120, 220), (90, 200, 90), (240, 200, 40), (180, 60, 200)]
    for i in range(n_objects):
        size = sizes[i] if sizes else (20 + 4 * i, 14 + 2 * i)
        asset = make_asset(
            assets_dir,
            f"{sample_id}_obj{i}",
            size=size,
            color=colors[i % len(colors)],
            real_dims=real_dims[i] if real_dims else None,
        )
        assets.append(asset)
        placements.append(
            Placement(
                object_id=asset.id,
                center_xy=(40.0 + 50.0 * i, 50.0 + 15.0 * i),
                scale=1.0,
                rotation_deg=0.0,
                z_order=i,
                relight_t=0.0,
            )
        )
    return SampleSpec(
        sample_id=sample_id,
        source_mode=mode,
        objects=tuple(assets),
        background=background
        or BackgroundSpec(kind="plain_color", color=(255, 255, 255), description="a white backdrop"),
        target=LayoutTarget(tuple(placements)),
        caption_template_id="studio_display",
        K=K,
        canvas=Canvas(*canvas),
        seed=seed,
    )


@pytest.fixture
def assets_dir(tmp_path: Path) -> Path:
    d = tmp_path / "assets"
    d.mkdir()
    return d
