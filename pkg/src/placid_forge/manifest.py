"""Interchange formats: sample specs, asset registries, and sample outputs.

Everything on disk is JSON plus PNG. Paths inside manifests are always
relative to the manifest file; absolute paths are rejected so golden corpora
stay portable. Every JSON file carries a ``schema`` string of the form
``placid-forge/<major>`` and loaders reject unknown major versions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import SpecError
from .raster import image_size, load_rgba, save_png

SCHEMA = "placid-forge/1"
SCHEMA_NAME = "placid-forge"
SCHEMA_MAJOR = 1

SOURCE_MODES = ("in_the_wild", "manual_design", "subject_pair", "side_by_side")
BACKGROUND_KINDS = ("photo", "plain_color", "procedural", "inpainted_original")

ZERO_PERSPECTIVE: tuple[tuple[float, float], ...] = ((0.0, 0.0),) * 4


def check_schema(value: Any, where: str) -> None:
    """Validate a schema string, rejecting unknown major versions."""
    if not isinstance(value, str) or "/" not in value:
        raise SpecError(f"{where}: missing or malformed schema string")
    name, _, major = value.partition("/")
    if name != SCHEMA_NAME:
        raise SpecError(f"{where}: unknown schema family {value!r}")
    if not major.isdigit() or int(major) != SCHEMA_MAJOR:
        raise SpecError(f"{where}: unsupported schema major version {value!r}")


def canonical_json(payload: Any) -> str:
    """Serialize with a byte-stable layout for reproducible files."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass(frozen=True)
class RealDims:
    width_m: float
    height_m: float
    depth_m: float


@dataclass(frozen=True)
class ObjectAsset:
    """An RGBA cutout with its textual description and optional metadata."""

    id: str
    label: str
    description: str
    cutout_path: Path
    real_dims: RealDims | None = None
    relit_variants: tuple[Path, ...] = ()


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str
    description: str = ""
    photo_path: Path | None = None
    color: tuple[int, int, int] | None = None
    procedural_seed: int | None = None


@dataclass(frozen=True)
class Placement:
    object_id: str
    center_xy: tuple[float, float]
    scale: float
    rotation_deg: float = 0.0
    perspective: tuple[tuple[float, float], ...] = ZERO_PERSPECTIVE
    z_order: int = 0
    relight_t: float = 0.0


@dataclass(frozen=True)
class LayoutTarget:
    placements: tuple[Placement, ...]

    def by_id(self) -> dict[str, Placement]:
        return {p.object_id: p for p in self.placements}


@dataclass(frozen=True)
class Canvas:
    width_px: int
    height_px: int

    @property
    def size(self) -> tuple[int, int]:
        return (self.width_px, self.height_px)


@dataclass(frozen=True)
class SampleSpec:
    sample_id: str
    source_mode: str
    objects: tuple[ObjectAsset, ...]
    background: BackgroundSpec
    target: LayoutTarget
    caption_template_id: str
    K: int
    canvas: Canvas
    seed: int


@dataclass
class SampleOutput:
    """One rendered training sample held in memory, ready to be written."""

    sample_id: str
    frames: list[np.ndarray]
    first_frame: np.ndarray
    object_images: list[tuple[str, np.ndarray]]
    background_image: np.ndarray | None
    caption: str
    supervised_frames: list[int]
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Field validation


def _require(payload: dict, key: str, where: str) -> Any:
    if key not in payload:
        raise SpecError(f"{where}: missing field '{key}'")
    return payload[key]


def _resolve_path(raw: Any, base_dir: Path, where: str) -> Path:
    if not isinstance(raw, str) or not raw:
        raise SpecError(f"{where}: path must be a nonempty string")
    p = Path(raw)
    if p.is_absolute():
        raise SpecError(f"{where}: absolute paths are not allowed ({raw})")
    return (base_dir / p).resolve()


def _validate_background(bg: BackgroundSpec) -> None:
    if bg.kind not in BACKGROUND_KINDS:
        raise SpecError(f"background.kind: unknown kind {bg.kind!r}")
    # photo_path pins a specific file; for kind=photo it may instead be drawn
    # from the configured pool at build time, so it is optional there.
    if bg.kind == "inpainted_original" and bg.photo_path is None:
        raise SpecError("background.photo_path: required for kind inpainted_original")
    if bg.kind in ("plain_color", "procedural") and bg.photo_path is not None:
        raise SpecError(f"background.photo_path: not allowed for kind {bg.kind}")
    needs_color = bg.kind == "plain_color"
    if needs_color != (bg.color is not None):
        raise SpecError(f"background.color: {'required' if needs_color else 'not allowed'} for kind {bg.kind}")
    if bg.color is not None and (len(bg.color) != 3 or any(not (0 <= c <= 255) for c in bg.color)):
        raise SpecError("background.color: must be an RGB triple in [0,255]")
    needs_seed = bg.kind == "procedural"
    if needs_seed != (bg.procedural_seed is not None):
        raise SpecError(f"background.procedural_seed: {'required' if needs_seed else 'not allowed'} for kind {bg.kind}")


def _validate_asset_files(asset: ObjectAsset) -> None:
    if not asset.cutout_path.is_file():
        raise SpecError(f"objects[{asset.id}].cutout: dangling asset reference ({asset.cutout_path})")
    cutout = load_rgba(asset.cutout_path)
    if not (cutout[:, :, 3] > 0).any():
        raise SpecError(f"objects[{asset.id}].cutout: alpha channel is empty")
    for variant in asset.relit_variants:
        if not variant.is_file():
            raise SpecError(f"objects[{asset.id}].relit_variants: dangling asset reference ({variant})")
        if image_size(variant) != image_size(asset.cutout_path):
            raise SpecError(f"objects[{asset.id}].relit_variants: {variant.name} does not match cutout dimensions")
    if asset.real_dims is not None:
        dims = asset.real_dims
        if min(dims.width_m, dims.height_m, dims.depth_m) <= 0:
            raise SpecError(f"objects[{asset.id}].real_dims: dimensions must be strictly positive")


def validate_spec(spec: SampleSpec, check_files: bool = True) -> None:
    """Raise SpecError on any invariant violation."""
    if spec.source_mode not in SOURCE_MODES:
        raise SpecError(f"source_mode: unknown mode {spec.source_mode!r}")
    if spec.K < 2:
        raise SpecError("K must be >= 2")
    if spec.canvas.width_px <= 0 or spec.canvas.height_px <= 0:
        raise SpecError("canvas: dimensions must be positive")
    if not (0 <= spec.seed < 2**64):
        raise SpecError("seed: must be a 64-bit unsigned integer")

    n = len(spec.objects)
    if n < 1:
        raise SpecError("objects: at least one object required")
    if spec.source_mode == "subject_pair" and n != 1:
        raise SpecError("subject_pair requires exactly 1 object")
    if spec.source_mode == "side_by_side" and n != 2:
        raise SpecError("side_by_side requires exactly 2 objects")

    ids = [a.id for a in spec.objects]
    if len(set(ids)) != n:
        raise SpecError("objects: ids must be unique")

    _validate_background(spec.background)

    placed = [p.object_id for p in spec.target.placements]
    if len(set(placed)) != len(placed):
        raise SpecError("target.placements: object_ids must be unique")
    unknown = set(placed) - set(ids)
    if unknown:
        raise SpecError(f"target.placements: unknown object_id {sorted(unknown)[0]!r}")
    missing = set(ids) - set(placed)
    if missing:
        raise SpecError(f"target.placements: no placement for object {sorted(missing)[0]!r}")
    z_orders = [p.z_order for p in spec.target.placements]
    if len(set(z_orders)) != len(z_orders):
        raise SpecError("target.placements: z_order ties are forbidden")
    for p in spec.target.placements:
        if p.scale <= 0:
            raise SpecError(f"target.placements[{p.object_id}].scale: must be > 0")
        if not (0.0 <= p.relight_t <= 1.0):
            raise SpecError(f"target.placements[{p.object_id}].relight_t: must be in [0,1]")
        if len(p.perspective) != 4:
            raise SpecError(f"target.placements[{p.object_id}].perspective: needs 4 corner offsets")

    if check_files:
        if spec.background.photo_path is not None and not spec.background.photo_path.is_file():
            raise SpecError(f"background.photo_path: dangling reference ({spec.background.photo_path})")
        for asset in spec.objects:
            _validate_asset_files(asset)


# ---------------------------------------------------------------------------
# JSON <-> dataclass


def _asset_from_json(payload: dict, base_dir: Path, idx: int) -> ObjectAsset:
    where = f"objects[{idx}]"
    real_dims = None
    if payload.get("real_dims") is not None:
        rd = payload["real_dims"]
        try:
            real_dims = RealDims(float(rd["width_m"]), float(rd["height_m"]), float(rd["depth_m"]))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"{where}.real_dims: expected width_m/height_m/depth_m numbers") from exc
    variants = tuple(
        _resolve_path(v, base_dir, f"{where}.relit_variants[{i}]")
        for i, v in enumerate(payload.get("relit_variants") or [])
    )
    return ObjectAsset(
        id=str(_require(payload, "id", where)),
        label=str(_require(payload, "label", where)),
        description=str(_require(payload, "description", where)),
        cutout_path=_resolve_path(_require(payload, "cutout", where), base_dir, f"{where}.cutout"),
        real_dims=real_dims,
        relit_variants=variants,
    )


def _asset_to_json(asset: ObjectAsset, base_dir: Path) -> dict:
    payload: dict[str, Any] = {
        "id": asset.id,
        "label": asset.label,
        "description": asset.description,
        "cutout": _relativize(asset.cutout_path, base_dir),
    }
    if asset.real_dims is not None:
        payload["real_dims"] = {
            "width_m": asset.real_dims.width_m,
            "height_m": asset.real_dims.height_m,
            "depth_m": asset.real_dims.depth_m,
        }
    if asset.relit_variants:
        payload["relit_variants"] = [_relativize(v, base_dir) for v in asset.relit_variants]
    return payload


def _relativize(path: Path, base_dir: Path) -> str:
    import os

    return Path(os.path.relpath(path, base_dir)).as_posix()


def _background_from_json(payload: dict, base_dir: Path) -> BackgroundSpec:
    kind = str(_require(payload, "kind", "background"))
    photo = payload.get("photo_path")
    color = payload.get("color")
    return BackgroundSpec(
        kind=kind,
        description=str(payload.get("description", "")),
        photo_path=_resolve_path(photo, base_dir, "background.photo_path") if photo is not None else None,
        color=tuple(int(c) for c in color) if color is not None else None,
        procedural_seed=int(payload["procedural_seed"]) if payload.get("procedural_seed") is not None else None,
    )


def _background_to_json(bg: BackgroundSpec, base_dir: Path) -> dict:
    payload: dict[str, Any] = {"kind": bg.kind, "description": bg.description}
    if bg.photo_path is not None:
        payload["photo_path"] = _relativize(bg.photo_path, base_dir)
    if bg.color is not None:
        payload["color"] = list(bg.color)
    if bg.procedural_seed is not None:
        payload["procedural_seed"] = bg.procedural_seed
    return payload


def _placement_from_json(payload: dict, idx: int) -> Placement:
    where = f"target.placements[{idx}]"
    persp_raw = payload.get("perspective", [[0, 0]] * 4)
    if len(persp_raw) != 4:
        raise SpecError(f"{where}.perspective: needs 4 corner offsets")
    center = _require(payload, "center_xy", where)
    return Placement(
        object_id=str(_require(payload, "object_id", where)),
        center_xy=(float(center[0]), float(center[1])),
        scale=float(_require(payload, "scale", where)),
        rotation_deg=float(payload.get("rotation_deg", 0.0)),
        perspective=tuple((float(p[0]), float(p[1])) for p in persp_raw),
        z_order=int(_require(payload, "z_order", where)),
        relight_t=float(payload.get("relight_t", 0.0)),
    )


def _placement_to_json(p: Placement) -> dict:
    return {
        "object_id": p.object_id,
        "center_xy": [p.center_xy[0], p.center_xy[1]],
        "scale": p.scale,
        "rotation_deg": p.rotation_deg,
        "perspective": [[o[0], o[1]] for o in p.perspective],
        "z_order": p.z_order,
        "relight_t": p.relight_t,
    }


def spec_from_json(payload: dict, base_dir: Path) -> SampleSpec:
    check_schema(payload.get("schema"), "spec")
    canvas_raw = _require(payload, "canvas", "spec")
    try:
        canvas = Canvas(int(canvas_raw["w"]), int(canvas_raw["h"]))
    except (KeyError, TypeError) as exc:
        raise SpecError("canvas: expected {w, h}") from exc
    objects = tuple(
        _asset_from_json(o, base_dir, i) for i, o in enumerate(_require(payload, "objects", "spec"))
    )
    target_raw = _require(payload, "target", "spec")
    placements = tuple(
        _placement_from_json(p, i) for i, p in enumerate(_require(target_raw, "placements", "target"))
    )
    return SampleSpec(
        sample_id=str(_require(payload, "sample_id", "spec")),
        source_mode=str(_require(payload, "source_mode", "spec")),
        objects=objects,
        background=_background_from_json(_require(payload, "background", "spec"), base_dir),
        target=LayoutTarget(placements),
        caption_template_id=str(_require(payload, "caption_template_id", "spec")),
        K=int(_require(payload, "K", "spec")),
        canvas=canvas,
        seed=int(_require(payload, "seed", "spec")),
    )


def spec_to_json(spec: SampleSpec, base_dir: Path) -> dict:
    return {
        "schema": SCHEMA,
        "sample_id": spec.sample_id,
        "source_mode": spec.source_mode,
        "objects": [_asset_to_json(a, base_dir) for a in spec.objects],
        "background": _background_to_json(spec.background, base_dir),
        "target": {"placements": [_placement_to_json(p) for p in spec.target.placements]},
        "caption_template_id": spec.caption_template_id,
        "K": spec.K,
        "canvas": {"w": spec.canvas.width_px, "h": spec.canvas.height_px},
        "seed": spec.seed,
    }


def load_sample_spec(path: Path | str, check_files: bool = True) -> SampleSpec:
    """Load and fully validate a sample spec manifest."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path.name}: not valid JSON ({exc})") from exc
    spec = spec_from_json(payload, path.parent.resolve())
    validate_spec(spec, check_files=check_files)
    return spec


def write_sample_spec(spec: SampleSpec, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = spec_to_json(spec, path.parent.resolve())
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
    return path


def load_asset_registry(path: Path | str, check_files: bool = True) -> list[ObjectAsset]:
    """Load an asset registry manifest (used e.g. as a substitute pool)."""
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    check_schema(payload.get("schema"), "registry")
    assets = [
        _asset_from_json(o, path.parent.resolve(), i)
        for i, o in enumerate(_require(payload, "assets", "registry"))
    ]
    seen: set[str] = set()
    for asset in assets:
        if asset.id in seen:
            raise SpecError(f"registry: duplicate asset id {asset.id!r}")
        seen.add(asset.id)
        if check_files:
            _validate_asset_files(asset)
    return assets


def write_asset_registry(assets: list[ObjectAsset], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "schema": SCHEMA,
        "assets": [_asset_to_json(a, path.parent.resolve()) for a in assets],
    }
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Sample output layout


def frame_name(k: int) -> str:
    return f"frame_{k:04d}.png"


def write_sample(output: SampleOutput, out_dir: Path | str, force: bool = False) -> Path:
    """Write a sample to disk in the canonical layout. Returns the sample dir."""
    root = Path(out_dir) / output.sample_id
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"{root} exists and is not empty (pass force=True to overwrite)")
        import shutil

        shutil.rmtree(root)
    frames_dir = root / "frames"
    cond_dir = root / "conditioning"
    frames_dir.mkdir(parents=True, exist_ok=True)
    cond_dir.mkdir(parents=True, exist_ok=True)

    for k, frame in enumerate(output.frames):
        save_png(frame, frames_dir / frame_name(k))
    save_png(output.first_frame, cond_dir / "first_frame.png")
    for i, (_, img) in enumerate(output.object_images):
        save_png(img, cond_dir / f"obj_{i:02d}.png")
    if output.background_image is not None:
        save_png(output.background_image, cond_dir / "background.png")
    (root / "caption.txt").write_text(output.caption, encoding="utf-8")

    provenance = dict(output.provenance)
    provenance.setdefault("schema", SCHEMA)
    provenance["sample_id"] = output.sample_id
    provenance["supervised_frames"] = list(output.supervised_frames)
    provenance["conditioning_objects"] = [obj_id for obj_id, _ in output.object_images]
    (root / "provenance.json").write_text(canonical_json(provenance) + "\n", encoding="utf-8")
    return root


def read_provenance(sample_dir: Path | str) -> dict:
    path = Path(sample_dir) / "provenance.json"
    payload = json.loads(path.read_text(encoding="utf-8"))
    check_schema(payload.get("schema"), "provenance")
    return payload


def validate_output(output_dir: Path | str, spec: SampleSpec) -> list[str]:
    """Check a written sample directory against its spec. Empty list == valid."""
    root = Path(output_dir)
    violations: list[str] = []
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a readable directory")

    frames_dir = root / "frames"
    frame_files = sorted(frames_dir.glob("frame_*.png")) if frames_dir.is_dir() else []
    if len(frame_files) != spec.K:
        violations.append(f"frame count {len(frame_files)} != K={spec.K}")
    expected_names = [frame_name(k) for k in range(len(frame_files))]
    actual_names = [f.name for f in frame_files]
    if actual_names != expected_names:
        violations.append("frame files are not contiguously numbered from frame_0000")
    for f in frame_files:
        if image_size(f) != spec.canvas.size:
            violations.append(f"{f.name}: size {image_size(f)} != canvas {spec.canvas.size}")
            break

    try:
        provenance = read_provenance(root)
    except (FileNotFoundError, json.JSONDecodeError, SpecError) as exc:
        violations.append(f"provenance.json unreadable: {exc}")
        return violations

    supervised = provenance.get("supervised_frames")
    if not isinstance(supervised, list) or not supervised:
        violations.append("supervised_frames missing or empty")
    else:
        if any(not isinstance(k, int) or not (0 <= k < spec.K) for k in supervised):
            violations.append(f"supervised_frames out of range [0,{spec.K - 1}]")
        if (spec.K - 1) not in supervised:
            violations.append("last frame must always be supervised (loss uses the final frame)")

    if not (root / "caption.txt").is_file():
        violations.append("caption.txt missing")
    if not (root / "conditioning" / "first_frame.png").is_file():
        violations.append("conditioning/first_frame.png missing")
    return violations
