"""Batch orchestration: build one sample end to end, or a directory of them.

Every sample is a pure function of (spec, config, derived seed), so batches
reproduce byte-identically at any worker count and any subset of a batch
regenerates the same files.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import animator, background, compositor
from .augment import (
    AugmentationPlan,
    AugmentProbs,
    JitterRanges,
    apply_object_jitter,
    apply_plan,
    sample_augmentations,
)
from .captions import CaptionDirectives, TemplateLibrary, render_caption, validate_caption
from .compositor import Layer, Light, ShadowParams, Transform2D
from .detect_clean import CleanParams
from .errors import PlacementError, SpecError
from .manifest import (
    SCHEMA,
    LayoutTarget,
    ObjectAsset,
    SampleOutput,
    SampleSpec,
    canonical_json,
    load_asset_registry,
    load_sample_spec,
    spec_to_json,
    validate_spec,
    write_sample,
)
from .raster import load_rgba
from .rng import derive_seed, make_rng
from .sizing import relative_scale

N_SHRINK_RETRIES = 3
SHRINK_FACTOR = 0.9


@dataclass
class GenerationConfig:
    probs: AugmentProbs = AugmentProbs()
    jitter: JitterRanges = JitterRanges()
    bg_pool_weights: dict[str, float] = field(
        default_factory=lambda: {"photo": 1.0, "plain": 1.0, "procedural": 1.0}
    )
    default_k: int = 9
    light: Light = Light(direction_deg=135.0, elevation_deg=45.0)
    shadow: ShadowParams = ShadowParams()
    clean: CleanParams = CleanParams()
    conf_threshold: float = 0.35
    workers: int = 1
    global_seed: int = 0
    white_box_padding_frac: float = 0.08
    side_margin_frac: float = 0.10
    white_start_prob: float = 0.5
    scatter_max_tries: int = 200
    photo_pool_dir: Path | None = None
    substitute_pool_path: Path | None = None

    def __post_init__(self):
        for p in (self.probs.scene, self.probs.design, self.probs.replace, self.white_start_prob):
            if not (0.0 <= p <= 1.0):
                raise SpecError(f"config: probability {p} outside [0,1]")
        if self.workers < 1:
            raise SpecError("config: workers must be >= 1")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "probs": {"scene": self.probs.scene, "design": self.probs.design, "replace": self.probs.replace},
            "jitter": {
                "scale": list(self.jitter.scale),
                "rotation_deg": list(self.jitter.rotation_deg),
                "perspective_frac": self.jitter.perspective_frac,
            },
            "bg_pool_weights": dict(self.bg_pool_weights),
            "default_k": self.default_k,
            "light": {"direction_deg": self.light.direction_deg, "elevation_deg": self.light.elevation_deg},
            "shadow": {"blur_px": self.shadow.blur_px, "opacity": self.shadow.opacity},
            "clean": {
                "min_cov": self.clean.min_cov,
                "max_cov": self.clean.max_cov,
                "dup_iou": self.clean.dup_iou,
                "containment_frac": self.clean.containment_frac,
            },
            "conf_threshold": self.conf_threshold,
            "workers": self.workers,
            "global_seed": self.global_seed,
            "white_box_padding_frac": self.white_box_padding_frac,
            "side_margin_frac": self.side_margin_frac,
            "white_start_prob": self.white_start_prob,
            "scatter_max_tries": self.scatter_max_tries,
            "photo_pool_dir": str(self.photo_pool_dir) if self.photo_pool_dir else None,
            "substitute_pool_path": str(self.substitute_pool_path) if self.substitute_pool_path else None,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "GenerationConfig":
        kwargs: dict = {}
        if "probs" in payload:
            kwargs["probs"] = AugmentProbs(**payload["probs"])
        if "jitter" in payload:
            j = payload["jitter"]
            kwargs["jitter"] = JitterRanges(
                scale=tuple(j.get("scale", (0.7, 1.3))),
                rotation_deg=tuple(j.get("rotation_deg", (-15.0, 15.0))),
                perspective_frac=j.get("perspective_frac", 0.05),
            )
        if "bg_pool_weights" in payload:
            kwargs["bg_pool_weights"] = dict(payload["bg_pool_weights"])
        if "light" in payload:
            kwargs["light"] = Light(**payload["light"])
        if "shadow" in payload:
            kwargs["shadow"] = ShadowParams(**payload["shadow"])
        if "clean" in payload:
            kwargs["clean"] = CleanParams(**payload["clean"])
        for name in (
            "default_k", "conf_threshold", "workers", "global_seed",
            "white_box_padding_frac", "side_margin_frac", "white_start_prob",
            "scatter_max_tries",
        ):
            if name in payload:
                kwargs[name] = payload[name]
        if payload.get("photo_pool_dir"):
            kwargs["photo_pool_dir"] = Path(payload["photo_pool_dir"])
        if payload.get("substitute_pool_path"):
            kwargs["substitute_pool_path"] = Path(payload["substitute_pool_path"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Path | str) -> "GenerationConfig":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_json(payload)


@dataclass
class RenderContext:
    """Everything needed to render one sample, fully resolved."""

    spec: SampleSpec
    plan: AugmentationPlan
    directives: CaptionDirectives
    timeline: animator.Timeline
    assets: dict[str, animator.RenderAsset]
    backgrounds: animator.BackgroundStates
    conditioning: list[tuple[str, np.ndarray]]
    include_background_image: bool
    white_start: bool


def _load_variants(asset: ObjectAsset) -> list[np.ndarray]:
    return [load_rgba(asset.cutout_path)] + [load_rgba(v) for v in asset.relit_variants]


def _transform_extent(size: tuple[int, int], t: Transform2D) -> tuple[float, float]:
    quad = t.corners(size)
    return (
        float(quad[:, 0].max() - quad[:, 0].min()),
        float(quad[:, 1].max() - quad[:, 1].min()),
    )


def _scatter_with_shrink(
    items: list[tuple[float, float]],
    canvas: tuple[int, int],
    seed: int,
    max_tries: int,
) -> tuple[list[tuple[float, float]], float]:
    """Scatter, shrinking all items by 10% per retry, up to 3 shrinks."""
    factor = 1.0
    for attempt in range(N_SHRINK_RETRIES + 1):
        scaled = [(w * factor, h * factor) for w, h in items]
        try:
            centers = compositor.scatter_layout(
                scaled, canvas, derive_seed(seed, "scatter", attempt), max_tries
            )
            return centers, factor
        except PlacementError:
            if attempt == N_SHRINK_RETRIES:
                raise
            factor *= SHRINK_FACTOR
    raise AssertionError("unreachable")


def _resolve_background(
    spec: SampleSpec, plan: AugmentationPlan, config: GenerationConfig, seed: int
) -> np.ndarray:
    """Resolve the final background raster. Procedural-kind specs are the
    aleatory ones: the plan's pool choice picks among the three pools."""
    size = spec.canvas.size
    pools = {"photo_dir": config.photo_pool_dir} if config.photo_pool_dir else None
    bg = spec.background
    if bg.kind == "procedural":
        pool = plan.bg_pool_choice
        if pool == "photo" and config.photo_pool_dir is None:
            pool = "procedural"
        if pool == "plain":
            rng = make_rng(derive_seed(seed, "plain-color"))
            color = tuple(int(v) for v in rng.integers(0, 256, size=3))
            return np.broadcast_to(np.asarray(color, dtype=np.uint8), (size[1], size[0], 3)).copy()
        if pool == "photo":
            photo_spec = replace(bg, kind="photo", photo_path=None, procedural_seed=None)
            return background.pick_background(photo_spec, pools, derive_seed(seed, "bg"), size)
    return background.pick_background(bg, pools, derive_seed(seed, "bg"), size)


def _baked_layers(
    spec: SampleSpec,
    plan: AugmentationPlan,
    variants: dict[str, list[np.ndarray]],
) -> list[Layer]:
    layers = []
    baked = [p for p in spec.target.placements if p.object_id in set(plan.scene_completion)]
    for i, placement in enumerate(sorted(baked, key=lambda p: p.z_order)):
        raster = animator.relight_blend(variants[placement.object_id], placement.relight_t)
        transform = Transform2D(
            scale=placement.scale,
            rotation_deg=placement.rotation_deg,
            translation_xy=placement.center_xy,
            perspective_offsets=placement.perspective,
        )
        layers.append(Layer(raster=raster, transform=transform, alpha_mul=1.0, z=i))
    return layers


def _side_by_side_target(
    spec: SampleSpec, config: GenerationConfig, cutout_sizes: dict[str, tuple[int, int]]
) -> LayoutTarget:
    """Recompute target scales and centers from real-world sizes: objects sit
    side by side on a shared ground line, height ratio exact."""
    a, b = spec.objects
    sizes = (cutout_sizes[a.id], cutout_sizes[b.id])
    heights = relative_scale((a, b), spec.canvas.size, config.side_margin_frac, sizes)
    m = config.side_margin_frac
    cw, ch = spec.canvas.size
    ground_y = ch * (1.0 - m)
    scales = (heights[0] / sizes[0][1], heights[1] / sizes[1][1])
    widths = (sizes[0][0] * scales[0], sizes[1][0] * scales[1])
    gap = (cw * (1.0 - 2.0 * m) - widths[0] - widths[1]) / 3.0
    x_a = cw * m + gap + widths[0] / 2.0
    x_b = x_a + widths[0] / 2.0 + gap + widths[1] / 2.0
    by_id = spec.target.by_id()
    placements = (
        replace(
            by_id[a.id],
            center_xy=(x_a, ground_y - heights[0] / 2.0),
            scale=scales[0],
            rotation_deg=0.0,
            perspective=((0.0, 0.0),) * 4,
        ),
        replace(
            by_id[b.id],
            center_xy=(x_b, ground_y - heights[1] / 2.0),
            scale=scales[1],
            rotation_deg=0.0,
            perspective=((0.0, 0.0),) * 4,
        ),
    )
    return LayoutTarget(placements)


def _plan_for_mode(
    spec: SampleSpec,
    config: GenerationConfig,
    seed: int,
    substitute_pool: list[ObjectAsset] | None,
) -> AugmentationPlan:
    if spec.source_mode in ("in_the_wild", "manual_design"):
        return sample_augmentations(
            spec, config.probs, config.jitter, seed, substitute_pool, config.bg_pool_weights
        )
    if spec.source_mode == "side_by_side":
        jitter_only = sample_augmentations(
            spec, AugmentProbs(0.0, 0.0, 0.0), config.jitter, seed, None, config.bg_pool_weights
        )
        return jitter_only
    return AugmentationPlan(jitter={}, bg_pool_choice="procedural")


def build_render_context(
    spec: SampleSpec,
    config: GenerationConfig,
    seed: int,
    substitute_pool: list[ObjectAsset] | None = None,
) -> RenderContext:
    """Resolve augmentations, placements, and rasters for a motion sample."""
    validate_spec(spec)
    if substitute_pool is None and config.substitute_pool_path is not None:
        substitute_pool = load_asset_registry(config.substitute_pool_path)

    plan = _plan_for_mode(spec, config, seed, substitute_pool)
    mutated, directives = apply_plan(spec, plan, substitute_pool)

    variants = {a.id: _load_variants(a) for a in mutated.objects}
    cutout_sizes = {
        oid: (v[0].shape[1], v[0].shape[0]) for oid, v in variants.items()
    }

    target = mutated.target
    if spec.source_mode == "side_by_side":
        target = _side_by_side_target(mutated, config, cutout_sizes)

    final_bg = _resolve_background(mutated, plan, config, seed)
    baked = _baked_layers(replace(mutated, target=target), plan, variants)
    if baked:
        final_bg = compositor.composite_frame(final_bg, baked)

    if spec.source_mode == "side_by_side":
        white_start = False
    else:
        white_start = make_rng(derive_seed(seed, "white-start")).random() < config.white_start_prob
    initial_canvas = (
        np.full((spec.canvas.height_px, spec.canvas.width_px, 3), 255, dtype=np.uint8)
        if white_start
        else final_bg
    )
    if baked and white_start:
        initial_canvas = compositor.composite_frame(initial_canvas, baked)

    scene = set(plan.scene_completion)
    design = set(plan.design_elements)
    victim_id = plan.replacement.victim_id if plan.replacement else None
    animated_ids = [a.id for a in mutated.objects if a.id not in scene and a.id not in design]

    boxes = {
        oid: compositor.white_box_embed(variants[oid][0], config.white_box_padding_frac)
        for oid in animated_ids
    }
    target_by_id = target.by_id()
    original_by_id = spec.target.by_id()

    def jitter_for(oid: str):
        # the substitute is absent from the sampled plan; its jitter derives
        # from the same per-object seed rule
        if oid in plan.jitter:
            return plan.jitter[oid]
        return apply_object_jitter(derive_seed(seed, "jitter", oid), config.jitter)

    # scatter the boxed, jittered objects (plus the fading victim, if any)
    scatter_ids = list(animated_ids)
    victim_variants: list[np.ndarray] | None = None
    if victim_id is not None:
        victim_asset = next(a for a in spec.objects if a.id == victim_id)
        victim_variants = _load_variants(victim_asset)
        boxes[victim_id] = compositor.white_box_embed(
            victim_variants[0], config.white_box_padding_frac
        )
        scatter_ids.append(victim_id)

    init_transforms: dict[str, Transform2D] = {}
    items: list[tuple[float, float]] = []
    for oid in scatter_ids:
        jit = jitter_for(oid)
        box_h, box_w = boxes[oid].shape[:2]
        base = target_by_id.get(oid) or original_by_id[oid]
        t = Transform2D(
            scale=base.scale * jit.scale_mul,
            rotation_deg=base.rotation_deg + jit.rotation_deg,
            translation_xy=(0.0, 0.0),
            perspective_offsets=jit.perspective_px((box_w, box_h)),
        )
        init_transforms[oid] = t
        items.append(_transform_extent((box_w, box_h), t))

    centers, shrink = _scatter_with_shrink(
        items, spec.canvas.size, seed, config.scatter_max_tries
    )

    initial_states: dict[str, animator.ObjectState] = {}
    for oid, center in zip(scatter_ids, centers):
        t = init_transforms[oid]
        initial_states[oid] = animator.ObjectState(
            center=center,
            scale=t.scale * shrink,
            rotation_deg=t.rotation_deg,
            perspective=t.perspective_offsets,
        )

    animated_target = LayoutTarget(
        tuple(p for p in target.placements if p.object_id not in scene)
    )
    sizes = {oid: (boxes[oid].shape[1], boxes[oid].shape[0]) for oid in boxes}
    for oid in design:
        sizes[oid] = cutout_sizes[oid]

    timeline = animator.plan_timeline(
        {oid: st for oid, st in initial_states.items() if oid != victim_id},
        animated_target,
        spec.K,
        spec.source_mode,
        canvas=spec.canvas.size,
        white_start=white_start,
        sizes=sizes,
        design_elements=sorted(design),
    )

    assets = {
        oid: animator.RenderAsset(
            variants=variants[oid], box=None if oid in design else boxes[oid]
        )
        for oid in (set(animated_ids) | design)
    }

    if victim_id is not None:
        us = [k / (spec.K - 1) for k in range(spec.K)]
        st = initial_states[victim_id]
        constant = Transform2D(
            scale=st.scale,
            rotation_deg=st.rotation_deg,
            translation_xy=st.center,
            perspective_offsets=st.perspective,
        )
        min_z = min(p.z_order for p in target.placements)
        timeline.tracks.append(
            animator.ObjectTrack(
                object_id=victim_id,
                transforms=[constant] * spec.K,
                white_box_alpha=[1.0 - u for u in us],
                relight_t=[0.0] * spec.K,
                z_order=min_z - 1,
                layer_alpha=[1.0 - u for u in us],
            )
        )
        assets[victim_id] = animator.RenderAsset(
            variants=victim_variants, box=boxes[victim_id]
        )

    if spec.source_mode == "side_by_side":
        for track in timeline.tracks:
            placement = target_by_id[track.object_id]
            source = animator.relight_blend(
                variants[track.object_id], placement.relight_t
            )
            raster, offset = compositor.render_shadow(source, config.light, config.shadow)
            track.shadow = animator.ShadowAttachment(raster=raster, offset=offset)

    conditioning = [(oid, boxes[oid]) for oid in animated_ids]
    include_bg = spec.background.kind in ("photo", "inpainted_original")
    return RenderContext(
        spec=mutated,
        plan=plan,
        directives=directives,
        timeline=timeline,
        assets=assets,
        backgrounds=animator.BackgroundStates(
            initial_canvas=initial_canvas, final_background=final_bg
        ),
        conditioning=conditioning,
        include_background_image=include_bg,
        white_start=white_start,
    )


def _build_subject_pair(
    spec: SampleSpec, config: GenerationConfig, seed: int, templates: TemplateLibrary
) -> SampleOutput:
    asset = spec.objects[0]
    variants = _load_variants(asset)
    boxed = compositor.white_box_embed(variants[0], config.white_box_padding_frac)
    placement = spec.target.placements[0]

    white = np.full((spec.canvas.height_px, spec.canvas.width_px, 3), 255, dtype=np.uint8)
    box_h, box_w = boxed.shape[:2]
    centers = compositor.scatter_layout(
        [(box_w, box_h)], spec.canvas.size, derive_seed(seed, "scatter", 0), config.scatter_max_tries
    )
    first = compositor.composite_frame(
        white, [Layer(raster=boxed, transform=Transform2D(translation_xy=centers[0]), z=0)]
    )

    final_bg = background.pick_background(
        spec.background,
        {"photo_dir": config.photo_pool_dir} if config.photo_pool_dir else None,
        derive_seed(seed, "bg"),
        spec.canvas.size,
    )
    cutout = animator.relight_blend(variants, placement.relight_t)
    last = compositor.composite_frame(
        final_bg,
        [
            Layer(
                raster=cutout,
                transform=Transform2D(
                    scale=placement.scale,
                    rotation_deg=placement.rotation_deg,
                    translation_xy=placement.center_xy,
                    perspective_offsets=placement.perspective,
                ),
                z=0,
            )
        ],
    )
    frames, supervised = animator.crossfade_pair(first, last, spec.K)

    directives = CaptionDirectives(
        wrapped=[asset.description],
        background=spec.background.description or "the background",
    )
    template = templates.resolve(spec.caption_template_id, 1)
    caption = render_caption(template, directives)

    return SampleOutput(
        sample_id=spec.sample_id,
        frames=frames,
        first_frame=frames[0],
        object_images=[(asset.id, boxed)],
        background_image=final_bg
        if spec.background.kind in ("photo", "inpainted_original")
        else None,
        caption=caption,
        supervised_frames=supervised,
    )


def build_sample(
    spec: SampleSpec,
    config: GenerationConfig,
    seed: int,
    templates: TemplateLibrary | None = None,
    substitute_pool: list[ObjectAsset] | None = None,
    provenance_dir: Path | None = None,
) -> SampleOutput:
    """Render one full training sample from its spec; pure in (spec, config, seed)."""
    validate_spec(spec)
    templates = templates or TemplateLibrary.builtin()

    if spec.source_mode == "subject_pair":
        output = _build_subject_pair(spec, config, seed, templates)
        plan_json = AugmentationPlan(jitter={}, bg_pool_choice="procedural").to_json()
    else:
        ctx = build_render_context(spec, config, seed, substitute_pool)
        frames = animator.render_video(ctx.timeline, ctx.assets, ctx.backgrounds)
        template = templates.resolve(spec.caption_template_id, len(ctx.directives.wrapped))
        caption = render_caption(template, ctx.directives)
        problems = validate_caption(
            caption, len(ctx.directives.wrapped), template.has_bg()
        )
        if problems:
            raise SpecError(f"rendered caption failed validation: {problems}")
        output = SampleOutput(
            sample_id=spec.sample_id,
            frames=frames,
            first_frame=frames[0],
            object_images=ctx.conditioning,
            background_image=ctx.backgrounds.final_background
            if ctx.include_background_image
            else None,
            caption=caption,
            supervised_frames=ctx.timeline.supervised_frames,
        )
        plan_json = ctx.plan.to_json()

    base = provenance_dir if provenance_dir is not None else Path.cwd()
    # worker count is execution machinery; it must never affect output bytes
    config_json = {k: v for k, v in config.to_json().items() if k != "workers"}
    output.provenance = {
        "schema": SCHEMA,
        "seed": seed,
        "spec": spec_to_json(spec, Path(base)),
        "augmentation_plan": plan_json,
        "config": config_json,
    }
    return output


def _build_one(args: tuple[str, str, dict, int]) -> tuple[str, bool, str]:
    """Worker entry: build and write a single sample; never raises."""
    spec_path, out_dir, config_json, global_seed = args
    sample_id = Path(spec_path).name.removesuffix(".spec.json")
    try:
        config = GenerationConfig.from_json(config_json)
        spec = load_sample_spec(spec_path)
        sample_id = spec.sample_id
        seed = derive_seed(global_seed, spec.sample_id)
        output = build_sample(
            spec, config, seed, provenance_dir=Path(out_dir) / spec.sample_id
        )
        write_sample(output, out_dir, force=True)
        return (sample_id, True, "")
    except Exception as exc:  # noqa: BLE001 - failures are isolated per sample
        return (sample_id, False, f"{type(exc).__name__}: {exc}")


def run_batch(
    manifest_dir: Path | str,
    out_dir: Path | str,
    config: GenerationConfig,
) -> dict:
    """Build every *.spec.json under manifest_dir into out_dir.

    Failures are isolated per sample; the summary file contains only
    deterministic fields so output trees are byte-stable.
    """
    manifest_dir = Path(manifest_dir)
    if not manifest_dir.is_dir():
        raise FileNotFoundError(f"{manifest_dir} is not a readable directory")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_paths = sorted(manifest_dir.glob("*.spec.json"))

    start = time.perf_counter()
    jobs = [(str(p), str(out), config.to_json(), config.global_seed) for p in spec_paths]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_build_one, jobs))
    else:
        results = [_build_one(job) for job in jobs]
    elapsed = time.perf_counter() - start

    failures = sorted(
        ({"sample_id": sid, "reason": reason} for sid, ok, reason in results if not ok),
        key=lambda f: f["sample_id"],
    )
    summary = {
        "schema": SCHEMA,
        "built": sum(1 for _, ok, _ in results if ok),
        "failed": len(failures),
        "failures": failures,
    }
    (out / "batch_summary.json").write_text(canonical_json(summary) + "\n", encoding="utf-8")
    return {**summary, "elapsed": elapsed}
