from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path

import numpy as np
import pytest

from placid_forge.augment import AugmentProbs, JitterRanges
from placid_forge.build import GenerationConfig, build_render_context, build_sample, run_batch
from placid_forge.compositor import composite_frame, _warp_premult
from placid_forge.animator import render_video, target_layers
from placid_forge.captions import validate_caption
from placid_forge.errors import SpecError
from placid_forge.manifest import (
    BackgroundSpec,
    RealDims,
    load_sample_spec,
    validate_output,
    write_asset_registry,
    write_sample,
    write_sample_spec,
)

from conftest import make_asset, make_spec
from oracles import alpha_centroid

QUIET = GenerationConfig(probs=AugmentProbs(0, 0, 0))


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def test_build_sample_deterministic_tree(assets_dir, tmp_path):
    spec = make_spec(assets_dir, n_objects=2, K=5)
    out = build_sample(spec, QUIET, seed=4, provenance_dir=tmp_path / "a" / spec.sample_id)
    write_sample(out, tmp_path / "a")
    out2 = build_sample(spec, QUIET, seed=4, provenance_dir=tmp_path / "b" / spec.sample_id)
    write_sample(out2, tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_build_output_passes_validation(assets_dir, tmp_path):
    spec = make_spec(assets_dir, n_objects=3, K=4)
    out = build_sample(spec, QUIET, seed=9, provenance_dir=tmp_path / spec.sample_id)
    root = write_sample(out, tmp_path)
    assert validate_output(root, spec) == []


def test_caption_well_formed(assets_dir, tmp_path):
    spec = make_spec(assets_dir, n_objects=2, K=3)
    out = build_sample(spec, QUIET, seed=1)
    assert validate_caption(out.caption, 2, True) == []
    assert out.caption.count("<OBJ>") == 2


def test_last_frame_is_target_composite(assets_dir):
    spec = make_spec(assets_dir, n_objects=3, K=7)
    ctx = build_render_context(spec, QUIET, seed=12)
    frames = render_video(ctx.timeline, ctx.assets, ctx.backgrounds)
    standalone = composite_frame(
        ctx.backgrounds.final_background, target_layers(ctx.timeline, ctx.assets)
    )
    assert np.array_equal(frames[-1], standalone)


def test_subject_pair_supervision_and_shape(assets_dir, tmp_path):
    spec = make_spec(assets_dir, mode="subject_pair", n_objects=1, K=6)
    out = build_sample(spec, QUIET, seed=3)
    assert out.supervised_frames == [5]
    assert len(out.frames) == 6
    assert len(out.object_images) == 1
    # first frame is the boxed object on white
    corners = out.frames[0][[0, -1]][:, [0, -1]]
    assert np.all(corners == 255)


def test_other_modes_supervise_all_frames(assets_dir):
    spec = make_spec(assets_dir, n_objects=2, K=5)
    out = build_sample(spec, QUIET, seed=3)
    assert out.supervised_frames == list(range(5))


def test_side_by_side_silhouette_ratio(assets_dir):
    dims = [RealDims(0.5, 2.0, 0.5), RealDims(0.5, 1.0, 0.5)]
    spec = make_spec(
        assets_dir,
        mode="side_by_side",
        n_objects=2,
        K=5,
        canvas=(320, 240),
        real_dims=dims,
        sizes=[(30, 60), (30, 60)],
    )
    ctx = build_render_context(spec, QUIET, seed=21)
    heights = {}
    for track in ctx.timeline.tracks:
        cut = ctx.assets[track.object_id].variants[0]
        _, a = _warp_premult(cut, track.transforms[-1], spec.canvas.size)
        rows = np.flatnonzero(a.sum(axis=1) > 0.5)
        heights[track.object_id] = rows[-1] - rows[0] + 1
    h = sorted(heights.values())
    assert abs(h[1] / h[0] - 2.0) < 0.04
    # both tracks carry shadows
    assert all(t.shadow is not None for t in ctx.timeline.tracks)


def test_side_by_side_requires_real_dims(assets_dir):
    spec = make_spec(assets_dir, mode="side_by_side", n_objects=2, K=3)
    with pytest.raises(ValueError, match="real-world"):
        build_sample(spec, QUIET, seed=0)


def test_scene_completion_bakes_into_all_frames(assets_dir):
    spec = make_spec(assets_dir, n_objects=3, K=5, canvas=(200, 160))
    # force scene completion on every sample via probability 1
    config = GenerationConfig(probs=AugmentProbs(scene=1.0, design=0.0, replace=0.0))
    ctx = build_render_context(spec, config, seed=8)
    assert ctx.plan.scene_completion
    baked_ids = set(ctx.plan.scene_completion)
    plain = build_render_context(spec, QUIET, seed=8)
    target_by_id = {p.object_id: p for p in spec.target.placements}
    cutout_color = {o.id: tuple(int(c) for c in np.asarray(
        __import__("placid_forge.raster", fromlist=["load_rgba"]).load_rgba(o.cutout_path)[0, 0, :3]
    )) for o in spec.objects}
    for oid in baked_ids:
        x, y = (int(v) for v in target_by_id[oid].center_xy)
        # frame-diff oracle: both background states carry the baked object,
        # the unaugmented background does not
        assert tuple(ctx.backgrounds.final_background[y, x]) == cutout_color[oid]
        assert tuple(ctx.backgrounds.initial_canvas[y, x]) == cutout_color[oid]
        assert tuple(plain.backgrounds.final_background[y, x]) != cutout_color[oid]
    # conditioning excludes baked objects
    cond_ids = {oid for oid, _ in ctx.conditioning}
    assert cond_ids.isdisjoint(baked_ids)
    assert len(ctx.directives.wrapped) == 3 - len(baked_ids)
    # baked descriptions move into the background text
    for oid in baked_ids:
        desc = next(o.description for o in spec.objects if o.id == oid)
        assert desc in ctx.directives.background


def test_design_element_absent_from_first_frame(assets_dir):
    spec = make_spec(assets_dir, n_objects=2, K=5, canvas=(200, 160))
    config = GenerationConfig(probs=AugmentProbs(scene=0.0, design=1.0, replace=0.0))
    ctx = build_render_context(spec, config, seed=2)
    assert set(ctx.plan.design_elements) == {o.id for o in spec.objects}
    for track in ctx.timeline.tracks:
        if not track.fly_in:
            continue
        cut = ctx.assets[track.object_id].variants[0]
        _, a0 = _warp_premult(cut, track.transforms[0], spec.canvas.size)
        assert a0.sum() == 0.0  # fully off-canvas in F1
        _, a_last = _warp_premult(cut, track.transforms[-1], spec.canvas.size)
        assert a_last.sum() > 0
    # descriptions appear in the caption outside OBJ blocks
    out = build_sample(spec, config, seed=2)
    assert "<OBJ>" not in out.caption
    for obj in spec.objects:
        assert obj.description in out.caption
    assert ctx.conditioning == []


def test_replacement_swaps_conditioning_image(assets_dir):
    pool = [make_asset(assets_dir, "substitute_x", color=(1, 2, 3))]
    write_asset_registry(pool, assets_dir / "registry.json")
    spec = make_spec(assets_dir, n_objects=2, K=4)
    config = GenerationConfig(probs=AugmentProbs(scene=0.0, design=0.0, replace=1.0))
    ctx = build_render_context(spec, config, seed=5, substitute_pool=pool)
    assert ctx.plan.replacement is not None
    victim = ctx.plan.replacement.victim_id
    cond_ids = {oid for oid, _ in ctx.conditioning}
    assert "substitute_x" in cond_ids and victim not in cond_ids
    # victim still renders in frame 0 (fading) but is gone from the last frame
    victim_track = next(t for t in ctx.timeline.tracks if t.object_id == victim)
    assert victim_track.layer_alpha[0] == 1.0
    assert victim_track.layer_alpha[-1] == 0.0
    out = build_sample(spec, config, seed=5, substitute_pool=pool)
    assert "replaced by" in out.caption


def test_white_start_fades_background_in(assets_dir):
    bg = BackgroundSpec(kind="procedural", procedural_seed=3, description="patterned")
    spec = make_spec(assets_dir, n_objects=1, K=5, background=bg, canvas=(64, 64))
    config = dataclasses.replace(QUIET, white_start_prob=1.0, bg_pool_weights={"procedural": 1.0})
    ctx = build_render_context(spec, config, seed=6)
    assert ctx.white_start
    assert np.all(ctx.backgrounds.initial_canvas == 255)
    frames = render_video(ctx.timeline, ctx.assets, ctx.backgrounds)
    assert np.array_equal(
        frames[-1],
        composite_frame(ctx.backgrounds.final_background, target_layers(ctx.timeline, ctx.assets)),
    )


def test_placement_shrink_on_crowded_canvas(assets_dir):
    # two 52px boxed objects cannot be disjoint on a 100px canvas at full
    # scale, so the shrink ladder must kick in; per-seed depth is frozen
    spec = make_spec(assets_dir, n_objects=2, K=3, canvas=(100, 100), sizes=[(44, 44), (44, 44)])
    config = dataclasses.replace(
        QUIET, jitter=JitterRanges(scale=(1, 1), rotation_deg=(0, 0), perspective_frac=0)
    )
    for seed, depth in [(0, 1), (2, 2), (10, 3)]:
        ctx = build_render_context(spec, config, seed=seed)
        for track in ctx.timeline.tracks:
            assert track.transforms[0].scale == pytest.approx(0.9**depth), seed


def test_placement_gives_up_after_three_shrinks(assets_dir):
    from placid_forge.errors import PlacementError

    spec = make_spec(assets_dir, n_objects=2, K=3, canvas=(64, 64), sizes=[(60, 60), (60, 60)])
    config = dataclasses.replace(
        QUIET, jitter=JitterRanges(scale=(1, 1), rotation_deg=(0, 0), perspective_frac=0)
    )
    with pytest.raises(PlacementError):
        build_render_context(spec, config, seed=0)


def test_build_rejects_invalid_spec(assets_dir):
    spec = make_spec(assets_dir, n_objects=2, K=1)
    with pytest.raises(SpecError, match="K must be"):
        build_sample(spec, QUIET, seed=0)


# -- run_batch ----------------------------------------------------------------


def _write_batch(assets_dir, tmp_path, n_specs=3, bad=0):
    manifest_dir = tmp_path / "manifests"
    manifest_dir.mkdir()
    for i in range(n_specs):
        spec = make_spec(assets_dir, sample_id=f"batch_{i:02d}", n_objects=2, K=3, seed=i)
        write_sample_spec(spec, manifest_dir / f"batch_{i:02d}.spec.json")
    for i in range(bad):
        (manifest_dir / f"broken_{i}.spec.json").write_text("{not json")
    return manifest_dir


def test_empty_batch(tmp_path):
    manifest_dir = tmp_path / "empty"
    manifest_dir.mkdir()
    summary = run_batch(manifest_dir, tmp_path / "out", QUIET)
    assert summary["built"] == 0 and summary["failed"] == 0


def test_batch_worker_count_invariance(assets_dir, tmp_path):
    manifest_dir = _write_batch(assets_dir, tmp_path, n_specs=4)
    cfg1 = dataclasses.replace(QUIET, workers=1, global_seed=11)
    cfg4 = dataclasses.replace(QUIET, workers=4, global_seed=11)
    s1 = run_batch(manifest_dir, tmp_path / "w1", cfg1)
    s4 = run_batch(manifest_dir, tmp_path / "w4", cfg4)
    assert s1["built"] == s4["built"] == 4
    assert tree_hash(tmp_path / "w1") == tree_hash(tmp_path / "w4")


def test_batch_failure_isolated_with_reason(assets_dir, tmp_path):
    manifest_dir = _write_batch(assets_dir, tmp_path, n_specs=2, bad=1)
    summary = run_batch(manifest_dir, tmp_path / "out", QUIET)
    assert summary["built"] == 2
    assert summary["failed"] == 1
    assert "broken_0" in summary["failures"][0]["sample_id"]
    assert summary["failures"][0]["reason"]


def test_batch_samples_loadable_and_valid(assets_dir, tmp_path):
    manifest_dir = _write_batch(assets_dir, tmp_path, n_specs=2)
    run_batch(manifest_dir, tmp_path / "out", QUIET)
    for spec_path in manifest_dir.glob("*.spec.json"):
        spec = load_sample_spec(spec_path)
        assert validate_output(tmp_path / "out" / spec.sample_id, spec) == []


def test_regeneration_from_provenance_bit_identical(assets_dir, tmp_path):
    from placid_forge.manifest import read_provenance, spec_from_json

    spec = make_spec(assets_dir, sample_id="regen", n_objects=2, K=4)
    config = GenerationConfig()  # default probabilities, full augmentation space
    out = build_sample(spec, config, seed=17, provenance_dir=tmp_path / "a" / "regen",
                       substitute_pool=[make_asset(assets_dir, "regen_sub")])
    root_a = write_sample(out, tmp_path / "a")

    prov = read_provenance(root_a)
    spec2 = spec_from_json(prov["spec"], root_a)
    config2 = GenerationConfig.from_json(prov["config"])
    out2 = build_sample(spec2, config2, seed=prov["seed"],
                        provenance_dir=tmp_path / "b" / "regen",
                        substitute_pool=[make_asset(assets_dir, "regen_sub")])
    root_b = write_sample(out2, tmp_path / "b")
    assert tree_hash(root_a) == tree_hash(root_b)
