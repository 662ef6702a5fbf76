from __future__ import annotations

import numpy as np
import pytest

from placid_forge.animator import (
    BackgroundStates,
    ObjectState,
    RenderAsset,
    crossfade_pair,
    frame_layers,
    lerp,
    plan_timeline,
    relight_blend,
    render_video,
    shortest_angle_delta,
    target_layers,
)
from placid_forge.compositor import composite_frame, white_box_embed, _warp_premult
from placid_forge.manifest import LayoutTarget, Placement
from placid_forge.raster import save_png

from oracles import alpha_centroid


def flat_rgba(rgb, size=(12, 8), alpha=255):
    w, h = size
    raster = np.zeros((h, w, 4), dtype=np.uint8)
    raster[:, :, :3] = rgb
    raster[:, :, 3] = alpha
    return raster


def simple_setup(K=9, white_start=True, rotation=(0.0, 0.0), design=()):
    target = LayoutTarget(
        (
            Placement("a", center_xy=(80.0, 40.0), scale=1.0, rotation_deg=rotation[1], z_order=0),
            Placement("b", center_xy=(30.0, 70.0), scale=1.5, rotation_deg=0.0, z_order=1),
        )
    )
    initial = {
        oid: ObjectState(center=(10.0 + 5 * i, 12.0 + 4 * i), scale=0.8, rotation_deg=rotation[0])
        for i, oid in enumerate(x for x in ("a", "b") if x not in design)
    }
    sizes = {"a": (12, 8), "b": (12, 8)}
    timeline = plan_timeline(
        initial, target, K, "manual_design",
        canvas=(120, 100), white_start=white_start, sizes=sizes, design_elements=design,
    )
    cut_a = flat_rgba((200, 40, 40))
    cut_b = flat_rgba((40, 60, 220))
    assets = {
        "a": RenderAsset(variants=[cut_a], box=None if "a" in design else white_box_embed(cut_a, 0.1)),
        "b": RenderAsset(variants=[cut_b], box=white_box_embed(cut_b, 0.1)),
    }
    return timeline, assets


# -- planning -----------------------------------------------------------------


def test_midpoint_center():
    timeline, _ = simple_setup(K=9)
    track = next(t for t in timeline.tracks if t.object_id == "a")
    assert track.transforms[4].translation_xy == (45.0, 26.0)  # lerp((10,12),(80,40),0.5)


def test_endpoints_exact():
    timeline, _ = simple_setup(K=9)
    track = next(t for t in timeline.tracks if t.object_id == "a")
    assert track.transforms[0].translation_xy == (10.0, 12.0)
    assert track.transforms[0].scale == 0.8
    assert track.transforms[8].translation_xy == (80.0, 40.0)
    assert track.transforms[8].scale == 1.0


def test_white_box_alpha_linear_fade():
    timeline, _ = simple_setup(K=9)
    track = timeline.tracks[0]
    assert track.white_box_alpha[0] == 1.0
    assert track.white_box_alpha[4] == 0.5
    assert track.white_box_alpha[8] == 0.0
    diffs = np.diff(track.white_box_alpha)
    assert np.all(diffs < 0)


def test_displacement_constant_across_frames():
    timeline, _ = simple_setup(K=9)
    for track in timeline.tracks:
        centers = np.array([t.translation_xy for t in track.transforms])
        steps = np.diff(centers, axis=0)
        assert np.max(np.abs(steps - steps[0])) < 1e-9


def test_background_fade_white_start_vs_not():
    t_white, _ = simple_setup(K=5, white_start=True)
    assert t_white.background_fade_alpha == [0.0, 0.25, 0.5, 0.75, 1.0]
    t_bg, _ = simple_setup(K=5, white_start=False)
    assert t_bg.background_fade_alpha == [1.0] * 5


def test_supervised_frames_by_mode():
    timeline, _ = simple_setup(K=7)
    assert timeline.supervised_frames == list(range(7))
    target = LayoutTarget((Placement("a", center_xy=(30.0, 30.0), scale=1.0, z_order=0),))
    pair = plan_timeline(
        {"a": ObjectState(center=(10.0, 10.0), scale=1.0)},
        target, 7, "subject_pair",
        canvas=(60, 60), white_start=True, sizes={"a": (8, 8)},
    )
    assert pair.supervised_frames == [6]


def test_rotation_shortest_path_and_ccw_tie():
    assert shortest_angle_delta(0.0, 90.0) == 90.0
    assert shortest_angle_delta(0.0, 270.0) == -90.0
    assert shortest_angle_delta(350.0, 10.0) == 20.0
    assert shortest_angle_delta(0.0, 180.0) == 180.0  # tie resolved counter-clockwise


def test_rotation_endpoint_exact_across_wrap():
    timeline, _ = simple_setup(K=5, rotation=(350.0, 10.0))
    track = next(t for t in timeline.tracks if t.object_id == "a")
    assert track.transforms[0].rotation_deg == 350.0
    assert track.transforms[4].rotation_deg == 10.0  # not 370


def test_mismatched_object_sets_rejected():
    target = LayoutTarget((Placement("a", center_xy=(10.0, 10.0), scale=1.0, z_order=0),))
    with pytest.raises(ValueError, match="do not match"):
        plan_timeline(
            {"zz": ObjectState(center=(5.0, 5.0), scale=1.0)},
            target, 5, "manual_design",
            canvas=(40, 40), white_start=False, sizes={"a": (4, 4)},
        )
    with pytest.raises(ValueError, match="K"):
        plan_timeline({}, LayoutTarget(()), 1, "manual_design",
                      canvas=(4, 4), white_start=False, sizes={})


def test_design_element_starts_off_canvas():
    timeline, assets = simple_setup(K=9, design=("a",))
    track = next(t for t in timeline.tracks if t.object_id == "a")
    assert track.fly_in
    assert all(a == 0.0 for a in track.white_box_alpha)
    cx, cy = track.transforms[0].translation_xy
    # the whole box must start outside the 120x100 canvas
    quad = track.transforms[0].corners((12, 8))
    assert (
        quad[:, 0].max() <= 0 or quad[:, 0].min() >= 120
        or quad[:, 1].max() <= 0 or quad[:, 1].min() >= 100
    )
    # final frame reaches the target placement
    assert track.transforms[8].translation_xy == (80.0, 40.0)


def test_relight_t_schedule():
    target = LayoutTarget(
        (Placement("a", center_xy=(30.0, 30.0), scale=1.0, z_order=0, relight_t=0.8),)
    )
    timeline = plan_timeline(
        {"a": ObjectState(center=(5.0, 5.0), scale=1.0)},
        target, 5, "manual_design",
        canvas=(60, 60), white_start=False, sizes={"a": (6, 6)},
    )
    track = timeline.tracks[0]
    assert track.relight_t[0] == 0.0
    assert track.relight_t[2] == pytest.approx(0.4)
    assert track.relight_t[4] == 0.8


# -- relight blending ---------------------------------------------------------


def test_relight_endpoints_exact():
    a = flat_rgba((100, 0, 0))
    b = flat_rgba((0, 0, 100))
    assert np.array_equal(relight_blend([a, b], 0.0), a)
    assert np.array_equal(relight_blend([a, b], 1.0), b)
    assert np.array_equal(relight_blend([a], 0.7), a)


def test_relight_midpoint_closed_form():
    a = flat_rgba((100, 0, 0))
    b = flat_rgba((0, 0, 100))
    mid = relight_blend([a, b], 0.5)
    assert abs(int(mid[0, 0, 0]) - 50) <= 1
    assert abs(int(mid[0, 0, 2]) - 50) <= 1
    assert mid[0, 0, 1] == 0


def test_relight_piecewise_three_variants():
    a, b, c = flat_rgba((120, 0, 0)), flat_rgba((0, 120, 0)), flat_rgba((0, 0, 120))
    half = relight_blend([a, b, c], 0.5)  # t*(m-1) = 1 -> exactly b
    assert abs(int(half[0, 0, 1]) - 120) <= 1
    assert int(half[0, 0, 0]) <= 1 and int(half[0, 0, 2]) <= 1
    quarter = relight_blend([a, b, c], 0.25)  # halfway along segment a->b
    assert abs(int(quarter[0, 0, 0]) - 60) <= 1
    assert abs(int(quarter[0, 0, 1]) - 60) <= 1


def test_relight_dimension_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        relight_blend([flat_rgba((1, 1, 1), (4, 4)), flat_rgba((1, 1, 1), (5, 4))], 0.5)


# -- rendering ----------------------------------------------------------------


def backgrounds(white=True, size=(120, 100)):
    w, h = size
    final = np.zeros((h, w, 3), dtype=np.uint8)
    final[:, :, 1] = 140
    init = np.full((h, w, 3), 255, dtype=np.uint8) if white else final
    return BackgroundStates(initial_canvas=init, final_background=final)


def test_last_frame_equals_standalone_target_composite():
    timeline, assets = simple_setup(K=9)
    bgs = backgrounds()
    frames = render_video(timeline, assets, bgs)
    standalone = composite_frame(bgs.final_background, target_layers(timeline, assets))
    assert np.array_equal(frames[-1], standalone)


def test_k2_degenerate_video():
    timeline, assets = simple_setup(K=2)
    bgs = backgrounds()
    frames = render_video(timeline, assets, bgs)
    assert len(frames) == 2
    standalone = composite_frame(bgs.final_background, target_layers(timeline, assets))
    assert np.array_equal(frames[1], standalone)
    naive = composite_frame(bgs.initial_canvas, frame_layers(timeline, assets, 0))
    assert np.array_equal(frames[0], naive)


def test_no_fades_every_frame_on_final_background():
    timeline, assets = simple_setup(K=5, white_start=False)
    for track in timeline.tracks:
        track.white_box_alpha = [0.0] * 5
    bgs = backgrounds(white=False)
    frames = render_video(timeline, assets, bgs)
    # outside all objects the background shows through in every frame
    assert all(tuple(f[99, 119]) == (0, 140, 0) for f in frames)


def test_rendered_centroids_follow_lerp():
    timeline, assets = simple_setup(K=9)
    canvas = (120, 100)
    for track in timeline.tracks:
        cut = assets[track.object_id].variants[0]
        start = np.array(track.transforms[0].translation_xy)
        end = np.array(track.transforms[8].translation_xy)
        for k in range(9):
            _, a = _warp_premult(cut, track.transforms[k], canvas)
            measured = np.array(alpha_centroid(a))
            expected = (1 - k / 8) * start + (k / 8) * end
            assert np.linalg.norm(measured - expected) <= 0.5, (track.object_id, k)


def test_render_deterministic_golden_hash():
    import hashlib

    timeline, assets = simple_setup(K=9)
    frames = render_video(timeline, assets, backgrounds())
    digest = hashlib.sha256(b"".join(f.tobytes() for f in frames)).hexdigest()
    again = render_video(timeline, assets, backgrounds())
    assert hashlib.sha256(b"".join(f.tobytes() for f in again)).hexdigest() == digest
    # frozen from a recorded run; guards cross-version drift of the pixel path
    assert digest == GOLDEN_9_FRAME_SHA256


GOLDEN_9_FRAME_SHA256 = "52d7041bef7ec99b08c48dc354574be5497f10af974e91b71a371e59344e7457"


# -- crossfade ----------------------------------------------------------------


def test_crossfade_endpoints_exact():
    rng = np.random.default_rng(0)
    first = rng.integers(0, 256, size=(10, 12, 3), dtype=np.uint8)
    last = rng.integers(0, 256, size=(10, 12, 3), dtype=np.uint8)
    frames, supervised = crossfade_pair(first, last, 5)
    assert np.array_equal(frames[0], first)
    assert np.array_equal(frames[4], last)
    assert supervised == [4]


def test_crossfade_identical_inputs():
    img = np.full((6, 6, 3), 90, dtype=np.uint8)
    frames, _ = crossfade_pair(img, img, 4)
    assert all(np.array_equal(f, img) for f in frames)


def test_crossfade_midframe_average():
    first = np.full((4, 4, 3), 10, dtype=np.uint8)
    last = np.full((4, 4, 3), 31, dtype=np.uint8)
    frames, _ = crossfade_pair(first, last, 3)
    assert np.all(np.abs(frames[1].astype(int) - 20.5) <= 1)


def test_crossfade_dimension_mismatch():
    with pytest.raises(ValueError, match="differ"):
        crossfade_pair(np.zeros((4, 4, 3), np.uint8), np.zeros((5, 4, 3), np.uint8), 3)


def test_crossfade_external_hook(tmp_path):
    first = np.full((6, 6, 3), 1, dtype=np.uint8)
    last = np.full((6, 6, 3), 200, dtype=np.uint8)
    ext = [np.full((6, 6, 3), 40 * k, dtype=np.uint8) for k in range(4)]
    for k, frame in enumerate(ext):
        save_png(frame, tmp_path / f"f_{k}.png")
    frames, supervised = crossfade_pair(first, last, 4, external_frames_dir=tmp_path)
    assert supervised == [3]
    for got, want in zip(frames, ext):
        assert np.array_equal(got, want)
    with pytest.raises(ValueError, match="frames"):
        crossfade_pair(first, last, 5, external_frames_dir=tmp_path)
