import numpy as np
import pytest

from trajseg.segmenter import Prompt
from trajseg.synth import (Camera, GenerationError, OracleSegmenter, ProtocolError, Scene,
                           SceneConfig, SceneObject, category_embeddings, generate_scene,
                           oracle_segment, oracle_segment_video, render_scene, render_tracks,
                           track_membership)
from trajseg.trackdata import assign_labels

STILL_CAMERA = dict(camera_motion=0.0, camera_rotation=0.0, camera_zoom=0.0)


def obj(shape="rectangle", hw=3.0, hh=3.0, layer=1, cat=1, pos=(10.0, 10.0), vel=(0.0, 0.0)):
    dyn = vel != (0.0, 0.0)
    return SceneObject(shape, hw, hh, layer, cat, dyn, pos, 0.0, vel, 0.0, 0.0)


def manual_scene(objects, width=32, height=32, frames=12, **cfg):
    config = SceneConfig(width=width, height=height, frames=frames, num_objects=len(objects), **cfg)
    return Scene(config, tuple(objects), Camera((width / 2, height / 2)), 0)


# ---------------------------------------------------------------- generation

def test_generation_is_deterministic():
    a = generate_scene(SceneConfig(), 11)
    b = generate_scene(SceneConfig(), 11)
    assert a.digest() == b.digest()
    assert a.digest() != generate_scene(SceneConfig(), 12).digest()


def test_static_scene_has_no_dynamic_labels():
    cfg = SceneConfig(num_objects=1, num_dynamic=0, same_category_prob=0.0, **STILL_CAMERA)
    s = render_scene(generate_scene(cfg, 3))
    assert not s.labels.labels.any()
    assert not s.masks.dynamic_union().any()
    assert np.all(s.tracks.coords == s.tracks.coords[:, :1])


@pytest.mark.parametrize("seed", range(5))
def test_requested_dynamic_count_appears_in_gt(seed):
    s = render_scene(generate_scene(SceneConfig(num_objects=3, num_dynamic=2), seed))
    dyn = s.masks.dynamic_only()
    assert len(dyn.ids) == 2
    assert all(dyn.masks[:, k].any() for k in range(dyn.object_count))


def test_dynamic_objects_move_and_static_ones_do_not():
    for seed in range(10):
        scene = generate_scene(SceneConfig(), seed)
        assert any(o.is_dynamic for o in scene.objects)
        for o in scene.objects:
            moving = o.velocity != (0.0, 0.0) or o.angular_velocity != 0 or o.scale_rate != 0
            assert moving == o.is_dynamic


def test_depth_layers_unique():
    for seed in range(10):
        layers = [o.depth_layer for o in generate_scene(SceneConfig(num_objects=4), seed).objects]
        assert sorted(layers) == list(range(1, 5))


def test_same_category_pair_injected():
    cfg = SceneConfig(same_category_prob=1.0, num_objects=3)
    for seed in range(5):
        o = generate_scene(cfg, seed).objects
        assert o[0].category == o[1].category
        assert o[0].is_dynamic and not o[1].is_dynamic


def test_infeasible_config_raises():
    cfg = SceneConfig(width=16, height=16, num_objects=4, min_size=7, max_size=7, well_separated=True)
    with pytest.raises(GenerationError):
        generate_scene(cfg, 0)


def test_invalid_config_rejected():
    with pytest.raises(GenerationError):
        generate_scene(SceneConfig(frames=4), 0)
    with pytest.raises(KeyError, match="colour"):
        SceneConfig.from_dict({"colour": 3})


def test_config_dict_round_trip():
    cfg = SceneConfig(frames=20, category_dynamic_prob=(0.5, 0.5, 0.5, 0.5))
    assert SceneConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- rendering

def test_translating_disk_tracks_move_two_pixels_per_frame():
    scene = manual_scene([obj("disk", hw=4.0, pos=(8.0, 16.0), vel=(2.0, 0.0))], **STILL_CAMERA)
    s = render_scene(scene, grid_size=2, step=100)
    on = s.owners == 1
    assert on.sum() > 0
    px = s.tracks.coords[on, :, 0].astype(np.float64) * 32
    py = s.tracks.coords[on, :, 1].astype(np.float64) * 32
    assert np.allclose(np.diff(px, axis=1), 2.0, atol=1e-5)
    assert np.allclose(np.diff(py, axis=1), 0.0, atol=1e-5)
    assert s.labels.labels[on].all()


def test_occluded_frames_are_exactly_the_covered_ones():
    far = obj(hw=12.0, hh=3.0, layer=2, pos=(16.0, 16.0))
    near = obj(hw=3.6, hh=8.0, layer=1, pos=(4.0, 16.0), vel=(2.0, 0.0))
    scene = manual_scene([far, near], **STILL_CAMERA)
    s = render_scene(scene, grid_size=1, step=100)
    # track seeded at pixel center (17.5, 16.5) on the far object at t=0
    x = s.tracks.coords[:, 0, 0] * 32
    y = s.tracks.coords[:, 0, 1] * 32
    i = int(np.flatnonzero((np.abs(x - 17.5) < 1e-4) & (np.abs(y - 16.5) < 1e-4))[0])
    assert s.owners[i] == 1
    t = np.arange(12)
    covered = np.abs(17.5 - (4.0 + 2.0 * t)) <= 3.6
    assert np.flatnonzero(covered).tolist() == [5, 6, 7, 8]
    assert np.array_equal(~s.tracks.visibility[i], covered)


def test_nearer_layer_owns_overlap():
    a = obj(hw=5.0, hh=5.0, layer=1, pos=(12.0, 12.0))
    b = obj(hw=5.0, hh=5.0, layer=2, pos=(16.0, 16.0))
    m = manual_scene([a, b], **STILL_CAMERA).mask_video()
    overlap_px = (slice(11, 17), slice(11, 17))
    assert m.get(1)[0][overlap_px].all()
    assert not m.get(2)[0][overlap_px].any()
    assert not (m.get(1) & m.get(2)).any()


def test_render_labels_match_recomputed_labels():
    for seed in range(5):
        s = render_scene(generate_scene(SceneConfig(), seed))
        assert np.array_equal(s.labels.labels, assign_labels(s.tracks, s.masks).labels)


def test_subsampled_timeline_matches_subsampled_tracks():
    scene = generate_scene(SceneConfig(frames=16), 5)
    full = render_scene(scene, grid_size=4, step=8)
    half = render_scene(scene.subsample(2), grid_size=4, step=4)
    a = full.select(np.flatnonzero(full.query_frames == 0))
    b = half.select(np.flatnonzero(half.query_frames == 0))
    assert np.array_equal(a.tracks.coords[:, ::2], b.tracks.coords)
    assert np.array_equal(a.tracks.visibility[:, ::2], b.tracks.visibility)


def test_confidence_noise_hits_about_a_tenth_of_points():
    s = render_scene(generate_scene(SceneConfig(), 2))
    low = s.tracks.confidence < 1.0
    assert 0.05 < low.mean() < 0.15
    assert s.tracks.confidence[low].max() <= 0.3
    assert np.all(s.tracks.confidence[np.arange(s.tracks.track_count), s.query_frames] == 1.0)


def test_render_tracks_triple():
    scene = generate_scene(SceneConfig(), 1)
    t, lab, m = render_tracks(scene)
    assert t.track_count == len(lab) and m.frame_count == t.frame_count


def test_track_membership_matches_owners_for_static_camera():
    cfg = SceneConfig(well_separated=True, width=96, height=96, integer_motion=True,
                      min_size=4, max_size=7, max_speed=1.5, **STILL_CAMERA)
    s = render_scene(generate_scene(cfg, 0))
    member = track_membership(s.tracks, s.masks)
    assert np.array_equal(member, s.owners)


# ---------------------------------------------------------------- semantics

def test_category_embeddings_unit_norm():
    e = category_embeddings(4, 16)
    assert e.shape == (5, 16)
    assert np.allclose(np.linalg.norm(e, axis=1), 1.0)


def test_same_category_tracks_are_similar():
    s = render_scene(generate_scene(SceneConfig(same_category_prob=1.0), 3))
    a = s.semantic.vectors[s.owners == 1]
    b = s.semantic.vectors[s.owners == 2]
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    assert (a @ b.T).mean() > 0.8


# ---------------------------------------------------------------- oracle segmenter

def _two_disks():
    return manual_scene([obj("disk", hw=4.0, pos=(8.0, 8.0)),
                         obj("disk", hw=4.0, layer=2, pos=(22.0, 22.0))], **STILL_CAMERA)


def test_oracle_single_point_gives_object_mask():
    scene = _two_disks()
    m = oracle_segment(scene, 0, [[8.5, 8.5]])
    assert np.array_equal(m, scene.mask_video().get(1)[0])


def test_oracle_background_point_gives_empty_mask():
    assert not oracle_segment(_two_disks(), 0, [[30.5, 2.5]]).any()


def test_oracle_majority_vote():
    scene = _two_disks()
    m = oracle_segment(scene, 3, [[8.5, 8.5], [7.5, 9.5], [22.5, 22.5]])
    assert np.array_equal(m, scene.mask_video().get(1)[3])


def test_oracle_frame_out_of_range():
    with pytest.raises(IndexError):
        oracle_segment(_two_disks(), 12, [[8.5, 8.5]])


def test_oracle_video_prompts_give_exact_gt():
    scene = _two_disks()
    v = oracle_segment_video(scene, [Prompt(0, [[8.5, 8.5]], 1), Prompt(5, [[22.5, 22.5]], 2)])
    gt = scene.mask_video()
    assert np.array_equal(v.get(1), gt.get(1)) and np.array_equal(v.get(2), gt.get(2))
    assert not (v.get(1) & v.get(2)).any()


def test_oracle_video_conflicting_prompts():
    with pytest.raises(ProtocolError):
        oracle_segment_video(_two_disks(), [Prompt(0, [[8.5, 8.5]], 1), Prompt(1, [[22.5, 22.5]], 1)])


def test_segmenter_adapter_keeps_first_target_on_conflict():
    scene = _two_disks()
    prompts = [Prompt(1, [[22.5, 22.5]], 1), Prompt(0, [[8.5, 8.5]], 1)]
    v = OracleSegmenter(scene).segment_video(prompts)
    assert np.array_equal(v.get(1), scene.mask_video().get(2))
    with pytest.raises(ProtocolError):
        OracleSegmenter(scene, strict=True).segment_video(prompts)


def _occlusion_scene():
    # object 1 is hidden by a static wall for frames 4..15 (a 12-frame run) of 24
    target = obj(hw=2.0, hh=2.0, layer=2, pos=(2.0, 16.0), vel=(1.5, 0.0))
    wall = obj(hw=10.5, hh=10.0, layer=1, pos=(18.0, 16.0))
    return manual_scene([target, wall], width=48, height=32, frames=24, **STILL_CAMERA)


def test_degraded_tracking_loses_object_after_long_occlusion():
    scene = _occlusion_scene()
    vis = scene.mask_video().get(1).any(axis=(1, 2))
    runs = np.flatnonzero(~vis)
    assert runs.min() > 0 and runs.max() < 23 and runs.size >= 10
    seg = OracleSegmenter(scene, degrade=True, occlusion_tolerance=10)
    v = seg.segment_video([Prompt(0, [[2.5, 16.5]], 1)])
    after = np.arange(24) > runs.max()
    assert v.get(1)[: runs.min()].any()
    assert not v.get(1)[after].any()
    # a prompt on the far side of the occlusion recovers it
    t_far = int(runs.max()) + 3
    x = 2.0 + 1.5 * t_far + 1.0      # right half of the target, clear of the wall
    v2 = seg.segment_video([Prompt(0, [[2.5, 16.5]], 1), Prompt(t_far, [[x, 16.5]], 1)])
    assert np.array_equal(v2.get(1), scene.mask_video().get(1))


def test_oracle_segmenter_counts_calls():
    seg = OracleSegmenter(_two_disks())
    seg.segment_frame(0, [[8.5, 8.5]])
    seg.segment_video([])
    assert seg.calls == 2
