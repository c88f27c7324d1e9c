import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from trajseg.masks import MaskVideo
from trajseg.prompting import (ObjectMemory, PromptParams, densest_index, densest_point, densify,
                               filter_dynamic, group_tracks, merge_masks, prompt_frames,
                               prompt_points, segment_tracks)
from trajseg.synth import (Camera, OracleSegmenter, Scene, SceneConfig, SceneObject,
                           generate_scene, render_scene)
from trajseg.trackdata import TrackSet

STILL = dict(camera_motion=0.0, camera_rotation=0.0, camera_zoom=0.0)


def obj(shape="disk", hw=4.0, hh=4.0, layer=1, cat=1, pos=(10.0, 10.0), vel=(0.0, 0.0)):
    return SceneObject(shape, hw, hh, layer, cat, vel != (0.0, 0.0), pos, 0.0, vel, 0.0, 0.0)


def scene_of(objects, width=40, height=40, frames=12):
    cfg = SceneConfig(width=width, height=height, frames=frames, num_objects=len(objects), **STILL)
    return Scene(cfg, tuple(objects), Camera((width / 2, height / 2)), 0)


def two_disks():
    return scene_of([obj(pos=(8.0, 10.0), vel=(1.0, 0.0)),
                     obj(layer=2, pos=(28.0, 28.0), vel=(0.0, -1.0))])


class EmptySegmenter:
    calls = 0

    def reset(self):
        pass

    def segment_frame(self, t, points, labels=None):
        self.calls += 1
        return np.zeros((40, 40), bool)

    def segment_video(self, prompts):
        return MaskVideo.empty(12, 40, 40)


# ---------------------------------------------------------------- filter / density

def test_filter_dynamic_examples():
    assert filter_dynamic(np.zeros(4)).size == 0
    assert filter_dynamic([0.9, 0.4], 0.5).tolist() == [0]
    assert filter_dynamic([0.5, 0.51]).tolist() == [1]


@settings(max_examples=50, deadline=None)
@given(p=hnp.arrays(np.float64, st.integers(0, 30), elements=st.floats(0, 1)),
       a=st.floats(0, 1), b=st.floats(0, 1))
def test_filter_threshold_monotone(p, a, b):
    lo, hi = min(a, b), max(a, b)
    assert set(filter_dynamic(p, hi)) <= set(filter_dynamic(p, lo))


def test_densest_single_point():
    assert densest_point([[3.0, 4.0]]).tolist() == [3.0, 4.0]


def test_densest_prefers_cluster_over_outlier():
    rng = np.random.default_rng(0)
    pts = np.vstack([[50.0, 50.0], rng.normal(10.0, 0.5, size=(9, 2))])
    assert densest_index(pts) != 0


def test_densest_tie_goes_to_lower_index():
    assert densest_index([[0.0, 0.0], [1.0, 0.0]]) == 0
    assert densest_index([[2.0, 2.0], [0.0, 0.0], [4.0, 4.0]]) == 0


@pytest.mark.parametrize("seed", range(10))
def test_densest_matches_brute_force(seed):
    pts = np.random.default_rng(seed).uniform(0, 20, size=(12, 2)).round(1)
    k = 8
    score = []
    for p in pts:
        d = np.sort(np.linalg.norm(pts - p, axis=1))[1:k + 1]
        score.append(d.mean())
    assert densest_index(pts, k) == int(np.argmin(score))


def test_prompt_points_densest_then_two_farthest():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5], [9.0, 9.0],
                    [-6.0, 0.5]])
    out = prompt_points(pts)
    assert out[0].tolist() == [0.5, 0.5]
    assert out[1:].tolist() == [[9.0, 9.0], [-6.0, 0.5]]
    assert prompt_points(pts[:2]).tolist() == pts[:2].tolist()


# ---------------------------------------------------------------- grouping

def partition(memory: ObjectMemory) -> set[frozenset]:
    return {frozenset(e.indices.tolist()) for e in memory.entries.values()}


def test_group_two_disks_recovers_gt_partition():
    scene = two_disks()
    s = render_scene(scene, grid_size=2, step=100)
    dyn = np.flatnonzero(s.labels.labels)
    mem = group_tracks(s.tracks, dyn, OracleSegmenter(scene))
    assert mem.ids() == [1, 2]
    gt = {frozenset(np.flatnonzero(s.owners == k).tolist()) for k in (1, 2)}
    assert partition(mem) == gt


def test_group_single_object_one_iteration():
    scene = scene_of([obj(pos=(15.0, 15.0), vel=(1.0, 1.0))])
    s = render_scene(scene, grid_size=2, step=100)
    seg = OracleSegmenter(scene)
    mem = group_tracks(s.tracks, np.flatnonzero(s.owners == 1), seg)
    assert len(mem) == 1 and seg.calls == 1


def test_group_take_all_keeps_small_sets():
    scene = scene_of([obj(pos=(15.0, 15.0), vel=(1.0, 1.0))])
    s = render_scene(scene, grid_size=2, step=100)
    five = np.flatnonzero(s.owners == 1)[:5]
    mem = group_tracks(s.tracks, five, OracleSegmenter(scene), PromptParams(min_pts=50))
    assert partition(mem) == {frozenset(five.tolist())}
    # with more tracks the min_pts gate applies
    many = np.flatnonzero(s.owners == 1)
    assert len(group_tracks(s.tracks, many, OracleSegmenter(scene), PromptParams(min_pts=10**6))) == 0


def test_group_requires_dynamic_tracks():
    s = render_scene(two_disks())
    with pytest.raises(ValueError):
        group_tracks(s.tracks, [], OracleSegmenter(two_disks()))


def test_group_terminates_when_segmenter_finds_nothing():
    s = render_scene(two_disks(), grid_size=2, step=100)
    seg = EmptySegmenter()
    p = PromptParams(max_iterations=7, max_retries=3)
    mem = group_tracks(s.tracks, np.flatnonzero(s.labels.labels), seg, p)
    assert len(mem) == 0 and seg.calls <= 7 * 3


def test_group_stores_only_undilated_points():
    scene = scene_of([obj(pos=(15.0, 15.0), vel=(1.0, 0.0))])
    s = render_scene(scene, grid_size=1, step=100)
    on = np.flatnonzero(s.owners == 1)
    # background tracks just outside the disk fall inside the dilated mask
    xy = s.tracks.coords[:, 0].astype(np.float64) * 40
    near = np.flatnonzero((s.owners == 0) & (np.hypot(xy[:, 0] - 15, xy[:, 1] - 15) < 5.5))
    assert near.size > 0
    mem = group_tracks(s.tracks, np.concatenate([on, near]), OracleSegmenter(scene),
                       PromptParams(radius=3))
    assert partition(mem) == {frozenset(on.tolist())}


@pytest.mark.parametrize("seed", range(6))
def test_group_memory_sets_disjoint(seed):
    cfg = SceneConfig(num_objects=4, num_dynamic=3)
    scene = generate_scene(cfg, seed)
    s = render_scene(scene)
    dyn = np.flatnonzero(s.labels.labels)
    if dyn.size == 0:
        return
    mem = group_tracks(s.tracks, dyn, OracleSegmenter(scene))
    seen: set[int] = set()
    for e in mem.entries.values():
        assert not seen & set(e.indices.tolist())
        seen |= set(e.indices.tolist())
    assert seen <= set(dyn.tolist())
    assert mem.ids() == list(range(1, len(mem) + 1))


def test_memory_dict_round_trip():
    m = ObjectMemory()
    m.add([5, 2, 9], 3)
    m.add([1], 0)
    back = ObjectMemory.from_dict(m.to_dict())
    assert back.to_dict() == {1: {"anchor": 3, "tracks": [2, 5, 9]}, 2: {"anchor": 0, "tracks": [1]}}


# ---------------------------------------------------------------- densify

def test_prompt_frames_grid_and_visibility():
    vis = np.zeros(24, bool)
    vis[3:10] = True
    assert prompt_frames(vis, 5, 2) == [3, 5, 7, 9]
    assert prompt_frames(np.ones(24, bool), 4, 10) == [4, 14]
    assert all(3 <= t <= 9 for t in prompt_frames(vis, 4, 1))
    with pytest.raises(ValueError):
        prompt_frames(vis, 4, 0)


def test_densify_oracle_one_object_matches_gt():
    scene = scene_of([obj(pos=(15.0, 15.0), vel=(1.0, 1.0))])
    s = render_scene(scene, grid_size=2, step=100)
    mem = ObjectMemory()
    mem.add(np.flatnonzero(s.owners == 1), 0)
    v = densify(mem, s.tracks, OracleSegmenter(scene))
    assert v.ids == (1,)
    assert np.array_equal(v.get(1), scene.mask_video().get(1))


def test_densify_prompts_only_where_object_is_visible():
    scene = scene_of([obj(pos=(15.0, 15.0), vel=(1.0, 1.0))])
    s = render_scene(scene, grid_size=2, step=100)
    idx = np.flatnonzero(s.owners == 1)
    vis = s.tracks.visibility.copy()
    vis[idx] = False
    vis[idx, 3:10] = True
    t = s.tracks
    t = TrackSet(t.coords, t.depth, vis, t.confidence, t.width, t.height)
    seen = []

    class Spy(OracleSegmenter):
        def segment_video(self, prompts):
            prompts = list(prompts)
            seen.extend(p.frame for p in prompts)
            return super().segment_video(prompts)

    mem = ObjectMemory()
    mem.add(idx, 4)
    densify(mem, t, Spy(scene), PromptParams(reprompt_gap=2))
    assert seen and all(3 <= f <= 9 for f in seen)
    assert seen[0] == 4 and seen[1:] == sorted(seen[1:])     # anchor prompt first


def _occluded_target():
    # object 1 is hidden behind a static wall for frames 4..15
    target = obj("rectangle", hw=2.0, hh=2.0, layer=2, pos=(2.0, 16.0), vel=(1.5, 0.0))
    wall = obj("rectangle", hw=10.5, hh=10.0, layer=1, pos=(18.0, 16.0))
    return scene_of([target, wall], width=48, height=32, frames=24)


@pytest.mark.parametrize("gap,recovered", [(10, True), (13, False)])
def test_densify_reprompting_recovers_after_occlusion(gap, recovered):
    scene = _occluded_target()
    s = render_scene(scene, grid_size=1, step=100)
    gt = scene.mask_video().get(1)
    mem = ObjectMemory()
    mem.add(np.flatnonzero(s.owners == 1), 0)
    seg = OracleSegmenter(scene, degrade=True, occlusion_tolerance=10)
    v = densify(mem, s.tracks, seg, PromptParams(reprompt_gap=gap))
    after = v.get(1)[16:]
    if recovered:
        assert np.array_equal(v.get(1), gt)
    else:
        assert not after.any() and gt[16:].any()


def test_densify_empty_memory():
    s = render_scene(two_disks())
    v = densify(ObjectMemory(), s.tracks, OracleSegmenter(two_disks()))
    assert v.object_count == 0 and v.frame_count == 12


# ---------------------------------------------------------------- merge

def vid(*frames):
    return MaskVideo(np.stack(frames)[None], tuple(range(1, len(frames) + 1)))


def square(r0, c0, n, size=20):
    m = np.zeros((size, size), bool)
    m[r0:r0 + n, c0:c0 + n] = True
    return m


def test_merge_disjoint_unchanged():
    v = vid(square(0, 0, 4), square(10, 10, 4))
    assert merge_masks(v).equals(v)


def test_merge_contained_becomes_one():
    v = vid(square(0, 0, 8), square(2, 2, 3))
    out = merge_masks(v)
    assert out.ids == (1,) and np.array_equal(out.get(1), v.get(1))


def test_merge_thirty_percent_overlap_kept_apart():
    a = square(0, 0, 10)
    b = np.zeros_like(a)
    b[0:10, 7:17] = True      # 30 of 100 pixels shared
    assert merge_masks(vid(a, b)).object_count == 2
    assert merge_masks(vid(a, b), merge_thresh=0.25).object_count == 1


def test_merge_transitive_and_renumbered():
    big = square(0, 0, 10)
    v = vid(square(15, 15, 3), square(1, 1, 2), big, square(5, 5, 3))
    out = merge_masks(v)
    assert out.ids == (1, 2)
    assert np.array_equal(out.get(2)[0], big)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_merge_idempotent(seed):
    rng = np.random.default_rng(seed)
    frames = [square(*rng.integers(0, 12, 2), int(rng.integers(1, 8))) for _ in range(4)]
    once = merge_masks(vid(*frames))
    assert merge_masks(once).equals(once)


# ---------------------------------------------------------------- pipeline

def test_segment_tracks_no_dynamic_is_empty(caplog):
    s = render_scene(two_disks())
    mem, v = segment_tracks(s.tracks, np.zeros(s.tracks.track_count), OracleSegmenter(two_disks()))
    assert len(mem) == 0 and v.object_count == 0
    assert "no dynamic tracks" in caplog.text


def test_segment_tracks_with_perfect_labels_matches_gt():
    scene = two_disks()
    s = render_scene(scene, grid_size=2, step=100)
    _, v = segment_tracks(s.tracks, s.labels.labels.astype(float), OracleSegmenter(scene))
    gt = scene.mask_video()
    assert v.object_count == 2
    assert np.array_equal(v.union(), gt.dynamic_union())
