"""Two-stage iterative prompting: group dynamic tracks, then densify to masks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .masks import MaskVideo, dilate
from .segmenter import Prompt, PromptableSegmenter
from .trackdata import TrackSet, track_pixels

__all__ = ["PromptParams", "MemoryEntry", "ObjectMemory", "filter_dynamic", "densest_index",
           "densest_point", "group_tracks", "prompt_points", "prompt_frames", "densify",
           "merge_masks", "dilate", "segment_tracks"]

log = logging.getLogger(__name__)

# Grouping stops once fewer than this many tracks remain; a set this small
# from the start is accepted wholesale.
_MIN_REMAINING = 6


@dataclass(frozen=True)
class PromptParams:
    threshold: float = 0.5
    radius: int = 3
    min_pts: int = 3
    k_neighbors: int = 8
    max_iterations: int = 50
    max_retries: int = 5
    reprompt_gap: int = 10
    merge_thresh: float = 0.9


@dataclass(frozen=True)
class MemoryEntry:
    indices: np.ndarray     # track indices owned by the object
    anchor: int             # frame the object was discovered at


@dataclass
class ObjectMemory:
    entries: dict[int, MemoryEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[int]:
        return sorted(self.entries)

    def add(self, indices, anchor: int) -> int:
        oid = len(self.entries) + 1
        self.entries[oid] = MemoryEntry(np.asarray(sorted(int(i) for i in indices), dtype=np.int64),
                                        int(anchor))
        return oid

    def to_dict(self) -> dict:
        return {int(k): {"anchor": e.anchor, "tracks": e.indices.tolist()}
                for k, e in sorted(self.entries.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectMemory":
        mem = cls()
        for k in sorted(d, key=int):
            mem.entries[int(k)] = MemoryEntry(np.asarray(d[k]["tracks"], dtype=np.int64),
                                              int(d[k]["anchor"]))
        return mem


def filter_dynamic(probs, threshold: float = 0.5) -> np.ndarray:
    return np.flatnonzero(np.asarray(probs, dtype=np.float64) > threshold)


def densest_index(points: np.ndarray, k: int = 8) -> int:
    """Index of the point with the smallest mean distance to its k nearest neighbours."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    if pts.shape[0] == 1:
        return 0
    score = kernels.knn_mean_distance(pts, min(k, pts.shape[0] - 1))
    return int(np.argmin(score))


def densest_point(points: np.ndarray, k: int = 8) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return pts[densest_index(pts, k)]


def _pixel_xy(tracks: TrackSet) -> np.ndarray:
    return np.stack([tracks.coords[..., 0].astype(np.float64) * tracks.width,
                     tracks.coords[..., 1].astype(np.float64) * tracks.height], axis=-1)


def group_tracks(tracks: TrackSet, dynamic_idx, segmenter: PromptableSegmenter,
                 params: PromptParams = PromptParams()) -> ObjectMemory:
    """Stage one: discover objects one at a time and record the tracks they own.

    Each iteration prompts the densest visible point in the frame with the
    most visible remaining tracks, takes the returned mask, and removes every
    visible track inside the dilated mask. Only tracks inside the undilated
    mask are stored for the object.
    """
    remaining = np.asarray(sorted(set(int(i) for i in dynamic_idx)), dtype=np.int64)
    if remaining.size == 0:
        raise ValueError("group_tracks needs at least one dynamic track")
    memory = ObjectMemory()
    take_all = remaining.size < _MIN_REMAINING
    xy = _pixel_xy(tracks)
    col, row = track_pixels(tracks)
    vis = tracks.visibility
    for _iteration in range(params.max_iterations):
        counts = vis[remaining].sum(axis=0)
        t = int(np.argmax(counts))
        if counts[t] == 0:
            break
        cand = remaining[vis[remaining, t]]
        order = _density_order(xy[cand, t], params.k_neighbors)
        mask = None
        failed: list[int] = []
        for j in order[:params.max_retries]:
            segmenter.reset()
            m = np.asarray(segmenter.segment_frame(t, xy[cand[j], t][None, :], [1]), dtype=bool)
            if m.any():
                mask, prompt_track = m, cand[j]
                break
            failed.append(int(cand[j]))
        if mask is None:
            # nothing segmentable near the densest points: drop them and move on
            remaining = np.setdiff1d(remaining, failed)
        else:
            grown = dilate(mask, params.radius)
            in_grown = grown[row[cand, t], col[cand, t]]
            in_mask = mask[row[cand, t], col[cand, t]]
            stored = cand[in_mask]
            if stored.size >= params.min_pts or (take_all and stored.size > 0):
                memory.add(stored, t)
            drop = np.union1d(cand[in_grown], [prompt_track])
            remaining = np.setdiff1d(remaining, drop)
        if remaining.size < _MIN_REMAINING:
            break
    return memory


def _density_order(points: np.ndarray, k: int) -> np.ndarray:
    if points.shape[0] == 1:
        return np.zeros(1, dtype=np.int64)
    score = kernels.knn_mean_distance(points, min(k, points.shape[0] - 1))
    return np.argsort(score, kind="stable")


def prompt_points(points: np.ndarray, k: int = 8) -> np.ndarray:
    """Densest point plus the two points farthest from it (all points if fewer than 3)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 3:
        return pts
    d = densest_index(pts, k)
    dist = np.linalg.norm(pts - pts[d], axis=1)
    dist[d] = -np.inf
    far = np.argsort(-dist, kind="stable")[:2]
    return pts[np.concatenate([[d], far])]


def prompt_frames(visible_any: np.ndarray, anchor: int, gap: int) -> list[int]:
    """Frames ``anchor + k * gap`` (k of either sign) where the object has a visible point.

    The anchor itself is always included.
    """
    if gap < 1:
        raise ValueError("reprompt gap must be >= 1")
    T = visible_any.size
    grid = set(range(anchor % gap, T, gap))
    return sorted({anchor} | {t for t in grid if visible_any[t]})


def densify(memory: ObjectMemory, tracks: TrackSet, segmenter: PromptableSegmenter,
            params: PromptParams = PromptParams()) -> MaskVideo:
    """Stage two: prompt every stored object at regular intervals and collect video masks."""
    T, H, W = tracks.frame_count, tracks.height, tracks.width
    if not memory.entries:
        return MaskVideo.empty(T, H, W)
    xy = _pixel_xy(tracks)
    prompts: list[Prompt] = []
    for oid in memory.ids():
        entry = memory.entries[oid]
        idx = entry.indices
        vis = tracks.visibility[idx]
        # anchor first: a segmenter resolving conflicting prompts keeps the first one
        frames = prompt_frames(vis.any(axis=0), entry.anchor, params.reprompt_gap)
        for t in sorted(frames, key=lambda f: (f != entry.anchor, f)):
            pts = xy[idx[vis[:, t]], t]
            if pts.shape[0] == 0:
                continue
            prompts.append(Prompt(t, prompt_points(pts, params.k_neighbors), oid))
    segmenter.reset()
    video = segmenter.segment_video(prompts)
    ids = memory.ids()
    out = np.zeros((T, len(ids), H, W), dtype=bool)
    for k, oid in enumerate(ids):
        if oid in video.ids:
            out[:, k] = video.get(oid)
    return MaskVideo(out, tuple(ids))


def merge_masks(masks: MaskVideo, merge_thresh: float = 0.9) -> MaskVideo:
    """Union objects whose video-level containment ratio exceeds ``merge_thresh``.

    Containment is ``|A & B| / min(|A|, |B|)`` summed over all frames.
    Merging repeats until no pair qualifies, so the result is a fixed point;
    ids are renumbered 1..K in order of first appearance.
    """
    groups = [masks.masks[:, k] for k in range(masks.object_count)]
    changed = True
    while changed and len(groups) > 1:
        changed = False
        flat = np.stack([g.reshape(-1) for g in groups]).astype(np.float64)
        area = flat.sum(axis=1)
        inter = flat @ flat.T
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                small = min(area[a], area[b])
                if small > 0 and inter[a, b] / small > merge_thresh:
                    groups[a] = groups[a] | groups[b]
                    del groups[b]
                    changed = True
                    break
            if changed:
                break
    T, _, H, W = masks.masks.shape
    stacked = np.stack(groups, axis=1) if groups else np.zeros((T, 0, H, W), dtype=bool)
    return MaskVideo(stacked, tuple(range(1, len(groups) + 1)))


def segment_tracks(tracks: TrackSet, probs, segmenter: PromptableSegmenter,
                   params: PromptParams = PromptParams()) -> tuple[ObjectMemory, MaskVideo]:
    """filter -> group -> densify -> merge."""
    dyn = filter_dynamic(probs, params.threshold)
    if dyn.size == 0:
        log.warning("no dynamic tracks above threshold %.3f", params.threshold)
        return ObjectMemory(), MaskVideo.empty(tracks.frame_count, tracks.height, tracks.width)
    memory = group_tracks(tracks, dyn, segmenter, params)
    video = densify(memory, tracks, segmenter, params)
    return memory, merge_masks(video, params.merge_thresh)
