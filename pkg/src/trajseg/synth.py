"""Deterministic synthetic scenes with exact ground truth.

The world is a stack of 2-D layers: a static background plane plus a few
rigid shapes, each with a per-frame affine motion program, all viewed
through a per-frame camera affine. Lower ``depth_layer`` means nearer.
Everything (tracks, masks, occlusion, labels) is computed analytically
from the motion programs, which is what makes the oracle segmenter exact.
"""
from __future__ import annotations

import hashlib
import logging
import json
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .masks import MaskVideo
from .trackdata import TrackLabels, TrackSet, assign_labels, track_pixels

__all__ = [
    "GenerationError", "ProtocolError", "SceneConfig", "SceneObject", "Camera",
    "Scene", "SemanticFeatures", "SceneSample", "generate_scene", "render_scene",
    "render_tracks", "oracle_segment", "oracle_segment_video", "OracleSegmenter",
    "category_embeddings", "semantic_features", "track_membership",
]

log = logging.getLogger(__name__)

SHAPES = ("rectangle", "disk", "L")


class GenerationError(RuntimeError):
    """The scene configuration cannot be realised."""


class ProtocolError(ValueError):
    """Segmenter prompts are inconsistent."""


@dataclass(frozen=True)
class SceneConfig:
    width: int = 64
    height: int = 64
    frames: int = 16
    num_objects: int = 3
    num_dynamic: int | None = None
    min_dynamic: int = 1            # only used when num_dynamic is None
    num_categories: int = 4
    # probability that an object of category c (1-based) is dynamic
    category_dynamic_prob: tuple[float, ...] = (0.85, 0.85, 0.15, 0.15)
    same_category_prob: float = 0.3
    min_size: float = 6.0
    max_size: float = 12.0
    min_speed: float = 1.0
    max_speed: float = 2.5
    max_rotation: float = 0.04
    max_scale_rate: float = 0.01
    camera_motion: float = 1.0
    camera_rotation: float = 0.004
    camera_zoom: float = 0.004
    well_separated: bool = False
    separation_margin: float = 4.0
    integer_motion: bool = False
    semantic_dim: int = 16
    semantic_noise: float = 0.05
    low_conf_frac: float = 0.1
    low_conf_max: float = 0.3
    grid_size: int = 4
    step: int = 8

    def validate(self) -> None:
        if self.width < 8 or self.height < 8:
            raise GenerationError("image must be at least 8x8")
        if self.frames < 8:
            raise GenerationError("scenes need at least 8 frames")
        if self.num_objects < 1:
            raise GenerationError("scenes need at least one object")
        if self.num_dynamic is not None and not 0 <= self.num_dynamic <= self.num_objects:
            raise GenerationError("num_dynamic must lie in [0, num_objects]")
        if self.num_categories < 1 or len(self.category_dynamic_prob) != self.num_categories:
            raise GenerationError("category_dynamic_prob needs one entry per category")
        if not 0 < self.min_size <= self.max_size:
            raise GenerationError("need 0 < min_size <= max_size")
        if self.grid_size < 1 or self.step < 1:
            raise GenerationError("grid_size and step must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown scene config key: {unknown[0]}")
        d = dict(d)
        if "category_dynamic_prob" in d:
            d["category_dynamic_prob"] = tuple(float(x) for x in d["category_dynamic_prob"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["category_dynamic_prob"] = list(self.category_dynamic_prob)
        return d


@dataclass(frozen=True)
class SceneObject:
    shape: str
    half_w: float
    half_h: float
    depth_layer: int
    category: int
    is_dynamic: bool
    position: tuple[float, float]      # world position at time 0
    angle: float
    velocity: tuple[float, float]      # px / frame
    angular_velocity: float            # rad / frame
    scale_rate: float                  # relative size change / frame

    def pose(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=np.float64)
        px = self.position[0] + self.velocity[0] * t
        py = self.position[1] + self.velocity[1] * t
        return px, py, self.angle + self.angular_velocity * t, 1.0 + self.scale_rate * t

    def to_local(self, t, wx, wy) -> tuple[np.ndarray, np.ndarray]:
        px, py, ang, s = self.pose(t)
        dx, dy = wx - px, wy - py
        c, sn = np.cos(ang), np.sin(ang)
        return (c * dx + sn * dy) / s, (-sn * dx + c * dy) / s

    def to_world(self, t, lx, ly) -> tuple[np.ndarray, np.ndarray]:
        px, py, ang, s = self.pose(t)
        c, sn = np.cos(ang), np.sin(ang)
        return px + s * (c * lx - sn * ly), py + s * (sn * lx + c * ly)

    def contains_local(self, lx, ly) -> np.ndarray:
        if self.shape == "disk":
            return lx * lx + ly * ly <= self.half_w * self.half_w
        inside = (np.abs(lx) <= self.half_w) & (np.abs(ly) <= self.half_h)
        if self.shape == "L":
            inside &= ~((lx > 0) & (ly < 0))
        return inside

    def contains(self, t, wx, wy) -> np.ndarray:
        return self.contains_local(*self.to_local(t, wx, wy))

    @property
    def radius(self) -> float:
        return float(np.hypot(self.half_w, self.half_h)) if self.shape != "disk" else self.half_w


@dataclass(frozen=True)
class Camera:
    center: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    angular_velocity: float = 0.0
    zoom_rate: float = 0.0

    def to_image(self, t, wx, wy) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=np.float64)
        ang = self.angular_velocity * t
        s = 1.0 + self.zoom_rate * t
        c, sn = np.cos(ang), np.sin(ang)
        dx, dy = wx - self.center[0], wy - self.center[1]
        return (self.center[0] + s * (c * dx - sn * dy) + self.velocity[0] * t,
                self.center[1] + s * (sn * dx + c * dy) + self.velocity[1] * t)

    def to_world(self, t, ix, iy) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=np.float64)
        ang = self.angular_velocity * t
        s = 1.0 + self.zoom_rate * t
        c, sn = np.cos(ang), np.sin(ang)
        dx = ix - self.velocity[0] * t - self.center[0]
        dy = iy - self.velocity[1] * t - self.center[1]
        return (self.center[0] + (c * dx + sn * dy) / s,
                self.center[1] + (-sn * dx + c * dy) / s)


@dataclass(frozen=True)
class Scene:
    config: SceneConfig
    objects: tuple[SceneObject, ...]
    camera: Camera
    seed: int
    times: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.times:
            object.__setattr__(self, "times", tuple(float(t) for t in range(self.config.frames)))

    @property
    def frame_count(self) -> int:
        return len(self.times)

    @property
    def width(self) -> int:
        return self.config.width

    @property
    def height(self) -> int:
        return self.config.height

    def subsample(self, stride: int, phase: int = 0) -> "Scene":
        return replace(self, times=self.times[phase::stride])

    def digest(self) -> str:
        payload = {"config": self.config.to_dict(), "objects": [asdict(o) for o in self.objects],
                   "camera": asdict(self.camera), "seed": self.seed, "times": list(self.times)}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    # ---------------------------------------------------------------- rendering
    def owner_maps(self) -> np.ndarray:
        """(T, H, W) map of the nearest object at each pixel center (0 = background)."""
        cached = getattr(self, "_owner_cache", None)
        if cached is not None:
            return cached
        h, w = self.height, self.width
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
        out = np.zeros((self.frame_count, h, w), dtype=np.int64)
        order = sorted(range(len(self.objects)), key=lambda k: -self.objects[k].depth_layer)
        for fi, t in enumerate(self.times):
            wx, wy = self.camera.to_world(t, xs, ys)
            for k in order:
                out[fi][self.objects[k].contains(t, wx, wy)] = k + 1
        out.setflags(write=False)
        object.__setattr__(self, "_owner_cache", out)
        return out

    def mask_video(self) -> MaskVideo:
        own = self.owner_maps()
        k = len(self.objects)
        masks = np.stack([own == i + 1 for i in range(k)], axis=1)
        return MaskVideo(masks, tuple(range(1, k + 1)), tuple(o.is_dynamic for o in self.objects))


def category_embeddings(num_categories: int, dim: int) -> np.ndarray:
    """Fixed unit-norm embedding per category (row 0 is the background)."""
    rng = np.random.default_rng(7919 + 31 * num_categories + dim)
    e = rng.standard_normal((num_categories + 1, dim))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


# ------------------------------------------------------------------ generation

def _rng_for(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), purpose])


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    config.validate()
    rng = _rng_for(seed, 0)
    w, h, T = config.width, config.height, config.frames
    center = (w / 2.0, h / 2.0)

    if config.integer_motion:
        cv = rng.integers(-int(config.camera_motion), int(config.camera_motion) + 1, size=2)
        camera = Camera(center, (float(cv[0]), float(cv[1])))
    else:
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(0, config.camera_motion)
        camera = Camera(center, (mag * np.cos(ang), mag * np.sin(ang)),
                        rng.uniform(-config.camera_rotation, config.camera_rotation),
                        rng.uniform(-config.camera_zoom, config.camera_zoom))

    k = config.num_objects
    probs = np.asarray(config.category_dynamic_prob)
    cats = np.arange(1, config.num_categories + 1)
    pair = k >= 2 and rng.random() < config.same_category_prob
    if config.num_dynamic is not None:
        n_dyn = config.num_dynamic
        if pair and not 1 <= n_dyn <= k - 1:
            pair = False
        dyn = np.zeros(k, dtype=bool)
        if pair:
            dyn[0] = True
            rest = rng.permutation(np.arange(2, k))[:n_dyn - 1]
            dyn[rest] = True
        else:
            dyn[rng.permutation(k)[:n_dyn]] = True
        categories = []
        for d in dyn:
            weight = probs if d else 1.0 - probs
            weight = weight / weight.sum() if weight.sum() > 0 else np.full(len(cats), 1 / len(cats))
            categories.append(int(rng.choice(cats, p=weight)))
    else:
        categories = [int(rng.choice(cats)) for _ in range(k)]
        dyn = np.array([rng.random() < probs[c - 1] for c in categories])
        if pair:
            dyn[0], dyn[1] = True, False
        short = min(config.min_dynamic, k) - int(dyn.sum())
        if short > 0:
            dyn[rng.permutation(np.flatnonzero(~dyn))[:short]] = True
    if pair:
        categories[1] = categories[0]

    layers = rng.permutation(k) + 1
    objects: list[SceneObject] = []
    for i in range(k):
        for _attempt in range(200):
            obj = _sample_object(rng, config, camera, categories[i], bool(dyn[i]), int(layers[i]))
            if _placement_ok(obj, objects, config, camera):
                objects.append(obj)
                break
        else:
            raise GenerationError(f"could not place object {i} after 200 attempts")
    return Scene(config, tuple(objects), camera, int(seed))


def _sample_object(rng, cfg: SceneConfig, camera: Camera, category: int, dynamic: bool,
                   layer: int) -> SceneObject:
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    if cfg.integer_motion:
        hw = float(rng.integers(int(np.ceil(cfg.min_size)), int(cfg.max_size) + 1))
        hh = float(rng.integers(int(np.ceil(cfg.min_size)), int(cfg.max_size) + 1))
        mid_pos = (float(rng.integers(0, cfg.width)), float(rng.integers(0, cfg.height)))
        angle = 0.0
    else:
        hw = float(rng.uniform(cfg.min_size, cfg.max_size))
        hh = float(rng.uniform(cfg.min_size, cfg.max_size))
        mid_pos = (float(rng.uniform(0, cfg.width)), float(rng.uniform(0, cfg.height)))
        angle = float(rng.uniform(-np.pi, np.pi))
    if shape == "disk":
        hh = hw
    vel, omega, srate = (0.0, 0.0), 0.0, 0.0
    if dynamic:
        if cfg.integer_motion:
            hi = max(int(cfg.max_speed), 1)
            lo = max(int(np.ceil(cfg.min_speed)), 1)
            while True:
                v = rng.integers(-hi, hi + 1, size=2)
                if lo <= np.hypot(*v) <= hi * np.sqrt(2):
                    break
            vel = (float(v[0]), float(v[1]))
        else:
            ang = rng.uniform(0, 2 * np.pi)
            speed = rng.uniform(cfg.min_speed, cfg.max_speed)
            vel = (speed * np.cos(ang), speed * np.sin(ang))
            omega = float(rng.uniform(-cfg.max_rotation, cfg.max_rotation))
            srate = float(rng.uniform(-cfg.max_scale_rate, cfg.max_scale_rate))
    # the sampled image position is where the object sits mid-clip
    mid = float(cfg.frames // 2)
    wx, wy = camera.to_world(mid, mid_pos[0], mid_pos[1])
    pos = (float(wx - vel[0] * mid), float(wy - vel[1] * mid))
    return SceneObject(shape, hw, hh, layer, category, dynamic, pos, angle, vel, omega, srate)


def _centers(obj: SceneObject, camera: Camera, times: np.ndarray) -> np.ndarray:
    px, py, _, _ = obj.pose(times)
    ix, iy = camera.to_image(times, px, py)
    return np.stack([ix, iy], axis=-1)


def _placement_ok(obj: SceneObject, placed: Sequence[SceneObject], cfg: SceneConfig,
                  camera: Camera) -> bool:
    times = np.arange(cfg.frames, dtype=np.float64)
    c = _centers(obj, camera, times)
    smax = max(1.0, 1.0 + obj.scale_rate * (cfg.frames - 1))
    r = obj.radius * smax
    if cfg.well_separated:
        lo = np.array([r + 1.0, r + 1.0])
        hi = np.array([cfg.width - r - 1.0, cfg.height - r - 1.0])
        if np.any(c < lo) or np.any(c > hi):
            return False
        for other in placed:
            oc = _centers(other, camera, times)
            orad = other.radius * max(1.0, 1.0 + other.scale_rate * (cfg.frames - 1))
            if np.any(np.linalg.norm(c - oc, axis=1) < r + orad + cfg.separation_margin):
                return False
        return True
    # loose mode: centre in frame at the start and the middle of the clip
    for fi in (0, cfg.frames // 2):
        if not (0 <= c[fi, 0] < cfg.width and 0 <= c[fi, 1] < cfg.height):
            return False
    return True


# -------------------------------------------------------------------- tracks

@dataclass(frozen=True, eq=False)
class SemanticFeatures:
    """Per-track semantic vector (stand-in for pooled DINO features)."""

    vectors: np.ndarray        # (N, D)
    mask: np.ndarray           # (N, T) points that were aggregated

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def select(self, idx) -> "SemanticFeatures":
        return SemanticFeatures(self.vectors[idx], self.mask[idx])


@dataclass(frozen=True, eq=False)
class SceneSample:
    tracks: TrackSet
    labels: TrackLabels
    masks: MaskVideo            # all objects, with dynamic flags
    owners: np.ndarray          # (N,) owning object id, 0 = background
    semantic: SemanticFeatures
    query_frames: np.ndarray    # (N,) frame index each track was seeded at

    def select(self, idx) -> "SceneSample":
        idx = np.asarray(idx)
        return SceneSample(self.tracks.select(idx), TrackLabels(self.labels.labels[idx]),
                           self.masks, self.owners[idx], self.semantic.select(idx),
                           self.query_frames[idx])


def render_scene(scene: Scene, grid_size: int | None = None, step: int | None = None) -> SceneSample:
    cfg = scene.config
    grid_size = cfg.grid_size if grid_size is None else grid_size
    step = cfg.step if step is None else step
    if grid_size < 1 or step < 1:
        raise ValueError("grid_size and step must be >= 1")
    w, h = scene.width, scene.height
    times = np.asarray(scene.times)
    T = times.size
    own_maps = scene.owner_maps()

    g = np.arange(grid_size // 2, w, grid_size) + 0.5
    gy = np.arange(grid_size // 2, h, grid_size) + 0.5
    qx, qy = np.meshgrid(g, gy)
    qx, qy = qx.ravel(), qy.ravel()
    qframes = np.arange(0, T, step)

    all_x, all_y, owners, qf = [], [], [], []
    for f in qframes:
        t = times[f]
        row = np.clip(np.ceil(qy) - 1, 0, h - 1).astype(int)
        col = np.clip(np.ceil(qx) - 1, 0, w - 1).astype(int)
        own = own_maps[f, row, col]
        wx, wy = scene.camera.to_world(t, qx, qy)
        xs = np.empty((qx.size, T))
        ys = np.empty((qx.size, T))
        for k in np.unique(own):
            sel = own == k
            if k == 0:
                px = np.broadcast_to(wx[sel][:, None], (sel.sum(), T))
                py = np.broadcast_to(wy[sel][:, None], (sel.sum(), T))
            else:
                obj = scene.objects[k - 1]
                lx, ly = obj.to_local(t, wx[sel], wy[sel])
                px, py = obj.to_world(times[None, :], lx[:, None], ly[:, None])
            xs[sel], ys[sel] = scene.camera.to_image(times[None, :], px, py)
        all_x.append(xs)
        all_y.append(ys)
        owners.append(own)
        qf.append(np.full(qx.size, f))
    xs = np.concatenate(all_x)
    ys = np.concatenate(all_y)
    owners_a = np.concatenate(owners)
    qf_a = np.concatenate(qf)
    n = xs.shape[0]

    # visibility: inside the frame and not covered by a nearer layer
    vis = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    layer_of = np.array([np.inf] + [o.depth_layer for o in scene.objects])
    own_layer = layer_of[owners_a]
    wxs, wys = scene.camera.to_world(times[None, :], xs, ys)
    for k, obj in enumerate(scene.objects, start=1):
        nearer = own_layer > obj.depth_layer
        if not nearer.any():
            continue
        cov = obj.contains(times[None, :], wxs[nearer], wys[nearer])
        vis[nearer] &= ~cov

    depth = _track_depth(scene, owners_a, xs, ys, qf_a, times)
    rng = _rng_for(scene.seed, 1 + 1000 * step + grid_size)
    conf = np.ones((n, T))
    low = rng.random((n, T)) < cfg.low_conf_frac
    conf[low] = rng.uniform(0.0, cfg.low_conf_max, size=int(low.sum()))
    conf[np.arange(n), qf_a] = 1.0

    coords = np.stack([xs / w, ys / h], axis=-1)
    tracks = TrackSet(coords, depth, vis, conf, w, h)
    masks = scene.mask_video()
    labels = assign_labels(tracks, masks)
    semantic = semantic_features(scene, tracks, owners_a, rng_purpose=2 + 1000 * step + grid_size)
    return SceneSample(tracks, labels, masks, owners_a, semantic, qf_a)


def _track_depth(scene: Scene, owners, xs, ys, qf, times) -> np.ndarray:
    """Per-layer constant plus a small gradient along the surface's own y axis."""
    k = len(scene.objects)
    depth = np.empty(xs.shape)
    bg = owners == 0
    if bg.any():
        tq = times[qf[bg]]
        _, wy = scene.camera.to_world(tq, xs[bg, qf[bg]], ys[bg, qf[bg]])
        depth[bg] = (k + 2.0 + 0.05 * wy / scene.height)[:, None]
    for i, obj in enumerate(scene.objects, start=1):
        sel = owners == i
        if not sel.any():
            continue
        tq = times[qf[sel]]
        wx, wy = scene.camera.to_world(tq, xs[sel, qf[sel]], ys[sel, qf[sel]])
        _, ly = obj.to_local(tq, wx, wy)
        depth[sel] = (1.0 + obj.depth_layer + 0.05 * ly / max(obj.half_h, 1e-9))[:, None]
    return np.maximum(depth, 0.0)


def semantic_features(scene: Scene, tracks: TrackSet, owners: np.ndarray,
                      rng_purpose: int = 2) -> SemanticFeatures:
    """Mean over valid points of (category embedding + isotropic noise)."""
    cfg = scene.config
    emb = category_embeddings(cfg.num_categories, cfg.semantic_dim)
    cats = np.array([0] + [o.category for o in scene.objects])[owners]
    rng = _rng_for(scene.seed, rng_purpose)
    n, T = tracks.validity.shape
    noise = rng.standard_normal((n, T, cfg.semantic_dim)) * cfg.semantic_noise
    per_point = emb[cats][:, None, :] + noise
    m = tracks.validity
    vec = (per_point * m[..., None]).sum(axis=1) / m.sum(axis=1, keepdims=True)
    return SemanticFeatures(vec, m.copy())


def render_tracks(scene: Scene, grid_size: int | None = None,
                  step: int | None = None) -> tuple[TrackSet, TrackLabels, MaskVideo]:
    s = render_scene(scene, grid_size, step)
    return s.tracks, s.labels, s.masks


def track_membership(tracks: TrackSet, masks: MaskVideo, in_mask_frac: float = 0.5) -> np.ndarray:
    """Object id holding more than ``in_mask_frac`` of each track's valid points (0 = none)."""
    col, row = track_pixels(tracks)
    t_idx = np.broadcast_to(np.arange(tracks.frame_count), col.shape)
    lab = masks.label_maps()[t_idx, row, col]
    lab = np.where(tracks.validity, lab, -1)
    n_valid = tracks.validity.sum(axis=1)
    out = np.zeros(tracks.track_count, dtype=np.int64)
    for oid in masks.ids:
        frac = (lab == oid).sum(axis=1) / n_valid
        out[frac > in_mask_frac] = oid
    return out


# -------------------------------------------------------------- oracle segmenter

def _pixel_of(points) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return (np.ceil(p[:, 0]) - 1).astype(int), (np.ceil(p[:, 1]) - 1).astype(int)


def _majority_owner(scene: Scene, t: int, points) -> int:
    if not 0 <= t < scene.frame_count:
        raise IndexError(f"frame {t} out of range [0, {scene.frame_count})")
    col, row = _pixel_of(points)
    if col.size == 0:
        return 0
    own = scene.owner_maps()[t]
    ok = (col >= 0) & (col < scene.width) & (row >= 0) & (row < scene.height)
    vals = np.where(ok, own[np.clip(row, 0, scene.height - 1), np.clip(col, 0, scene.width - 1)], 0)
    counts = Counter(int(v) for v in vals)
    best = max(counts.values())
    return min(k for k, c in counts.items() if c == best)


def oracle_segment(scene: Scene, t: int, points) -> np.ndarray:
    """Visible mask of the object under most prompt points (empty on background)."""
    owner = _majority_owner(scene, t, points)
    if owner == 0:
        return np.zeros((scene.height, scene.width), dtype=bool)
    return scene.owner_maps()[t] == owner


def _invisible_runs(visible: np.ndarray) -> list[tuple[int, int]]:
    runs, start = [], None
    for t, v in enumerate(visible):
        if not v and start is None:
            start = t
        elif v and start is not None:
            runs.append((start, t))
            start = None
    if start is not None:
        runs.append((start, len(visible)))
    return runs


def oracle_segment_video(scene: Scene, prompts, degrade: bool = False,
                         occlusion_tolerance: int = 5, resolve_conflicts: bool = False) -> MaskVideo:
    """Per-id GT masks for every frame where the prompted object is visible.

    With ``degrade`` on, an object is lost across any invisibility run of at
    least ``occlusion_tolerance`` frames unless a prompt for that id lies on
    the far side of the run. An id prompted on two different objects is a
    ProtocolError, unless ``resolve_conflicts`` is set: then the first prompt
    for the id decides and the conflicting ones are dropped.
    """
    target: dict[int, int] = {}
    prompt_frames: dict[int, list[int]] = {}
    for p in prompts:
        owner = _majority_owner(scene, p.frame, p.points)
        if owner == 0:
            prompt_frames.setdefault(p.obj_id, [])
            continue
        prev = target.setdefault(p.obj_id, owner)
        if prev != owner:
            if not resolve_conflicts:
                raise ProtocolError(f"object id {p.obj_id} prompted on two different objects")
            log.debug("dropping prompt for id %d at frame %d: lands on another object",
                      p.obj_id, p.frame)
            continue
        prompt_frames.setdefault(p.obj_id, []).append(p.frame)
    ids = sorted(prompt_frames)
    own = scene.owner_maps()
    T, H, W = own.shape
    masks = np.zeros((T, len(ids), H, W), dtype=bool)
    for k, oid in enumerate(ids):
        if oid not in target:
            continue
        m = own == target[oid]
        visible = m.any(axis=(1, 2))
        keep = visible.copy()
        if degrade:
            long_runs = [r for r in _invisible_runs(visible) if r[1] - r[0] >= occlusion_tolerance]
            for t in np.flatnonzero(visible):
                keep[t] = any(not any(min(pf, t) < a and b <= max(pf, t) for a, b in long_runs)
                              for pf in prompt_frames[oid])
        masks[:, k] = m & keep[:, None, None]
    return MaskVideo(masks, tuple(ids))


@dataclass
class OracleSegmenter:
    """Ground-truth-backed implementation of the promptable segmenter interface.

    Like a learned segmenter it never rejects a prompt set: with
    ``strict=False`` an id prompted on two objects keeps its first target.
    """

    scene: Scene
    degrade: bool = False
    occlusion_tolerance: int = 5
    strict: bool = False
    calls: int = field(default=0, compare=False)

    def reset(self) -> None:
        pass

    def segment_frame(self, t: int, points, labels=None) -> np.ndarray:
        self.calls += 1
        return oracle_segment(self.scene, t, points)

    def segment_video(self, prompts) -> MaskVideo:
        self.calls += 1
        return oracle_segment_video(self.scene, prompts, self.degrade, self.occlusion_tolerance,
                                    resolve_conflicts=not self.strict)
