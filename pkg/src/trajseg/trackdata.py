"""Trajectory data model, input feature augmentation and track file I/O."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .masks import MaskVideo

__all__ = [
    "MalformedInputError", "TrackFormatError", "TrackSet", "TrackLabels",
    "temporal_diffs", "positional_encode", "assemble_features", "feature_dim",
    "assign_labels", "track_pixels", "read_tracks", "write_tracks",
    "read_labels", "write_labels", "DEFAULT_C_MIN",
]

DEFAULT_C_MIN = 0.5


class MalformedInputError(ValueError):
    """Input arrays violate the track data invariants."""


class TrackFormatError(MalformedInputError):
    """A track file is not in the expected binary layout."""


@dataclass(frozen=True, eq=False)
class TrackSet:
    """N long-range point tracks over T frames.

    Coordinates are normalized: ``u = x / width`` where ``x`` is the
    continuous pixel coordinate (pixel ``i`` spans ``[i, i + 1)``). Values
    outside [0, 1] are kept unclamped for out-of-frame points.
    Arrays are stored as float32 so the binary file format round-trips
    bit-exactly.
    """

    coords: np.ndarray      # (N, T, 2) float32
    depth: np.ndarray       # (N, T) float32
    visibility: np.ndarray  # (N, T) bool
    confidence: np.ndarray  # (N, T) float32
    width: int
    height: int
    c_min: float = DEFAULT_C_MIN
    validity: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float32)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise MalformedInputError(f"coords must be (N, T, 2), got {coords.shape}")
        n, t = coords.shape[:2]
        if n < 1:
            raise MalformedInputError("track set needs at least one track")
        if t < 2:
            raise MalformedInputError("track set needs at least two frames")
        depth = np.ascontiguousarray(self.depth, dtype=np.float32)
        vis = np.ascontiguousarray(self.visibility, dtype=bool)
        conf = np.ascontiguousarray(self.confidence, dtype=np.float32)
        for name, arr in (("depth", depth), ("visibility", vis), ("confidence", conf)):
            if arr.shape != (n, t):
                raise MalformedInputError(f"{name} must be ({n}, {t}), got {arr.shape}")
        if not np.all(np.isfinite(coords)):
            raise MalformedInputError("coordinates contain NaN or inf")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise MalformedInputError("depth must be finite and non-negative")
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise MalformedInputError("confidence must lie in [0, 1]")
        if self.width < 1 or self.height < 1:
            raise MalformedInputError("image size must be positive")
        valid = vis & (conf >= np.float32(self.c_min))
        if not valid.any(axis=1).all():
            bad = int(np.flatnonzero(~valid.any(axis=1))[0])
            raise MalformedInputError(f"track {bad} has no valid point")
        for name, arr in (("coords", coords), ("depth", depth), ("visibility", vis),
                          ("confidence", conf), ("validity", valid)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def track_count(self) -> int:
        return self.coords.shape[0]

    @property
    def frame_count(self) -> int:
        return self.coords.shape[1]

    def select(self, idx) -> "TrackSet":
        idx = np.asarray(idx)
        return TrackSet(self.coords[idx], self.depth[idx], self.visibility[idx],
                        self.confidence[idx], self.width, self.height, self.c_min)

    def frames(self, frame_idx) -> tuple["TrackSet", np.ndarray]:
        """Restrict to a subset of frames, dropping tracks left with no valid point.

        Returns the new set and the indices of the kept tracks.
        """
        f = np.asarray(frame_idx)
        keep = (self.validity[:, f]).any(axis=1)
        kept = np.flatnonzero(keep)
        if kept.size == 0:
            raise MalformedInputError("no track has a valid point in the selected frames")
        sub = TrackSet(self.coords[kept][:, f], self.depth[kept][:, f],
                       self.visibility[kept][:, f], self.confidence[kept][:, f],
                       self.width, self.height, self.c_min)
        return sub, kept

    def with_c_min(self, c_min: float) -> "TrackSet":
        return TrackSet(self.coords, self.depth, self.visibility, self.confidence,
                        self.width, self.height, c_min)

    def equals(self, other: "TrackSet") -> bool:
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.coords, other.coords)
                and np.array_equal(self.depth, other.depth)
                and np.array_equal(self.visibility, other.visibility)
                and np.array_equal(self.confidence, other.confidence))


@dataclass(frozen=True)
class TrackLabels:
    labels: np.ndarray                      # (N,) bool, True = dynamic
    probabilities: np.ndarray | None = None  # (N,) in [0, 1]

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=bool).reshape(-1)
        object.__setattr__(self, "labels", lab)
        if self.probabilities is not None:
            p = np.asarray(self.probabilities, dtype=np.float64).reshape(-1)
            if p.shape != lab.shape:
                raise MalformedInputError("probabilities and labels differ in length")
            object.__setattr__(self, "probabilities", p)

    def __len__(self) -> int:
        return self.labels.size

    @classmethod
    def from_probabilities(cls, probs, threshold: float = 0.5) -> "TrackLabels":
        p = np.asarray(probs, dtype=np.float64)
        return cls(p > threshold, p)


# --------------------------------------------------------------------- features

def temporal_diffs(tracks: TrackSet) -> np.ndarray:
    """Frame-to-frame (du, dv, dd); zero at t=0 and wherever an endpoint is invalid."""
    if tracks.frame_count < 2:
        raise MalformedInputError("temporal differences need T >= 2")
    x = np.concatenate([tracks.coords.astype(np.float64),
                        tracks.depth.astype(np.float64)[..., None]], axis=-1)
    out = np.zeros_like(x)
    out[:, 1:] = x[:, 1:] - x[:, :-1]
    ok = np.zeros(tracks.validity.shape, dtype=bool)
    ok[:, 1:] = tracks.validity[:, 1:] & tracks.validity[:, :-1]
    out[~ok] = 0.0
    return out


def positional_encode(x, n_freqs: int) -> np.ndarray:
    """NeRF-style frequency encoding, interleaved (sin, cos) per octave.

    Works elementwise: the output gains a trailing axis of length
    ``2 * n_freqs``.
    """
    if n_freqs < 1:
        raise ValueError("need at least one frequency")
    x = np.asarray(x, dtype=np.float64)
    freqs = (2.0 ** np.arange(n_freqs)) * np.pi
    ang = x[..., None] * freqs
    out = np.empty(x.shape + (2 * n_freqs,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def feature_dim(n_freqs: int, use_pe: bool = True) -> int:
    return 4 * 2 * n_freqs + 4 if use_pe else 8


def assemble_features(tracks: TrackSet, n_freqs: int = 4, use_pe: bool = True,
                      use_depth: bool = True, use_tracks: bool = True) -> np.ndarray:
    """Per-point input vector (g(u), g(v), g(du), g(dv), d, dd, vis, conf).

    ``use_pe=False`` feeds the raw u, v, du, dv instead of their encodings.
    ``use_depth=False`` zeroes the depth channels and ``use_tracks=False``
    zeroes everything except depth (the track-free ablation). Invalid
    points are zero vectors, except in the track-free ablation where the
    validity pattern itself would leak motion.
    """
    diffs = temporal_diffs(tracks)
    u = tracks.coords[..., 0].astype(np.float64)
    v = tracks.coords[..., 1].astype(np.float64)
    du, dv, dd = diffs[..., 0], diffs[..., 1], diffs[..., 2]
    if use_pe:
        motion = [positional_encode(a, n_freqs) for a in (u, v, du, dv)]
    else:
        motion = [a[..., None] for a in (u, v, du, dv)]
    d = tracks.depth.astype(np.float64)
    rest = np.stack([d, dd, tracks.visibility.astype(np.float64),
                     tracks.confidence.astype(np.float64)], axis=-1)
    feats = np.concatenate(motion + [rest], axis=-1)
    split = feats.shape[-1] - 4
    if not use_tracks:
        feats[..., :split] = 0.0
        feats[..., split + 2:] = 0.0
    if not use_depth:
        feats[..., split:split + 2] = 0.0
    if use_tracks:
        feats[~tracks.validity] = 0.0
    return feats


# ----------------------------------------------------------------------- labels

def track_pixels(tracks: TrackSet) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel (col, row) of every point; exact pixel edges round down.

    A point at continuous coordinate x is assigned the pixel whose center
    ``i + 0.5`` is nearest, ties going to the lower index, i.e.
    ``ceil(x) - 1``. Results are clipped into the image.
    """
    x = tracks.coords[..., 0].astype(np.float64) * tracks.width
    y = tracks.coords[..., 1].astype(np.float64) * tracks.height
    col = np.clip(np.ceil(x) - 1, 0, tracks.width - 1).astype(np.int64)
    row = np.clip(np.ceil(y) - 1, 0, tracks.height - 1).astype(np.int64)
    return col, row


def in_frame(tracks: TrackSet) -> np.ndarray:
    u, v = tracks.coords[..., 0], tracks.coords[..., 1]
    return (u >= 0) & (u < 1) & (v >= 0) & (v < 1)


def assign_labels(tracks: TrackSet, gt: "MaskVideo", in_mask_frac: float = 0.5) -> TrackLabels:
    """Dynamic iff more than ``in_mask_frac`` of the valid points fall in a dynamic GT mask."""
    if gt.frame_count != tracks.frame_count or gt.shape != (tracks.height, tracks.width):
        raise MalformedInputError(
            f"GT masks {gt.frame_count}x{gt.shape} do not match tracks "
            f"{tracks.frame_count}x{(tracks.height, tracks.width)}")
    dyn = gt.dynamic_union()                     # (T, H, W)
    col, row = track_pixels(tracks)
    t_idx = np.broadcast_to(np.arange(tracks.frame_count), col.shape)
    inside = dyn[t_idx, row, col] & in_frame(tracks) & tracks.validity
    n_valid = tracks.validity.sum(axis=1)
    frac = inside.sum(axis=1) / np.maximum(n_valid, 1)
    return TrackLabels(frac > in_mask_frac)


# ------------------------------------------------------------------------ files

_MAGIC = b"TRKS"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def write_tracks(tracks: TrackSet, path: str | Path) -> None:
    path = Path(path)
    n, t = tracks.track_count, tracks.frame_count
    payload = b"".join([
        _HEADER.pack(_MAGIC, _VERSION, n, t, tracks.width, tracks.height),
        tracks.coords.astype("<f4").tobytes(),
        tracks.depth.astype("<f4").tobytes(),
        tracks.visibility.astype(np.uint8).tobytes(),
        tracks.confidence.astype("<f4").tobytes(),
    ])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def read_tracks(path: str | Path, c_min: float = DEFAULT_C_MIN) -> TrackSet:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise TrackFormatError("truncated header")
    magic, version, n, t, w, h = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC:
        raise TrackFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise TrackFormatError(f"unsupported version {version}")
    if n == 0:
        raise MalformedInputError("track file holds zero tracks")
    sizes = [n * t * 2 * 4, n * t * 4, n * t, n * t * 4]
    if len(buf) != _HEADER.size + sum(sizes):
        raise TrackFormatError("truncated or oversized payload")
    off = _HEADER.size
    coords = np.frombuffer(buf, "<f4", n * t * 2, off).reshape(n, t, 2)
    off += sizes[0]
    depth = np.frombuffer(buf, "<f4", n * t, off).reshape(n, t)
    off += sizes[1]
    vis = np.frombuffer(buf, np.uint8, n * t, off).reshape(n, t)
    off += sizes[2]
    conf = np.frombuffer(buf, "<f4", n * t, off).reshape(n, t)
    if np.any(vis > 1):
        raise TrackFormatError("visibility bytes must be 0 or 1")
    return TrackSet(coords.copy(), depth.copy(), vis.astype(bool), conf.copy(), w, h, c_min)


def write_labels(labels: TrackLabels, path: str | Path) -> None:
    path = Path(path)
    text = "".join("1\n" if x else "0\n" for x in labels.labels)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def read_labels(path: str | Path) -> TrackLabels:
    lines = Path(path).read_text().splitlines()
    if any(line not in ("0", "1") for line in lines):
        raise MalformedInputError("label file lines must be 0 or 1")
    return TrackLabels(np.array([line == "1" for line in lines], dtype=bool))
