"""Per-frame, per-object binary mask videos and their image-file forms."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

__all__ = ["MaskVideo", "write_pgm", "read_pgm", "write_ppm", "read_ppm",
           "write_mask_dir", "read_mask_dir", "dilate"]


@dataclass(frozen=True, eq=False)
class MaskVideo:
    """``masks[t, k]`` is the H x W boolean mask of object ``ids[k]`` at frame t."""

    masks: np.ndarray          # (T, K, H, W) bool
    ids: tuple[int, ...]
    dynamic: tuple[bool, ...] | None = None

    def __post_init__(self):
        m = np.asarray(self.masks, dtype=bool)
        if m.ndim != 4:
            raise ValueError(f"masks must be (T, K, H, W), got {m.shape}")
        ids = tuple(int(i) for i in self.ids)
        if len(ids) != m.shape[1]:
            raise ValueError("one id per object plane required")
        if len(set(ids)) != len(ids) or any(i <= 0 for i in ids):
            raise ValueError("object ids must be unique positive integers")
        dyn = None if self.dynamic is None else tuple(bool(d) for d in self.dynamic)
        if dyn is not None and len(dyn) != len(ids):
            raise ValueError("one dynamic flag per object required")
        object.__setattr__(self, "masks", m)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "dynamic", dyn)

    @classmethod
    def empty(cls, frames: int, height: int, width: int) -> "MaskVideo":
        return cls(np.zeros((frames, 0, height, width), dtype=bool), ())

    @classmethod
    def from_label_maps(cls, labels: np.ndarray) -> "MaskVideo":
        lab = np.asarray(labels)
        ids = tuple(int(i) for i in np.unique(lab) if i != 0)
        masks = np.stack([lab == i for i in ids], axis=1) if ids else \
            np.zeros((lab.shape[0], 0) + lab.shape[1:], dtype=bool)
        return cls(masks, ids)

    @property
    def frame_count(self) -> int:
        return self.masks.shape[0]

    @property
    def object_count(self) -> int:
        return self.masks.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.masks.shape[2], self.masks.shape[3]

    def dynamic_only(self) -> "MaskVideo":
        if self.dynamic is None:
            return self
        keep = [k for k, d in enumerate(self.dynamic) if d]
        return MaskVideo(self.masks[:, keep], tuple(self.ids[k] for k in keep),
                         tuple(True for _ in keep))

    def dynamic_union(self) -> np.ndarray:
        """(T, H, W) union of the dynamic objects (all objects when unflagged)."""
        return self.dynamic_only().masks.any(axis=1)

    def union(self) -> np.ndarray:
        return self.masks.any(axis=1)

    def get(self, obj_id: int) -> np.ndarray:
        return self.masks[:, self.ids.index(obj_id)]

    def label_maps(self) -> np.ndarray:
        """(T, H, W) integer map; where objects overlap, the lower plane index wins."""
        t, k, h, w = self.masks.shape
        out = np.zeros((t, h, w), dtype=np.int64)
        for plane in range(k - 1, -1, -1):
            out[self.masks[:, plane]] = self.ids[plane]
        return out

    def equals(self, other: "MaskVideo") -> bool:
        return self.ids == other.ids and np.array_equal(self.masks, other.masks)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a disk structuring element (``dx^2 + dy^2 <= r^2``)."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    return kernels.dilate_disk(np.asarray(mask, dtype=bool), int(radius))


# ------------------------------------------------------------- Netpbm images

def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2 or img.min(initial=0) < 0:
        raise ValueError("PGM needs a non-negative 2-D array")
    maxval = 255 if img.max(initial=0) <= 255 else 65535
    h, w = img.shape
    body = img.astype(np.uint8).tobytes() if maxval == 255 else img.astype(">u2").tobytes()
    _atomic_write(Path(path), f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def _read_netpbm(path: str | Path, magic: bytes) -> tuple[np.ndarray, int, int, int]:
    buf = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic!r} image, got {tokens[0]!r}")
    w, h, maxval = (int(x) for x in tokens[1:])
    return np.frombuffer(buf, dtype=np.uint8, offset=pos + 1), w, h, maxval


def read_pgm(path: str | Path) -> np.ndarray:
    raw, w, h, maxval = _read_netpbm(path, b"P5")
    if maxval < 256:
        return raw[:w * h].reshape(h, w).astype(np.int64)
    return np.frombuffer(raw.tobytes()[:2 * w * h], dtype=">u2").reshape(h, w).astype(np.int64)


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    img = np.asarray(rgb, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) array")
    h, w = img.shape[:2]
    _atomic_write(Path(path), f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw, w, h, _ = _read_netpbm(path, b"P6")
    return raw[:w * h * 3].reshape(h, w, 3).copy()


def write_mask_dir(video: MaskVideo, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(video.label_maps()):
        write_pgm(d / f"{t:05d}.pgm", frame)


def read_mask_dir(directory: str | Path) -> MaskVideo:
    files = sorted(Path(directory).glob("*.pgm"))
    if not files:
        raise FileNotFoundError(f"no PGM frames in {directory}")
    return MaskVideo.from_label_maps(np.stack([read_pgm(f) for f in files]))
