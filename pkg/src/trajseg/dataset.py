"""On-disk layout of generated scenes and pipeline outputs.

A dataset directory holds ``manifest.json`` and one directory per scene::

    scene_0000/
        config/scene.yaml      generator config, seed, render grid, dynamic ids, scene digest
        tracks/tracks.trks     binary track file
        tracks/semantic.npy    (N, D) float64 per-track semantic vectors
        labels/labels.txt      one 0/1 line per track
        masks/00000.pgm ...    per-frame object-id maps, 0 = background

Scene directories are staged under a temporary name and renamed into
place, so a reader never sees a half-written scene.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .masks import MaskVideo, read_mask_dir, write_mask_dir
from .synth import Scene, SceneConfig, SceneSample, SemanticFeatures, generate_scene, render_scene
from .trackdata import TrackLabels, TrackSet, read_labels, read_tracks, write_labels, write_tracks

__all__ = ["MANIFEST", "scene_name", "scene_seed", "SceneRecord", "write_scene", "read_record",
           "load_tracks", "load_semantic", "load_labels", "load_gt_masks", "regenerate",
           "tree_digest", "write_manifest", "read_manifest", "atomic_write_text", "staged_dir"]

MANIFEST = "manifest.json"


def scene_name(index: int) -> str:
    return f"scene_{index:04d}"


def scene_seed(base_seed: int, index: int) -> int:
    """Per-scene seed derived from the run seed; stable across platforms."""
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


class staged_dir:
    """Context manager yielding a scratch directory that replaces ``target`` on success."""

    def __init__(self, target: str | Path):
        self.target = Path(target)

    def __enter__(self) -> Path:
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=self.target.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)


@dataclass(frozen=True)
class SceneRecord:
    name: str
    path: Path
    seed: int
    config: SceneConfig
    grid_size: int
    step: int
    dynamic_ids: tuple[int, ...]
    digest: str


def write_scene(root: str | Path, name: str, scene: Scene, sample: SceneSample,
                grid_size: int, step: int) -> Path:
    target = Path(root) / name
    with staged_dir(target) as d:
        for sub in ("config", "tracks", "labels", "masks"):
            (d / sub).mkdir()
        meta = {"seed": int(scene.seed), "grid_size": int(grid_size), "step": int(step),
                "dynamic_ids": [int(i) for i, dyn in zip(sample.masks.ids, sample.masks.dynamic or ())
                                if dyn],
                "digest": scene.digest(), "config": scene.config.to_dict()}
        (d / "config" / "scene.yaml").write_text(yaml.safe_dump(meta, sort_keys=True))
        write_tracks(sample.tracks, d / "tracks" / "tracks.trks")
        with open(d / "tracks" / "semantic.npy", "wb") as fh:
            np.save(fh, np.ascontiguousarray(sample.semantic.vectors, dtype="<f8"))
        write_labels(sample.labels, d / "labels" / "labels.txt")
        write_mask_dir(sample.masks, d / "masks")
    return target


def read_record(scene_dir: str | Path) -> SceneRecord:
    d = Path(scene_dir)
    path = d / "config" / "scene.yaml"
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found")
    meta = yaml.safe_load(path.read_text())
    return SceneRecord(d.name, d, int(meta["seed"]), SceneConfig.from_dict(meta["config"]),
                       int(meta["grid_size"]), int(meta["step"]),
                       tuple(int(i) for i in meta["dynamic_ids"]), str(meta["digest"]))


def load_tracks(scene_dir: str | Path) -> TrackSet:
    return read_tracks(Path(scene_dir) / "tracks" / "tracks.trks")


def load_semantic(scene_dir: str | Path, tracks: TrackSet) -> SemanticFeatures:
    vectors = np.load(Path(scene_dir) / "tracks" / "semantic.npy", allow_pickle=False)
    if vectors.shape[0] != tracks.track_count:
        raise ValueError(f"{scene_dir}: {vectors.shape[0]} semantic rows for {tracks.track_count} tracks")
    return SemanticFeatures(vectors.astype(np.float64), tracks.validity.copy())


def load_labels(scene_dir: str | Path) -> TrackLabels:
    return read_labels(Path(scene_dir) / "labels" / "labels.txt")


def load_gt_masks(record: SceneRecord) -> MaskVideo:
    v = read_mask_dir(record.path / "masks")
    return MaskVideo(v.masks, v.ids, tuple(i in record.dynamic_ids for i in v.ids))


def regenerate(record: SceneRecord) -> Scene:
    """Rebuild the scene from its stored config and seed (for the oracle segmenter)."""
    scene = generate_scene(record.config, record.seed)
    if scene.digest() != record.digest:
        raise ValueError(f"{record.name}: regenerated scene does not match the stored digest")
    return scene


def render(config: SceneConfig, seed: int, grid_size: int | None = None,
           step: int | None = None) -> tuple[Scene, SceneSample]:
    scene = generate_scene(config, seed)
    return scene, render_scene(scene, grid_size, step)


def tree_digest(directory: str | Path) -> str:
    """sha256 over the relative paths and bytes of every file below ``directory``."""
    root = Path(directory)
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(f.relative_to(root).as_posix().encode() + b"\0")
        h.update(f.read_bytes())
    return h.hexdigest()


def write_manifest(root: str | Path, entries: list[dict], extra: dict | None = None) -> None:
    body = {**(extra or {}), "scenes": entries}
    atomic_write_text(Path(root) / MANIFEST, json.dumps(body, indent=2, sort_keys=True) + "\n")


def read_manifest(root: str | Path) -> dict:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    return json.loads(path.read_text())
