"""Command-line entry point: ``trajseg gen|train|infer|eval|viz``.

Settings resolve as built-in defaults < ``--config`` YAML file < flags.
Exit codes: 0 success, 1 quality gate failed, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import dataset as ds
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .evaluation import EvalReport, eval_fine_grained, eval_mos
from .masks import MaskVideo, read_mask_dir, write_mask_dir, write_ppm
from .model import VARIANTS, ModelConfig, MotionSegModel
from .prompting import ObjectMemory, PromptParams, segment_tracks
from .synth import GenerationError, OracleSegmenter, SceneConfig
from .tensor import CheckpointError
from .trackdata import MalformedInputError, TrackLabels, write_labels
from .training import TrainConfig, TrainExample, train

log = logging.getLogger("trajseg")

EXIT_OK, EXIT_GATE, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    """Bad or unknown configuration value."""


# ------------------------------------------------------------------ config

def _model_keys() -> dict:
    keys = {k: None for k in EncoderConfig.__dataclass_fields__}
    keys.update({k: None for k in DecoderConfig.__dataclass_fields__})
    return {"variant": "full", **keys}


def default_config() -> dict:
    train_keys = TrainConfig().to_dict()
    del train_keys["seed"]
    prompt_keys = asdict(PromptParams())
    del prompt_keys["threshold"]
    return {
        "seed": 0,
        "workers": 1,
        "threshold": 0.5,
        "paths": {"data": "data", "checkpoint": "run/model.ckpt", "metrics": "run/metrics.csv",
                  "predictions": "run/predictions", "reports": "run/reports", "viz": "run/viz"},
        "gen": {"scenes": 5, "scene": SceneConfig().to_dict()},
        "model": _model_keys(),
        "train": {**train_keys, "resume": False},
        "infer": {"labels": "model", "segmenter": "oracle", "degrade": False,
                  "occlusion_tolerance": 5, "prompt": prompt_keys},
        "eval": {"tol_radius": None,
                 "gate": {"mos_jf": None, "fine_jf": None, "accuracy": None}},
        "viz": {"scale": 4, "scenes": None},
    }


def merge_config(base: dict, override: dict, where: str = "") -> dict:
    """Recursive merge that rejects keys absent from ``base``."""
    if not isinstance(override, dict):
        raise ConfigError(f"config section {where or '<root>'} must be a mapping")
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(base[key], dict):
            out[key] = merge_config(base[key], value or {}, path)
        else:
            out[key] = value
    return out


def set_path(cfg: dict, dotted: str, value: Any) -> None:
    node = cfg
    parts = dotted.split(".")
    for i, part in enumerate(parts):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {'.'.join(parts[:i + 1])}")
        if i == len(parts) - 1:
            if isinstance(node[part], dict):
                raise ConfigError(f"config key {dotted} is a section")
            node[part] = value
        else:
            node = node[part]


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = default_config()
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        try:
            loaded = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        cfg = merge_config(cfg, loaded)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        set_path(cfg, key.strip(), yaml.safe_load(raw))
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("threshold", "threshold"),
                      ("data", "paths.data"), ("checkpoint", "paths.checkpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            set_path(cfg, key, value)
    if getattr(args, "resume", False):
        cfg["train"]["resume"] = True
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def scene_config(cfg: dict) -> SceneConfig:
    return SceneConfig.from_dict(cfg["gen"]["scene"])


def model_config(cfg: dict) -> ModelConfig:
    m = dict(cfg["model"])
    variant = m.pop("variant")
    if variant not in VARIANTS:
        raise ConfigError(f"model.variant must be one of {VARIANTS}")
    return ModelConfig.build(variant, **{k: v for k, v in m.items() if v is not None})


def train_config(cfg: dict) -> TrainConfig:
    t = {k: v for k, v in cfg["train"].items() if k != "resume"}
    return TrainConfig(**t, seed=int(cfg["seed"]))


def prompt_params(cfg: dict) -> PromptParams:
    return PromptParams(threshold=float(cfg["threshold"]), **cfg["infer"]["prompt"])


# ------------------------------------------------------------------ helpers

def _parallel_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; a process pool when ``workers`` > 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _scene_dirs(data: Path) -> list[Path]:
    manifest = ds.read_manifest(data)
    dirs = [data / e["name"] for e in manifest["scenes"]]
    missing = [d for d in dirs if not d.is_dir()]
    if missing:
        raise FileNotFoundError(f"scene directory {missing[0]} listed in manifest is missing")
    return dirs


def _dump_yaml(data: Any) -> str:
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


# ------------------------------------------------------------------ gen

@dataclass(frozen=True)
class _GenJob:
    root: str
    index: int
    seed: int
    config: SceneConfig


def _gen_one(job: _GenJob) -> dict:
    name = ds.scene_name(job.index)
    scene, sample = ds.render(job.config, job.seed)
    path = ds.write_scene(job.root, name, scene, sample, job.config.grid_size, job.config.step)
    return {"name": name, "seed": job.seed, "tracks": sample.tracks.track_count,
            "dynamic_tracks": int(sample.labels.labels.sum()), "digest": ds.tree_digest(path)}


def cmd_gen(cfg: dict) -> int:
    root = Path(cfg["paths"]["data"])
    sc = scene_config(cfg)
    sc.validate()
    n = int(cfg["gen"]["scenes"])
    if n < 1:
        raise ConfigError("gen.scenes must be >= 1")
    base = int(cfg["seed"])
    jobs = [_GenJob(str(root), i, ds.scene_seed(base, i), sc) for i in range(n)]
    entries = _parallel_map(_gen_one, jobs, int(cfg["workers"]))
    ds.write_manifest(root, entries, {"seed": base, "scene_config": sc.to_dict()})
    log.info("wrote %d scenes to %s", n, root)
    return EXIT_OK


# ------------------------------------------------------------------ train

def load_examples(data: Path) -> list[TrainExample]:
    out = []
    for d in _scene_dirs(data):
        tracks = ds.load_tracks(d)
        sem = ds.load_semantic(d, tracks)
        labels = ds.load_labels(d)
        if len(labels) != tracks.track_count:
            raise MalformedInputError(f"{d}: {len(labels)} labels for {tracks.track_count} tracks")
        out.append(TrainExample(d.name, tracks, sem.vectors, labels.labels))
    return out


def cmd_train(cfg: dict) -> int:
    data = Path(cfg["paths"]["data"])
    ckpt = Path(cfg["paths"]["checkpoint"])
    metrics = Path(cfg["paths"]["metrics"])
    examples = load_examples(data)
    tc = train_config(cfg)
    resume = None
    if cfg["train"]["resume"]:
        if not ckpt.is_file():
            raise FileNotFoundError(f"cannot resume: checkpoint {ckpt} not found")
        model, resume = MotionSegModel.load(ckpt)
    else:
        model = MotionSegModel(model_config(cfg), seed=int(cfg["seed"]))
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    metrics.parent.mkdir(parents=True, exist_ok=True)
    result = train(model, examples, tc, metrics_path=metrics, checkpoint_path=ckpt, resume=resume)
    if not ckpt.is_file():
        model.save(ckpt)
    log.info("trained to step %d in %.1fs, val_acc %.4f", result.step, result.seconds, result.val_acc)
    return EXIT_OK


# ------------------------------------------------------------------ infer

@dataclass(frozen=True)
class _InferJob:
    scene_dir: str
    out_root: str
    checkpoint: str | None
    labels: str
    degrade: bool
    occlusion_tolerance: int
    params: PromptParams


_MODEL_CACHE: dict[str, MotionSegModel] = {}


def _model(path: str) -> MotionSegModel:
    if path not in _MODEL_CACHE:
        _MODEL_CACHE[path] = MotionSegModel.load(path)[0]
    return _MODEL_CACHE[path]


def _infer_one(job: _InferJob) -> dict:
    d = Path(job.scene_dir)
    record = ds.read_record(d)
    tracks = ds.load_tracks(d)
    if job.labels == "gt":
        probs = ds.load_labels(d).labels.astype(np.float64)
    else:
        probs = _model(job.checkpoint).predict(tracks, ds.load_semantic(d, tracks))
    seg = OracleSegmenter(ds.regenerate(record), degrade=job.degrade,
                          occlusion_tolerance=job.occlusion_tolerance)
    memory, video = segment_tracks(tracks, probs, seg, job.params)
    with ds.staged_dir(Path(job.out_root) / d.name) as out:
        (out / "labels").mkdir()
        write_labels(TrackLabels.from_probabilities(probs, job.params.threshold),
                     out / "labels" / "labels.txt")
        np.savetxt(out / "labels" / "probs.txt", probs, fmt="%.9f")
        (out / "memory.json").write_text(json.dumps(
            {"objects": {str(k): v for k, v in memory.to_dict().items()}}, indent=1, sort_keys=True))
        write_mask_dir(video, out / "masks")
    if video.object_count == 0:
        log.warning("%s: no dynamic objects found", d.name)
    return {"name": d.name, "objects": video.object_count,
            "dynamic_tracks": int((probs > job.params.threshold).sum())}


def cmd_infer(cfg: dict) -> int:
    data = Path(cfg["paths"]["data"])
    out = Path(cfg["paths"]["predictions"])
    inf = cfg["infer"]
    if inf["labels"] not in ("model", "gt"):
        raise ConfigError("infer.labels must be 'model' or 'gt'")
    if inf["segmenter"] != "oracle":
        raise ConfigError("infer.segmenter: only 'oracle' is built in")
    ckpt = None
    if inf["labels"] == "model":
        ckpt = str(cfg["paths"]["checkpoint"])
        if not Path(ckpt).is_file():
            raise FileNotFoundError(f"checkpoint {ckpt} not found")
        _model(ckpt)        # fail early on a corrupt checkpoint
    params = prompt_params(cfg)
    jobs = [_InferJob(str(d), str(out), ckpt, inf["labels"], bool(inf["degrade"]),
                      int(inf["occlusion_tolerance"]), params) for d in _scene_dirs(data)]
    entries = _parallel_map(_infer_one, jobs, int(cfg["workers"]))
    ds.write_manifest(out, entries, {"threshold": params.threshold, "labels": inf["labels"]})
    return EXIT_OK


# ------------------------------------------------------------------ eval

@dataclass(frozen=True)
class _EvalJob:
    scene_dir: str
    pred_dir: str
    tol_radius: int | None


def _eval_one(job: _EvalJob) -> tuple[EvalReport, EvalReport, int, int]:
    record = ds.read_record(job.scene_dir)
    gt = ds.load_gt_masks(record)
    pred_dir = Path(job.pred_dir)
    if not (pred_dir / "masks").is_dir():
        raise FileNotFoundError(f"no predicted masks for {record.name} in {pred_dir}")
    pred = read_mask_dir(pred_dir / "masks") if any((pred_dir / "masks").glob("*.pgm")) \
        else MaskVideo.empty(gt.frame_count, *gt.shape)
    if pred.frame_count != gt.frame_count or pred.shape != gt.shape:
        raise MalformedInputError(f"{record.name}: predicted masks do not match ground truth size")
    mos = eval_mos(pred, gt, record.name, job.tol_radius)
    fine = eval_fine_grained(pred, gt, record.name, job.tol_radius)
    correct = total = 0
    label_file = pred_dir / "labels" / "labels.txt"
    if label_file.is_file():
        from .trackdata import read_labels
        pl = read_labels(label_file).labels
        gl = ds.load_labels(job.scene_dir).labels
        if pl.shape == gl.shape:
            correct, total = int((pl == gl).sum()), int(gl.size)
    return mos, fine, correct, total


def evaluate_dirs(data: Path, predictions: Path, tol_radius: int | None,
                  workers: int = 1) -> tuple[EvalReport, EvalReport, float | None]:
    scenes = _scene_dirs(data)
    jobs = [_EvalJob(str(d), str(predictions / d.name), tol_radius) for d in scenes]
    results = _parallel_map(_eval_one, jobs, workers)
    mos = EvalReport.combine([r[0] for r in results])
    fine = EvalReport.combine([r[1] for r in results])
    correct = sum(r[2] for r in results)
    total = sum(r[3] for r in results)
    return mos, fine, (correct / total if total else None)


def cmd_eval(cfg: dict) -> int:
    data = Path(cfg["paths"]["data"])
    preds = Path(cfg["paths"]["predictions"])
    reports = Path(cfg["paths"]["reports"])
    t0 = time.perf_counter()
    tol = cfg["eval"]["tol_radius"]
    mos, fine, acc = evaluate_dirs(data, preds, None if tol is None else int(tol), int(cfg["workers"]))
    values = {"mos_jf": mos.JF, "fine_jf": fine.JF, "accuracy": acc}
    gates = {}
    for name, threshold in sorted(cfg["eval"]["gate"].items()):
        if threshold is None:
            continue
        v = values[name]
        gates[name] = {"threshold": float(threshold), "value": None if v is None else round(v, 6),
                       "passed": v is not None and v >= float(threshold)}
    summary = {"mos": mos.summary(), "fine": fine.summary(),
               "accuracy": None if acc is None else round(acc, 6), "gates": gates}
    with ds.staged_dir(reports) as out:
        mos.write(out)
        fine.write(out)
        (out / "summary.yaml").write_text(_dump_yaml(summary))
    log.info("eval took %.2fs: MOS J&F %.4f, fine J&F %.4f", time.perf_counter() - t0, mos.JF, fine.JF)
    print(f"MOS J&F {mos.JF:.4f}  fine J&F {fine.JF:.4f}"
          + ("" if acc is None else f"  track accuracy {acc:.4f}"))
    failed = [k for k, g in gates.items() if not g["passed"]]
    if failed:
        print(f"quality gate failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


# ------------------------------------------------------------------ viz

_BACKGROUND = np.array([24, 24, 24], dtype=np.uint8)


def object_color(obj_id: int) -> np.ndarray:
    """Fixed bright color per id (golden-angle hue walk)."""
    h = (obj_id * 0.618033988749895) % 1.0
    i = int(h * 6)
    f = h * 6 - i
    q, t = 1 - f, f
    r, g, b = [(1, t, 0), (q, 1, 0), (0, 1, t), (0, q, 1), (t, 0, 1), (1, 0, q)][i % 6]
    return (np.array([r, g, b]) * 200 + 55).astype(np.uint8)


def render_overlay(labels: np.ndarray, points: list[tuple[float, float, int, bool]],
                   scale: int) -> np.ndarray:
    """One RGB frame: mask boundaries and track markers on a plain background.

    ``points`` holds (x, y, object id, visible); invisible points get hollow markers.
    """
    from .evaluation import inner_boundary
    h, w = labels.shape
    img = np.empty((h * scale, w * scale, 3), dtype=np.uint8)
    img[:] = _BACKGROUND
    big = np.kron(labels, np.ones((scale, scale), dtype=labels.dtype))
    for oid in np.unique(big):
        if oid == 0:
            continue
        img[inner_boundary(big == oid)] = object_color(int(oid))
    r = max(1, scale // 2)
    for x, y, oid, visible in points:
        cx, cy = int(x * scale), int(y * scale)
        color = object_color(oid) if oid > 0 else np.array([255, 255, 255], np.uint8)
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                on_ring = max(abs(dx), abs(dy)) == r
                if (visible or on_ring) and 0 <= cy + dy < img.shape[0] and 0 <= cx + dx < img.shape[1]:
                    img[cy + dy, cx + dx] = color
    return img


def cmd_viz(cfg: dict) -> int:
    data = Path(cfg["paths"]["data"])
    preds = Path(cfg["paths"]["predictions"])
    out_root = Path(cfg["paths"]["viz"])
    scale = int(cfg["viz"]["scale"])
    if scale < 1:
        raise ConfigError("viz.scale must be >= 1")
    wanted = cfg["viz"]["scenes"]
    for d in _scene_dirs(data):
        if wanted is not None and d.name not in wanted:
            continue
        tracks = ds.load_tracks(d)
        pdir = preds / d.name
        if (pdir / "masks").is_dir():
            video = read_mask_dir(pdir / "masks") if any((pdir / "masks").glob("*.pgm")) \
                else MaskVideo.empty(tracks.frame_count, tracks.height, tracks.width)
            mem = json.loads((pdir / "memory.json").read_text())["objects"]
            owner = {int(i): int(k) for k, v in mem.items() for i in v["tracks"]}
        else:
            video = ds.load_gt_masks(ds.read_record(d))
            owner = {}
        labels = video.label_maps() if video.object_count else \
            np.zeros((tracks.frame_count, tracks.height, tracks.width), dtype=np.int64)
        xy = tracks.coords.astype(np.float64) * [tracks.width, tracks.height]
        with ds.staged_dir(out_root / d.name) as out:
            for t in range(tracks.frame_count):
                pts = [(xy[i, t, 0], xy[i, t, 1], oid, bool(tracks.visibility[i, t]))
                       for i, oid in sorted(owner.items())]
                write_ppm(out / f"{t:05d}.ppm", render_overlay(labels[t], pts, scale))
    return EXIT_OK


# ------------------------------------------------------------------ main

COMMANDS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "viz": cmd_viz}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--threshold", type=float)
        s.add_argument("--data", help="dataset directory")
        s.add_argument("--checkpoint", help="model checkpoint path")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key, e.g. --set train.epochs=1")
        if name == "train":
            s.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    return p


def _setup_logging() -> None:
    level = os.environ.get("TRAJSEG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, KeyError, TypeError, GenerationError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"trajseg {args.command}: configuration error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MalformedInputError, CheckpointError, ValueError) as exc:
        print(f"trajseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
