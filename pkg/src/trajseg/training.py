"""Weighted-BCE training over synthetic scenes."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as tn
from .model import MotionSegModel
from .synth import SceneSample, SemanticFeatures
from .tensor import AdamState, NonFiniteError, Tensor
from .trackdata import TrackLabels, TrackSet

__all__ = ["TrainConfig", "TrainExample", "TrainingDiverged", "EPS", "weighted_bce",
           "class_weights", "split_dataset", "sample_batch", "evaluate_accuracy",
           "TrainResult", "train"]

log = logging.getLogger(__name__)

EPS = 1e-7


class TrainingDiverged(NonFiniteError):
    """Loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 5
    steps_per_epoch: int | None = None      # None: one pass over the training scenes
    batch_scenes: int = 1
    track_counts: tuple[int, ...] = (64, 96, 128)
    frame_stride: int = 4
    long_scene_frames: int = 32             # scenes at least this long get frame-subsampled
    val_fraction: float = 0.2
    val_max_tracks: int = 256
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "track_counts", tuple(int(n) for n in self.track_counts))
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0 or self.batch_scenes < 1 or self.frame_stride < 1:
            raise ValueError("epochs, batch_scenes and frame_stride must be positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")
        if not self.track_counts or min(self.track_counts) < 1:
            raise ValueError("track_counts must be a non-empty set of positive counts")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["track_counts"] = list(self.track_counts)
        return d


@dataclass(frozen=True, eq=False)
class TrainExample:
    name: str
    tracks: TrackSet
    semantic: np.ndarray        # (N, D)
    labels: np.ndarray          # (N,) bool

    @classmethod
    def from_sample(cls, name: str, s: SceneSample) -> "TrainExample":
        return cls(name, s.tracks, s.semantic.vectors, s.labels.labels)


# ------------------------------------------------------------------ loss

def class_weights(labels: np.ndarray, valid: np.ndarray) -> tuple[float, float]:
    """Inverse class frequency with w_pos * n_pos + w_neg * n_neg = n; an absent class gets 1."""
    y = np.asarray(labels, dtype=bool)[valid]
    n = y.size
    n_pos = int(y.sum())
    n_neg = n - n_pos
    w_pos = n / (2.0 * n_pos) if n_pos and n_neg else 1.0
    w_neg = n / (2.0 * n_neg) if n_pos and n_neg else 1.0
    return w_pos, w_neg


def weighted_bce(probs: Tensor, labels, valid=None, weights: tuple[float, float] | None = None) -> Tensor:
    y = np.asarray(labels, dtype=bool).reshape(-1)
    v = np.ones(y.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(-1)
    if probs.shape != y.shape or v.shape != y.shape:
        raise ValueError(f"probs {probs.shape}, labels {y.shape}, valid {v.shape} differ")
    if not v.any():
        raise ValueError("weighted_bce needs at least one valid track")
    w_pos, w_neg = class_weights(y, v) if weights is None else weights
    # clamp the log arguments, so p == y costs exactly zero
    log_p = tn.log(tn.clip(probs, EPS, 1.0))
    log_q = tn.log(tn.clip(tn.sub(1.0, probs), EPS, 1.0))
    coef_pos = np.where(v & y, w_pos, 0.0)
    coef_neg = np.where(v & ~y, w_neg, 0.0)
    terms = tn.add(tn.mul(log_p, coef_pos), tn.mul(log_q, coef_neg))
    return tn.mul(tn.sum_(terms), -1.0 / float(v.sum()))


# ------------------------------------------------------------------ data

def split_dataset(dataset: Sequence[TrainExample], cfg: TrainConfig
                  ) -> tuple[list[TrainExample], list[TrainExample]]:
    """Seeded partition; at least one scene on each side when there are two or more."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    order = np.random.default_rng([cfg.seed, 11]).permutation(n)
    n_val = int(math.ceil(cfg.val_fraction * n)) if n > 1 else 0
    n_val = min(n_val, n - 1)
    val = sorted(order[:n_val].tolist())
    train = sorted(order[n_val:].tolist())
    return [dataset[i] for i in train], [dataset[i] for i in val]


def subsample_frames(T: int, stride: int, phase: int) -> np.ndarray:
    return np.arange(phase, T, stride)


def sample_batch(dataset: Sequence[TrainExample], cfg: TrainConfig, rng: np.random.Generator
                 ) -> tuple[TrackSet, SemanticFeatures, TrackLabels]:
    """One scene, a random track subset of a configured size, strided frames for long scenes.

    A scene with fewer tracks than every configured size is used whole.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    ex = dataset[int(rng.integers(len(dataset)))]
    tracks, sem, lab = ex.tracks, ex.semantic, ex.labels
    if tracks.frame_count >= cfg.long_scene_frames and cfg.frame_stride > 1:
        phase = int(rng.integers(cfg.frame_stride))
        tracks, kept = tracks.frames(subsample_frames(tracks.frame_count, cfg.frame_stride, phase))
        sem, lab = sem[kept], lab[kept]
    feasible = [n for n in cfg.track_counts if n <= tracks.track_count]
    n = int(rng.choice(feasible)) if feasible else tracks.track_count
    idx = np.sort(rng.choice(tracks.track_count, size=n, replace=False))
    sub = tracks.select(idx)
    return sub, SemanticFeatures(sem[idx], sub.validity.copy()), TrackLabels(lab[idx])


def _eval_subset(ex: TrainExample, cap: int) -> np.ndarray:
    n = ex.tracks.track_count
    if n <= cap:
        return np.arange(n)
    return np.sort(np.random.default_rng([n, 5]).choice(n, size=cap, replace=False))


def evaluate_accuracy(model: MotionSegModel, dataset: Sequence[TrainExample],
                      max_tracks: int = 256, threshold: float = 0.5) -> float:
    """Track-level accuracy pooled over scenes (deterministic subset of at most ``max_tracks``)."""
    correct = total = 0
    for ex in dataset:
        idx = _eval_subset(ex, max_tracks)
        probs = model.predict(ex.tracks.select(idx), ex.semantic[idx])
        correct += int(((probs > threshold) == ex.labels[idx]).sum())
        total += idx.size
    return correct / total if total else float("nan")


# ------------------------------------------------------------------ loop

@dataclass
class TrainResult:
    rows: list[dict] = field(default_factory=list)
    val_acc: float = float("nan")
    step: int = 0
    seconds: float = 0.0


def _opt_arrays(state: AdamState, epoch: int) -> dict[str, np.ndarray]:
    out = {"opt.step": np.array([float(state.step)]), "train.epoch": np.array([float(epoch)])}
    for k in state.m:
        out[f"opt.m.{k}"] = state.m[k]
        out[f"opt.v.{k}"] = state.v[k]
    return out


def _restore_opt(arrays: dict[str, np.ndarray]) -> tuple[AdamState, int]:
    state = AdamState(int(arrays.get("opt.step", [0])[0]))
    for k, v in arrays.items():
        if k.startswith("opt.m."):
            state.m[k[6:]] = v.copy()
        elif k.startswith("opt.v."):
            state.v[k[6:]] = v.copy()
    return state, int(arrays.get("train.epoch", [0])[0])


def train(model: MotionSegModel, dataset: Sequence[TrainExample], cfg: TrainConfig,
          metrics_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          resume: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Run ``epochs`` x ``steps_per_epoch`` Adam updates, one scene batch per step.

    Each step draws from an rng keyed on (seed, global step), so a resumed
    run replays exactly the batches an uninterrupted run would have seen.
    """
    train_set, val_set = split_dataset(dataset, cfg)
    steps = cfg.steps_per_epoch or len(train_set)
    state, start_epoch = (_restore_opt(resume) if resume else (AdamState(), 0))
    result = TrainResult(step=state.step)
    writer = None
    fh = None
    if metrics_path is not None:
        mp = Path(metrics_path)
        new = resume is None or not mp.exists()
        fh = mp.open("w" if new else "a", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(["epoch", "step", "loss", "val_acc"])
    t0 = time.perf_counter()
    try:
        for epoch in range(start_epoch, cfg.epochs):
            for k in range(steps):
                rng = np.random.default_rng([cfg.seed, 23, state.step])
                loss_val = _train_step(model, train_set, cfg, rng, state)
                row = {"epoch": epoch + 1, "step": state.step, "loss": loss_val, "val_acc": ""}
                result.rows.append(row)
                if writer is not None and k < steps - 1:
                    writer.writerow([row["epoch"], row["step"], f"{loss_val:.6f}", ""])
            acc = evaluate_accuracy(model, val_set, cfg.val_max_tracks) if val_set else float("nan")
            result.rows[-1]["val_acc"] = acc
            result.val_acc = acc
            if writer is not None:
                writer.writerow([epoch + 1, state.step, f"{result.rows[-1]['loss']:.6f}", f"{acc:.6f}"])
                fh.flush()
            log.info("epoch %d step %d loss %.4f val_acc %.4f", epoch + 1, state.step,
                     result.rows[-1]["loss"], acc)
            if checkpoint_path is not None:
                model.save(checkpoint_path, _opt_arrays(state, epoch + 1))
    finally:
        if fh is not None:
            fh.close()
    result.step = state.step
    result.seconds = time.perf_counter() - t0
    return result


def _train_step(model: MotionSegModel, train_set, cfg: TrainConfig, rng, state: AdamState) -> float:
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    for _ in range(cfg.batch_scenes):
        tracks, sem, labels = sample_batch(train_set, cfg, rng)
        feats, valid, S = model.inputs(tracks, sem)
        probs, featured = model.forward(feats, valid, S)
        loss = weighted_bce(probs, labels.labels, featured.has_valid)
        if not np.isfinite(loss.data):
            raise TrainingDiverged(f"non-finite loss at step {state.step + 1}")
        loss.backward()
        total += float(loss.data)
        for k, p in model.params.items():
            if p.grad is not None:
                g = p.grad / cfg.batch_scenes
                grads[k] = grads[k] + g if k in grads else g
            p.zero_grad()
    try:
        tn.adam_step(model.params, grads, state, lr=cfg.lr, wd=cfg.weight_decay)
    except NonFiniteError as exc:
        raise TrainingDiverged(f"step {state.step + 1}: {exc}") from exc
    return total / cfg.batch_scenes
