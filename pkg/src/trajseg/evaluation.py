"""Region (J) and boundary (F) measures, MOS and fine-grained evaluation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .masks import MaskVideo, dilate

__all__ = ["region_j", "boundary_f", "inner_boundary", "default_tolerance", "SequenceScore",
           "ObjectScore", "EvalReport", "eval_mos", "eval_fine_grained", "assignment_scores"]


def region_j(pred: np.ndarray, gt: np.ndarray) -> float:
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def inner_boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask (image border counts as outside)."""
    m = np.asarray(mask, dtype=bool)
    pad = np.pad(m, 1, constant_values=False)
    interior = pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:]
    return m & ~interior


def default_tolerance(shape: tuple[int, int]) -> int:
    return max(1, math.ceil(0.008 * math.hypot(*shape)))


def boundary_f(pred: np.ndarray, gt: np.ndarray, tol_radius: int | None = None) -> float:
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(gt, dtype=bool)
    r = default_tolerance(p.shape) if tol_radius is None else int(tol_radius)
    bp, bg = inner_boundary(p), inner_boundary(g)
    n_p, n_g = int(bp.sum()), int(bg.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision = (bp & dilate(bg, r)).sum() / n_p
    recall = (bg & dilate(bp, r)).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass(frozen=True)
class SequenceScore:
    name: str
    J: float
    F: float

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2.0


@dataclass(frozen=True)
class ObjectScore:
    sequence: str
    gt_id: int
    pred_id: int | None
    J: float
    F: float

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2.0


@dataclass
class EvalReport:
    mode: str
    sequences: list[SequenceScore] = field(default_factory=list)
    objects: list[ObjectScore] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def J(self) -> float:
        return float(np.mean([s.J for s in self.sequences])) if self.sequences else 0.0

    @property
    def F(self) -> float:
        return float(np.mean([s.F for s in self.sequences])) if self.sequences else 0.0

    @property
    def JF(self) -> float:
        return (self.J + self.F) / 2.0

    @classmethod
    def combine(cls, reports: list["EvalReport"]) -> "EvalReport":
        if not reports:
            raise ValueError("nothing to combine")
        modes = {r.mode for r in reports}
        if len(modes) != 1:
            raise ValueError(f"cannot combine modes {sorted(modes)}")
        out = cls(reports[0].mode)
        for r in reports:
            out.sequences.extend(r.sequences)
            out.objects.extend(r.objects)
            out.runtime_s += r.runtime_s
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mode", "sequence", "J&F", "J", "F"])
        for s in self.sequences:
            w.writerow([self.mode, s.name, f"{s.JF:.6f}", f"{s.J:.6f}", f"{s.F:.6f}"])
        w.writerow([self.mode, "mean", f"{self.JF:.6f}", f"{self.J:.6f}", f"{self.F:.6f}"])
        return buf.getvalue()

    def objects_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sequence", "gt_id", "pred_id", "J&F", "J", "F"])
        for o in self.objects:
            w.writerow([o.sequence, o.gt_id, "" if o.pred_id is None else o.pred_id,
                        f"{o.JF:.6f}", f"{o.J:.6f}", f"{o.F:.6f}"])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"mode": self.mode, "sequences": len(self.sequences),
                "J&F": round(self.JF, 6), "J": round(self.J, 6), "F": round(self.F, 6)}

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{self.mode}.csv").write_text(self.to_csv())
        if self.objects:
            (d / f"{self.mode}_objects.csv").write_text(self.objects_csv())


def _video_scores(pred: np.ndarray, gt: np.ndarray, tol: int | None) -> tuple[float, float]:
    """Frame-averaged J and F for one (T, H, W) pair."""
    js = [region_j(p, g) for p, g in zip(pred, gt)]
    fs = [boundary_f(p, g, tol) for p, g in zip(pred, gt)]
    return float(np.mean(js)), float(np.mean(fs))


def _check(pred: MaskVideo, gt: MaskVideo) -> None:
    if pred.frame_count != gt.frame_count or pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.frame_count}x{pred.shape} does not match "
                         f"ground truth {gt.frame_count}x{gt.shape}")


def eval_mos(pred: MaskVideo, gt: MaskVideo, name: str = "seq",
             tol_radius: int | None = None) -> EvalReport:
    """All predicted objects vs. all dynamic GT objects, each merged into one foreground."""
    _check(pred, gt)
    j, f = _video_scores(pred.union(), gt.dynamic_union(), tol_radius)
    return EvalReport("mos", [SequenceScore(name, j, f)])


def assignment_scores(pred: MaskVideo, gt: MaskVideo,
                      tol_radius: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(J, F) matrices of shape (n_gt, n_pred), each frame-averaged."""
    gt = gt.dynamic_only()
    J = np.zeros((gt.object_count, pred.object_count))
    F = np.zeros_like(J)
    for g in range(gt.object_count):
        for p in range(pred.object_count):
            J[g, p], F[g, p] = _video_scores(pred.masks[:, p], gt.masks[:, g], tol_radius)
    return J, F


def eval_fine_grained(pred: MaskVideo, gt: MaskVideo, name: str = "seq",
                      tol_radius: int | None = None) -> EvalReport:
    """Per-object scores under the one-to-one assignment maximizing mean J&F.

    Unmatched ground-truth objects score zero; surplus predictions are ignored.
    """
    _check(pred, gt)
    gt = gt.dynamic_only()
    report = EvalReport("fine")
    if gt.object_count == 0:
        score = 1.0 if not pred.union().any() else 0.0
        report.sequences.append(SequenceScore(name, score, score))
        return report
    J, F = assignment_scores(pred, gt, tol_radius)
    match: dict[int, int] = {}
    if pred.object_count:
        rows, cols = kernels.linear_sum_assignment(-(J + F) / 2.0)
        match = {int(r): int(c) for r, c in zip(rows, cols)}
    for g, gid in enumerate(gt.ids):
        p = match.get(g)
        if p is None:
            report.objects.append(ObjectScore(name, gid, None, 0.0, 0.0))
        else:
            report.objects.append(ObjectScore(name, gid, pred.ids[p], J[g, p], F[g, p]))
    report.sequences.append(SequenceScore(
        name, float(np.mean([o.J for o in report.objects])),
        float(np.mean([o.F for o in report.objects]))))
    return report
