"""Accuracy and per-frame timing statistics.

Accuracy metric for the detection task: greedy IoU matching at IoU >= 0.5,
micro-averaged precision/recall/F1 over all scored frames. Timing: exact
moments of the per-frame execution time and a real-time feasibility flag
``mean + 3*std <= frame budget``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

IOU_THRESHOLD = 0.5
FEASIBILITY_SIGMAS = 3
SCORING_SCHEMA_VERSION = 1


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class TimingStats:
    count: int
    mean_ns: float
    std_ns: float
    min_ns: int
    max_ns: int
    p99_ns: int
    frame_budget_ns: float
    feasible: bool

    def to_dict(self) -> dict:
        return asdict(self)


def timing_stats(samples: Iterable[int], rate: float) -> TimingStats:
    """Timing summary of per-frame execution times in integer nanoseconds.

    Mean and population std come from one pass over exact integer sums, so
    there is no cancellation error regardless of magnitude. p99 is the
    nearest-rank percentile.
    """
    n = 0
    total = 0
    total_sq = 0
    lo = hi = None
    values = []
    for s in samples:
        s = int(s)
        n += 1
        total += s
        total_sq += s * s
        lo = s if lo is None or s < lo else lo
        hi = s if hi is None or s > hi else hi
        values.append(s)
    if n == 0:
        raise ScoringError("empty samples")
    if rate <= 0:
        raise ScoringError("rate must be positive")
    mean = Fraction(total, n)
    var = Fraction(n * total_sq - total * total, n * n)
    std = math.sqrt(var)
    values.sort()
    p99 = values[max(math.ceil(0.99 * n) - 1, 0)]
    budget = 1e9 / rate
    feasible = mean + FEASIBILITY_SIGMAS * Fraction(std) <= Fraction(budget)
    return TimingStats(
        count=n,
        mean_ns=float(mean),
        std_ns=std,
        min_ns=lo,
        max_ns=hi,
        p99_ns=p99,
        frame_budget_ns=budget,
        feasible=bool(feasible),
    )


# --------------------------------------------------------------------------
# detection accuracy


@dataclass(frozen=True)
class Box:
    """Axis-aligned (x, y, w, h) box in output pixels."""

    cls: int
    x: int
    y: int
    w: int
    h: int
    score: float = 1.0


def iou(a: Box, b: Box) -> float:
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


@dataclass
class _Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def prf(self) -> tuple[float, float, float]:
        precision = self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0
        recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return precision, recall, f1


@dataclass
class AccuracyScore:
    task: str
    metric: str
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    frames_scored: int
    unknown_frames: list[int] = field(default_factory=list)
    per_class: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scoring_schema"] = SCORING_SCHEMA_VERSION
        return d


def match_frame(predictions: Sequence[Box], truths: Sequence[Box],
                threshold: float = IOU_THRESHOLD) -> list[tuple[int, int]]:
    """Greedy matching; returns (prediction index, truth index) pairs.

    Predictions are visited by descending score (index ascending on ties);
    each takes the unmatched same-class truth with the highest IoU, lowest
    truth index on ties.
    """
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i].score, i))
    taken: set[int] = set()
    pairs = []
    for i in order:
        p = predictions[i]
        best, best_iou = None, threshold
        for j, t in enumerate(truths):
            if j in taken or t.cls != p.cls:
                continue
            v = iou(p, t)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            taken.add(best)
            pairs.append((i, best))
    return pairs


def project_boxes(boxes: Iterable[Box], geometry) -> list[Box]:
    """Map native-resolution boxes through a CropGeometry, dropping cropped-out ones."""
    out = []
    for b in boxes:
        mapped = geometry.map_box(b.x, b.y, b.w, b.h)
        if mapped is not None:
            out.append(Box(b.cls, *mapped, score=b.score))
    return out


def score_detections(results: Mapping[int, Sequence[Box]],
                     ground_truth: Mapping[int, Sequence[Box]],
                     geometry=None,
                     class_names: Mapping[int, str] | None = None,
                     task: str = "detection") -> AccuracyScore:
    """Score per-frame predictions against ground truth.

    ``ground_truth`` maps every delivered frame_id to its boxes: in native
    coordinates when ``geometry`` is given (they are projected here),
    otherwise already in output coordinates. Frames delivered but missing from
    ``results`` count as empty predictions; results for frame ids absent from
    ``ground_truth`` are all false positives and listed in ``unknown_frames``.
    """
    total = _Counts()
    by_class: dict[int, _Counts] = defaultdict(_Counts)
    unknown = sorted(set(results) - set(ground_truth))
    for fid in unknown:
        for p in results[fid]:
            total.fp += 1
            by_class[p.cls].fp += 1
    for fid, truths in ground_truth.items():
        if geometry is not None:
            truths = project_boxes(truths, geometry)
        preds = results.get(fid, ())
        pairs = match_frame(preds, truths)
        matched_p = {i for i, _ in pairs}
        matched_t = {j for _, j in pairs}
        for i, p in enumerate(preds):
            if i in matched_p:
                total.tp += 1
                by_class[p.cls].tp += 1
            else:
                total.fp += 1
                by_class[p.cls].fp += 1
        for j, t in enumerate(truths):
            if j not in matched_t:
                total.fn += 1
                by_class[t.cls].fn += 1
    precision, recall, f1 = total.prf()
    names = class_names or {}
    per_class = {}
    for cls in sorted(by_class):
        c = by_class[cls]
        cp, cr, cf = c.prf()
        per_class[names.get(cls, str(cls))] = {
            "class_id": cls, "f1": cf, "precision": cp, "recall": cr,
            "tp": c.tp, "fp": c.fp, "fn": c.fn,
        }
    return AccuracyScore(
        task=task,
        metric=f"f1@iou{IOU_THRESHOLD}",
        f1=f1,
        precision=precision,
        recall=recall,
        tp=total.tp,
        fp=total.fp,
        fn=total.fn,
        frames_scored=len(ground_truth),
        unknown_frames=unknown,
        per_class=per_class,
    )
