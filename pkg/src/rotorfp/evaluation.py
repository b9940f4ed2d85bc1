"""Detection scoring at an IoU threshold and per-window latency statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from rotorfp.errors import ContractViolation
from rotorfp.segmentation import Box


@dataclass(frozen=True)
class MatchReport:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def __add__(self, other: "MatchReport") -> "MatchReport":
        return MatchReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {**asdict(self), "precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    iqr_ms: float
    p95_ms: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def iou(a: Box, b: Box) -> float:
    """Intersection over union with inclusive pixel bounds."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min) + 1
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min) + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def greedy_pairs(preds: Sequence[Box], gts: Sequence[Box], iou_thresh: float = 0.5):
    """Matched ``(pred_index, gt_index, iou)`` triples.

    Candidate pairs at or above the threshold are taken in descending IoU,
    ties broken by pred index then gt index; each box is used at most once.
    """
    cands = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = iou(p, g)
            if v >= iou_thresh:
                cands.append((-v, i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for neg, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -neg))
    return pairs


def match_and_score(preds: Sequence[Box], gts: Sequence[Box],
                    iou_thresh: float = 0.5) -> MatchReport:
    """Score one window's predictions against its ground truth."""
    tp = len(greedy_pairs(preds, gts, iou_thresh))
    return MatchReport(tp, len(preds) - tp, len(gts) - tp)


def score_frames(preds: Mapping[int, Sequence[Box]], gts: Mapping[int, Sequence[Box]],
                 iou_thresh: float = 0.5) -> MatchReport:
    """Micro-averaged score: per-window matching, counts summed over windows.

    A window present on only one side counts as empty on the other.
    """
    total = MatchReport(0, 0, 0)
    for w in sorted(set(preds) | set(gts)):
        total += match_and_score(preds.get(w, ()), gts.get(w, ()), iou_thresh)
    return total


def latency_summary(samples_ms: Sequence[float]) -> LatencyStats:
    """Median, interquartile range and 95th percentile.

    Quantiles interpolate linearly between order statistics (``numpy``'s
    default ``linear`` method), so ``[1, 2, 3, 4, 5]`` gives median 3,
    IQR 2 and p95 4.8.
    """
    x = np.asarray(samples_ms, dtype=np.float64)
    if x.size == 0:
        raise ContractViolation("latency_summary needs at least one sample")
    q1, med, q3, p95 = np.percentile(x, [25, 50, 75, 95], method="linear")
    return LatencyStats(float(med), float(q3 - q1), float(p95), int(x.size))
