"""Rotor mask to detection boxes: 8-connected labelling, area filter, centroid merge."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from rotorfp.errors import ValidationError

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, order=True)
class Box:
    """Axis-aligned box with inclusive integer pixel bounds."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def contains(self, other: "Box") -> bool:
        return (self.x_min <= other.x_min and self.y_min <= other.y_min
                and self.x_max >= other.x_max and self.y_max >= other.y_max)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "y_min": self.y_min, "x_max": self.x_max, "y_max": self.y_max}


def enclosing(boxes: Iterable[Box]) -> Box:
    boxes = list(boxes)
    return Box(min(b.x_min for b in boxes), min(b.y_min for b in boxes),
               max(b.x_max for b in boxes), max(b.y_max for b in boxes))


def label_components(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labels (1..count, background 0), numbered in raster order."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ValidationError("mask must be 2-D (height, width)")
    labels, count = ndimage.label(mask, structure=_EIGHT)
    return labels, int(count)


def extract_boxes(labels: np.ndarray) -> list[Box]:
    """Tight bounding box of every label, in label order."""
    out = []
    for sl in ndimage.find_objects(labels):
        if sl is None:
            continue
        ys, xs = sl
        out.append(Box(xs.start, ys.start, xs.stop - 1, ys.stop - 1))
    return out


def filter_boxes(boxes: Sequence[Box], A_min: int) -> list[Box]:
    """Drop boxes whose area is below ``A_min``; area equal to ``A_min`` survives."""
    return [b for b in boxes if b.area >= A_min]


def _joins(a: Box, b: Box, alpha: float) -> bool:
    (ax, ay), (bx, by) = a.centroid, b.centroid
    scale = max(a.width, a.height, b.width, b.height)
    return math.hypot(ax - bx, ay - by) < alpha * scale


def merge_boxes(boxes: Sequence[Box], alpha: float) -> list[Box]:
    """Merge boxes whose centroids are closer than ``alpha`` times the largest side.

    Pairs satisfying the rule form a graph; each connected component is
    replaced by its enclosing box. Merged boxes have new centroids and sizes,
    so the step repeats until no pair joins. Output is sorted by
    ``(y_min, x_min)``.
    """
    current = list(boxes)
    while True:
        n = len(current)
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        joined = False
        for i in range(n):
            for j in range(i + 1, n):
                if _joins(current[i], current[j], alpha):
                    joined = True
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        parent[max(ri, rj)] = min(ri, rj)
        if not joined:
            break
        groups: dict[int, list[Box]] = {}
        for i, b in enumerate(current):
            groups.setdefault(find(i), []).append(b)
        current = [enclosing(g) for g in groups.values()]
    return sorted(current, key=lambda b: (b.y_min, b.x_min, b.y_max, b.x_max))


def segment(mask: np.ndarray, A_min: int, alpha: float) -> list[Box]:
    """Label, extract, filter, merge, in that order."""
    labels, _ = label_components(mask)
    return merge_boxes(filter_boxes(extract_boxes(labels), A_min), alpha)


def segment_pixels(xs: np.ndarray, ys: np.ndarray, A_min: int, alpha: float) -> list[Box]:
    """:func:`segment` of the mask whose true pixels are ``(xs, ys)``.

    Labels only the bounding crop of the pixels, which gives the same boxes
    as labelling the full sensor frame at a fraction of the cost.
    """
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    if xs.size == 0:
        return []
    x0, y0 = int(xs.min()), int(ys.min())
    crop = np.zeros((int(ys.max()) - y0 + 1, int(xs.max()) - x0 + 1), dtype=bool)
    crop[ys - y0, xs - x0] = True
    labels, _ = label_components(crop)
    boxes = [Box(b.x_min + x0, b.y_min + y0, b.x_max + x0, b.y_max + y0)
             for b in extract_boxes(labels)]
    return merge_boxes(filter_boxes(boxes, A_min), alpha)
