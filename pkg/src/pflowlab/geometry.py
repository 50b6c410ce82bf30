"""Box arithmetic and set-level Chamfer-IoU metrics on normalized coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned box in normalized image coordinates, strictly positive area."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        x1, y1, x2, y2 = self.x1, self.y1, self.x2, self.y2
        if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
            raise GeometryError(f"non-finite coordinate in {self.as_tuple()}")
        if not (0.0 <= x1 < x2 <= 1.0):
            raise GeometryError(f"need 0 <= x1 < x2 <= 1, got x1={x1}, x2={x2}")
        if not (0.0 <= y1 < y2 <= 1.0):
            raise GeometryError(f"need 0 <= y1 < y2 <= 1, got y1={y1}, y2={y2}")

    @classmethod
    def of(cls, coords: Sequence[float]) -> "RoiBox":
        if len(coords) != 4:
            raise GeometryError(f"expected 4 coordinates, got {len(coords)}")
        return cls(*(float(c) for c in coords))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


RoiSet = Sequence[RoiBox]


def iou(a: RoiBox, b: RoiBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    if a == b:
        return 1.0
    return inter / (a.area + b.area - inter)


def _nonempty(boxes: Iterable[RoiBox], name: str) -> list[RoiBox]:
    boxes = list(boxes)
    if not boxes:
        raise GeometryError(f"Chamfer-IoU undefined for empty set {name}")
    return boxes


def directed_chamfer_iou(A: RoiSet, B: RoiSet) -> float:
    """Mean over ``a`` in A of the best IoU match in B (multiset average)."""
    A = _nonempty(A, "A")
    B = _nonempty(B, "B")
    return sum(max(iou(a, b) for b in B) for a in A) / len(A)


def chamfer_iou_distance(A: RoiSet, B: RoiSet) -> float:
    A = _nonempty(A, "A")
    B = _nonempty(B, "B")
    return 1.0 - 0.5 * (directed_chamfer_iou(A, B) + directed_chamfer_iou(B, A))


def in_vicinity(prefix_rois: RoiSet, expert: RoiSet, eps: float) -> bool:
    if not 0.0 <= eps <= 1.0:
        raise GeometryError(f"eps must lie in [0, 1], got {eps}")
    return chamfer_iou_distance(prefix_rois, expert) <= eps


def shaping_weight(prefix_rois: RoiSet, expert: RoiSet, eps: float, lam: float) -> float:
    """Vicinal shaping factor: 1 inside the eps-vicinity of ``expert``, exp(-lam) outside.

    An empty prefix (the bare planning state) always gets weight 1.
    """
    if lam < 0:
        raise GeometryError(f"lambda must be >= 0, got {lam}")
    if len(prefix_rois) == 0 or in_vicinity(prefix_rois, expert, eps):
        return 1.0
    return math.exp(-lam)


def log_shaping_weight(prefix_rois: RoiSet, expert: RoiSet, eps: float, lam: float) -> float:
    if len(prefix_rois) == 0 or in_vicinity(prefix_rois, expert, eps):
        return 0.0
    return -float(lam)
