"""Rectangle algebra, NMS, similarity transforms and a quadtree index.

Everything here is deliberately immutable and allocation-light: these
primitives sit on the per-frame hot path and are shared read-only across
camera workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in source-frame pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def intersects(self, other: "BBox") -> bool:
        """Closed-interval test: boundary contact counts as intersecting."""
        return (
            self.x_min <= other.x_max
            and other.x_min <= self.x_max
            and self.y_min <= other.y_max
            and other.y_min <= self.y_max
        )

    def intersection(self, other: "BBox") -> Optional["BBox"]:
        """Overlap rectangle, or None when the boxes are disjoint.

        Boundary contact yields a degenerate (zero-area) box, not None.
        """
        x0 = max(self.x_min, other.x_min)
        y0 = max(self.y_min, other.y_min)
        x1 = min(self.x_max, other.x_max)
        y1 = min(self.y_max, other.y_max)
        if x0 > x1 or y0 > y1:
            return None
        return BBox(x0, y0, x1, y1)

    def union_box(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def clip_to(self, other: "BBox") -> "BBox":
        """Clamp this box into ``other`` (degenerate result allowed)."""
        return BBox(
            min(max(self.x_min, other.x_min), other.x_max),
            min(max(self.y_min, other.y_min), other.y_max),
            min(max(self.x_max, other.x_min), other.x_max),
            min(max(self.y_max, other.y_min), other.y_max),
        )

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; 0 for zero-area unions."""
    inter = a.intersection(b)
    if inter is None:
        return 0.0
    inter_area = inter.area
    union = a.area + b.area - inter_area
    if union <= 0.0:
        return 0.0
    return inter_area / union


def rect_gap(a: BBox, b: BBox) -> float:
    """L-infinity distance between two rectangles (0 when they touch/overlap)."""
    dx = max(a.x_min - b.x_max, b.x_min - a.x_max, 0.0)
    dy = max(a.y_min - b.y_max, b.y_min - a.y_max, 0.0)
    return max(dx, dy)


def nms_indices(boxes: Sequence[tuple[BBox, float]], iou_threshold: float) -> list[int]:
    """Indices surviving greedy NMS, in ascending input order.

    Survivors have pairwise IoU <= ``iou_threshold``. Confidence ties are
    broken by input order so the result is deterministic.
    """
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i][1], i))
    kept: list[int] = []
    for i in order:
        box_i = boxes[i][0]
        if all(iou(box_i, boxes[j][0]) <= iou_threshold for j in kept):
            kept.append(i)
    kept.sort()
    return kept


def nms(
    boxes: Sequence[tuple[BBox, float]], iou_threshold: float
) -> list[tuple[BBox, float]]:
    """Greedy non-maximum suppression by descending confidence."""
    return [boxes[i] for i in nms_indices(boxes, iou_threshold)]


@dataclass(frozen=True)
class Affine2D:
    """4-DOF similarity transform: uniform scale, rotation, translation.

    Maps a point p to ``scale * R(rotation) @ p + (tx, ty)``.
    """

    scale: float = 1.0
    rotation: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self) -> None:
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    @classmethod
    def identity(cls) -> "Affine2D":
        return cls()

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Affine2D":
        return cls(1.0, 0.0, tx, ty)

    @property
    def is_identity(self) -> bool:
        return (
            self.scale == 1.0 and self.rotation == 0.0 and self.tx == 0.0 and self.ty == 0.0
        )

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        c = math.cos(self.rotation) * self.scale
        s = math.sin(self.rotation) * self.scale
        return (c * x - s * y + self.tx, s * x + c * y + self.ty)

    def inverse(self) -> "Affine2D":
        inv_scale = 1.0 / self.scale
        inv_rot = -self.rotation
        c = math.cos(inv_rot) * inv_scale
        s = math.sin(inv_rot) * inv_scale
        return Affine2D(inv_scale, inv_rot, -(c * self.tx - s * self.ty), -(s * self.tx + c * self.ty))

    def compose(self, inner: "Affine2D") -> "Affine2D":
        """Transform applying ``inner`` first, then ``self``."""
        tx, ty = self.apply_point(inner.tx, inner.ty)
        return Affine2D(self.scale * inner.scale, self.rotation + inner.rotation, tx, ty)


def apply_affine(t: Affine2D, b: BBox) -> BBox:
    """Axis-aligned bounding box of the transformed corners."""
    corners = [
        t.apply_point(b.x_min, b.y_min),
        t.apply_point(b.x_max, b.y_min),
        t.apply_point(b.x_min, b.y_max),
        t.apply_point(b.x_max, b.y_max),
    ]
    xs = [p[0] for p in corners]
    ys = [p[1] for p in corners]
    return BBox(min(xs), min(ys), max(xs), max(ys))


class QuadTree:
    """Quadtree over (BBox, id) entries supporting intersection queries.

    Entries that straddle a split line are kept at the internal node, so
    every entry lives at exactly one node and queries are exact (results
    always equal a linear scan). Boundary contact counts as a hit.
    """

    __slots__ = ("region", "capacity", "max_depth", "_root", "_count")

    def __init__(
        self,
        entries: Iterable[tuple[BBox, int]],
        region: Optional[BBox] = None,
        capacity: int = 8,
        max_depth: int = 8,
    ) -> None:
        items = list(entries)
        if region is None:
            if not items:
                region = BBox(0.0, 0.0, 0.0, 0.0)
            else:
                region = items[0][0]
                for box, _ in items[1:]:
                    region = region.union_box(box)
        self.region = region
        self.capacity = capacity
        self.max_depth = max_depth
        self._root = _Node(region, 0)
        self._count = len(items)
        for box, ident in items:
            self._root.insert(box, ident, capacity, max_depth)

    def __len__(self) -> int:
        return self._count

    def query(self, probe: BBox) -> list[int]:
        """Ids of all entries whose boxes intersect ``probe`` (sorted)."""
        out: list[int] = []
        self._root.query(probe, out)
        out.sort()
        return out


class _Node:
    __slots__ = ("region", "depth", "entries", "children")

    def __init__(self, region: BBox, depth: int) -> None:
        self.region = region
        self.depth = depth
        self.entries: list[tuple[BBox, int]] = []
        self.children: Optional[list["_Node"]] = None

    def insert(self, box: BBox, ident: int, capacity: int, max_depth: int) -> None:
        if self.children is None:
            self.entries.append((box, ident))
            if len(self.entries) > capacity and self.depth < max_depth:
                self._split(capacity, max_depth)
            return
        child = self._child_containing(box)
        if child is None:
            self.entries.append((box, ident))
        else:
            child.insert(box, ident, capacity, max_depth)

    def _split(self, capacity: int, max_depth: int) -> None:
        r = self.region
        cx = 0.5 * (r.x_min + r.x_max)
        cy = 0.5 * (r.y_min + r.y_max)
        self.children = [
            _Node(BBox(r.x_min, r.y_min, cx, cy), self.depth + 1),
            _Node(BBox(cx, r.y_min, r.x_max, cy), self.depth + 1),
            _Node(BBox(r.x_min, cy, cx, r.y_max), self.depth + 1),
            _Node(BBox(cx, cy, r.x_max, r.y_max), self.depth + 1),
        ]
        staying: list[tuple[BBox, int]] = []
        for box, ident in self.entries:
            child = self._child_containing(box)
            if child is None:
                staying.append((box, ident))
            else:
                child.insert(box, ident, capacity, max_depth)
        self.entries = staying

    def _child_containing(self, box: BBox) -> Optional["_Node"]:
        assert self.children is not None
        for child in self.children:
            cr = child.region
            if (
                box.x_min >= cr.x_min
                and box.x_max <= cr.x_max
                and box.y_min >= cr.y_min
                and box.y_max <= cr.y_max
            ):
                return child
        return None

    def query(self, probe: BBox, out: list[int]) -> None:
        if not self.region.intersects(probe):
            return
        for box, ident in self.entries:
            if box.intersects(probe):
                out.append(ident)
        if self.children is not None:
            for child in self.children:
                child.query(probe, out)
