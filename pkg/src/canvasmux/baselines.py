"""Whole-frame baseline layouts: sequential letterbox and uniform grids."""

from __future__ import annotations

from .geometry import BBox
from .packer import CanvasLayout, Placement

FULL_FRAME_TILE_ID = -1


def _even_floor(v: float) -> int:
    return max(2, int(v) // 2 * 2)


def _letterbox_placement(
    camera_id: int,
    frame_dims: tuple[int, int],
    cell: tuple[float, float, float, float],  # x0, y0, w, h
) -> Placement:
    w, h = frame_dims
    cx, cy, cw, ch = cell
    scale = min(cw / w, ch / h)
    pw = _even_floor(min(w * scale, cw))
    ph = _even_floor(min(h * scale, ch))
    x = int(round(cx + (cw - pw) / 2.0))
    y = int(round(cy + (ch - ph) / 2.0))
    return Placement(
        ref=(camera_id, FULL_FRAME_TILE_ID),
        src_bbox=BBox(0, 0, w, h),
        scale=scale,
        x=x,
        y=y,
        w=pw,
        h=ph,
    )


def fcfs_layout(frame_dims: tuple[int, int], canvas: int, camera_id: int = 0) -> CanvasLayout:
    """One whole frame, aspect-preserving letterbox, centered on the canvas."""
    placement = _letterbox_placement(camera_id, frame_dims, (0.0, 0.0, float(canvas), float(canvas)))
    layout = CanvasLayout(canvas_side=canvas, placements=[placement])
    layout.validate()
    return layout


def _arrangements(m: int) -> list[tuple[int, int]]:
    """Candidate (rows, cols) shapes: every covering grid plus the stacks."""
    shapes = []
    for r in range(1, m + 1):
        for c in range(1, m + 1):
            if r * c >= m:
                shapes.append((r, c))
    return shapes


def uniform_layout(
    m: int,
    frame_dims: tuple[int, int],
    canvas: int,
    camera_ids: tuple[int, ...] | None = None,
) -> CanvasLayout:
    """Pack ``m`` whole frames into the grid shape maximizing their scale.

    All covering row/column shapes are evaluated along with pure
    horizontal (1 x m) and vertical (m x 1) stacking; ties prefer proper
    grids, then horizontal stacking.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if camera_ids is None:
        camera_ids = tuple(range(m))
    if len(camera_ids) != m:
        raise ValueError("camera_ids must have length m")
    w, h = frame_dims

    def shape_rank(shape: tuple[int, int]) -> int:
        r, c = shape
        if r > 1 and c > 1:
            return 0  # grid
        if r == 1:
            return 1  # horizontal stack
        return 2  # vertical stack

    best_shape = None
    best_key = None
    for shape in _arrangements(m):
        r, c = shape
        scale = min((canvas / c) / w, (canvas / r) / h)
        key = (-scale, shape_rank(shape), r, c)
        if best_key is None or key < best_key:
            best_key = key
            best_shape = shape
    assert best_shape is not None
    rows, cols = best_shape
    cell_w = canvas / cols
    cell_h = canvas / rows
    placements = []
    for i, camera_id in enumerate(camera_ids):
        row, col = divmod(i, cols)
        placements.append(
            _letterbox_placement(
                camera_id, frame_dims, (col * cell_w, row * cell_h, cell_w, cell_h)
            )
        )
    layout = CanvasLayout(canvas_side=canvas, placements=placements)
    layout.validate()
    return layout
