"""Canvas composition, detection back-translation and deduplication."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox, nms_indices
from .motion import GrayFrame
from .packer import CanvasLayout, Placement

GUTTER_VALUE = 114  # letterbox gray for canvas pixels no tile covers
DEDUPE_IOU = 0.45


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    class_label: str
    confidence: float
    camera_id: Optional[int] = None
    render_scale: float = 1.0  # vertical scale of the bin the box came from

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


@dataclass
class CanvasFrame:
    """A canvas raster plus the tile->bin mapping that built it.

    ``raster`` may be None for geometry-only passes (the mock detector
    works off the mapping, so stabilization skips composition).
    """

    layout: CanvasLayout
    raster: Optional[GrayFrame] = None

    @property
    def canvas_side(self) -> int:
        return self.layout.canvas_side


def resize_bilinear(src: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Separable bilinear resample with half-pixel-center alignment.

    Identity when output dims equal input dims, which keeps scale-1 bins
    lossless on the canvas.
    """
    in_h, in_w = src.shape
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output dims must be positive")
    if (in_h, in_w) == (out_h, out_w):
        return src.copy()

    def axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        i1 = np.clip(i0 + 1, 0, n_in - 1)  # clamp before i0 so edges replicate
        i0 = np.clip(i0, 0, n_in - 1)
        return i0, i1, frac

    y0, y1, fy = axis_coords(in_h, out_h)
    x0, x1, fx = axis_coords(in_w, out_w)
    rows = src.astype(np.float32)
    tmp = rows[y0] * (1.0 - fy)[:, None] + rows[y1] * fy[:, None]
    out = tmp[:, x0] * (1.0 - fx)[None, :] + tmp[:, x1] * fx[None, :]
    return np.rint(out).astype(src.dtype)


def compose(layout: CanvasLayout, sources: dict[int, GrayFrame]) -> CanvasFrame:
    """Render the canvas: crop, resample and blit every placed tile."""
    side = layout.canvas_side
    raster = np.full((side, side), GUTTER_VALUE, dtype=np.uint8)
    for p in layout.placements:
        camera_id = p.ref[0]
        if camera_id not in sources:
            raise KeyError(f"no source frame for camera {camera_id}")
        frame = sources[camera_id]
        sb = p.src_bbox
        crop = frame[int(round(sb.y_min)) : int(round(sb.y_max)), int(round(sb.x_min)) : int(round(sb.x_max))]
        if crop.size == 0:
            continue
        raster[p.y : p.y + p.h, p.x : p.x + p.w] = resize_bilinear(crop, p.w, p.h)
    return CanvasFrame(layout=layout, raster=raster)


def to_canvas_box(p: Placement, box: BBox) -> BBox:
    """Map a source-frame box into this placement's canvas bin."""
    sx, sy = p.sx, p.sy
    return BBox(
        p.x + (box.x_min - p.src_bbox.x_min) * sx,
        p.y + (box.y_min - p.src_bbox.y_min) * sy,
        p.x + (box.x_max - p.src_bbox.x_min) * sx,
        p.y + (box.y_max - p.src_bbox.y_min) * sy,
    )


def to_source_box(p: Placement, box: BBox) -> BBox:
    """Inverse of :func:`to_canvas_box`, clipped to the source crop."""
    sx, sy = p.sx, p.sy
    raw = BBox(
        p.src_bbox.x_min + (box.x_min - p.x) / sx,
        p.src_bbox.y_min + (box.y_min - p.y) / sy,
        p.src_bbox.x_min + (box.x_max - p.x) / sx,
        p.src_bbox.y_min + (box.y_max - p.y) / sy,
    )
    return raw.clip_to(p.src_bbox)


def translate_back(
    canvas_dets: Sequence[Detection], frame: CanvasFrame
) -> tuple[dict[int, list[Detection]], int]:
    """Map canvas detections into per-camera source coordinates.

    A detection belongs to the bin containing its center; detections whose
    center falls in the gutter are dropped and counted.
    """
    per_camera: dict[int, list[Detection]] = {}
    dropped = 0
    placements = frame.layout.placements
    for det in canvas_dets:
        cx, cy = det.bbox.center
        owner = None
        for p in placements:
            if p.x <= cx < p.x + p.w and p.y <= cy < p.y + p.h:
                owner = p
                break
        if owner is None:
            dropped += 1
            continue
        mapped = replace(
            det,
            bbox=to_source_box(owner, det.bbox),
            camera_id=owner.ref[0],
            render_scale=owner.sy,
        )
        per_camera.setdefault(owner.ref[0], []).append(mapped)
    return per_camera, dropped


def dedupe(
    per_camera: dict[int, list[Detection]], iou_threshold: float = DEDUPE_IOU
) -> dict[int, list[Detection]]:
    """Per-camera, per-class NMS to remove objects seen via multiple tiles."""
    out: dict[int, list[Detection]] = {}
    for camera_id, dets in per_camera.items():
        by_class: dict[str, list[Detection]] = {}
        for d in dets:
            by_class.setdefault(d.class_label, []).append(d)
        survivors: list[Detection] = []
        for _label, group in sorted(by_class.items()):
            kept = nms_indices([(d.bbox, d.confidence) for d in group], iou_threshold)
            survivors.extend(group[i] for i in kept)
        out[camera_id] = survivors
    return out
