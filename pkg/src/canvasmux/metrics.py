"""Evaluation metrics: mAP@0.5, character error rate, packing statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

from .geometry import BBox, iou
from .packer import CanvasLayout
from .setcover import TileChoice

# Detection record: (frame_key, class_label, bbox, confidence)
DetRecord = tuple[Hashable, str, BBox, float]
# Ground-truth record: (frame_key, class_label, bbox)
GTRecord = tuple[Hashable, str, BBox]


def average_precision(
    dets: Sequence[tuple[Hashable, BBox, float]],
    gts: Sequence[tuple[Hashable, BBox]],
    iou_threshold: float = 0.5,
) -> float:
    """Single-class AP with all-point (precision envelope) interpolation.

    Detections are sorted by confidence (ties by input order) and matched
    greedily to the highest-IoU unmatched ground truth in the same frame.
    """
    n_gt = len(gts)
    if n_gt == 0:
        return 0.0
    gt_by_frame: dict[Hashable, list[BBox]] = {}
    matched: dict[Hashable, list[bool]] = {}
    for key, box in gts:
        gt_by_frame.setdefault(key, []).append(box)
        matched.setdefault(key, []).append(False)

    order = sorted(range(len(dets)), key=lambda i: (-dets[i][2], i))
    tp = []
    for i in order:
        key, box, _conf = dets[i]
        best_iou = 0.0
        best_j = -1
        for j, gbox in enumerate(gt_by_frame.get(key, [])):
            if matched[key][j]:
                continue
            v = iou(box, gbox)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[key][best_j] = True
            tp.append(1)
        else:
            tp.append(0)

    cum_tp = 0
    recalls: list[float] = []
    precisions: list[float] = []
    for rank, hit in enumerate(tp, start=1):
        cum_tp += hit
        recalls.append(cum_tp / n_gt)
        precisions.append(cum_tp / rank)
    # Precision envelope: integrate max precision at recall >= r.
    suffix_max = list(precisions)
    for i in range(len(suffix_max) - 2, -1, -1):
        suffix_max[i] = max(suffix_max[i], suffix_max[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for recall, best_p in zip(recalls, suffix_max):
        if recall <= prev_recall:
            continue
        ap += (recall - prev_recall) * best_p
        prev_recall = recall
    return ap


def map50(
    detections: Sequence[DetRecord], ground_truth: Sequence[GTRecord]
) -> Optional[float]:
    """Mean AP at IoU 0.5 over the classes present in the ground truth.

    Returns None when there is no ground truth at all (undefined metric).
    """
    classes = sorted({g[1] for g in ground_truth})
    if not classes:
        return None
    aps = []
    for cls in classes:
        dets = [(d[0], d[2], d[3]) for d in detections if d[1] == cls]
        gts = [(g[0], g[2]) for g in ground_truth if g[1] == cls]
        aps.append(average_precision(dets, gts))
    return sum(aps) / len(aps)


def levenshtein(a: str, b: str) -> int:
    """Classic DP edit distance (insert / delete / substitute)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(predicted: str, truth: str) -> float:
    """Character error rate: edit distance normalized by truth length."""
    if not truth:
        raise ValueError("CER is undefined for empty ground truth")
    return levenshtein(predicted, truth) / len(truth)


@dataclass(frozen=True)
class PackingStats:
    utilization: float
    wasted_px: float
    tiles: int
    relaxations: int
    dropped_dets: int


def packing_stats(
    layout: CanvasLayout,
    chosen: Sequence[TileChoice] = (),
    relaxations: int = 0,
    dropped_dets: int = 0,
) -> PackingStats:
    """Canvas occupancy plus carried-through pipeline counters.

    Wasted pixels are the placed tile pixels not covered by any assigned
    mask, i.e. each choice's source-space waste scaled into canvas space.
    """
    canvas_area = float(layout.canvas_side) ** 2
    placed_area = sum(float(p.w * p.h) for p in layout.placements)
    waste_by_ref = {
        (c.tile.camera_id, c.tile.tile_id): c.cost for c in chosen
    }
    wasted = 0.0
    for p in layout.placements:
        src_waste = waste_by_ref.get(p.ref)
        if src_waste is None:
            wasted += float(p.w * p.h)
        else:
            wasted += src_waste * p.sx * p.sy
    return PackingStats(
        utilization=placed_area / canvas_area if canvas_area else 0.0,
        wasted_px=wasted,
        tiles=len(layout.placements),
        relaxations=relaxations,
        dropped_dets=dropped_dets,
    )
