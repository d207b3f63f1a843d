"""Critical-region estimation: frame differencing, ego-motion, tracking.

A camera's critical regions for one frame are the union of motion boxes
from frame differencing and remembered boxes of tracks that temporal
differencing cannot see (stationary or recently lost objects).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import Affine2D, BBox, apply_affine

# Grayscale frames are plain (H, W) uint8 arrays throughout the package.
GrayFrame = np.ndarray

DEFAULT_DIFF_THRESHOLD = 25
DEFAULT_MIN_AREA = 64
DEFAULT_GATE = 50.0
DEFAULT_MOVE_THRESHOLD = 20.0

# Constant-velocity Kalman model on (x, y, vx, vy); unit frame step.
_KF_F = np.array(
    [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
)
_KF_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
_KF_Q = 0.01 * np.eye(4)
_KF_R = 1.0 * np.eye(2)
_KF_P0 = 10.0 * np.eye(4)


def _dilate3x3(mask: np.ndarray) -> np.ndarray:
    """Binary dilation with a full 3x3 kernel via shifted ORs (fast path)."""
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    col = out.copy()
    out[:, 1:] |= col[:, :-1]
    out[:, :-1] |= col[:, 1:]
    return out


def frame_diff_masks(
    prev: GrayFrame,
    cur: GrayFrame,
    threshold: int = DEFAULT_DIFF_THRESHOLD,
    min_area: int = DEFAULT_MIN_AREA,
) -> list[BBox]:
    """Bounding boxes of changed regions between two frames.

    Absolute difference is thresholded (strictly greater), dilated once
    with a 3x3 kernel, and split into 4-connected components; components
    with fewer than ``min_area`` pixels are discarded.
    """
    if prev.shape != cur.shape:
        raise ValueError(f"frame shape mismatch: {prev.shape} vs {cur.shape}")
    # |cur - prev| without leaving uint8: max - min of the two frames.
    diff = np.maximum(cur, prev) - np.minimum(cur, prev)
    mask = diff > threshold
    if not mask.any():
        return []
    mask = _dilate3x3(mask)
    labels, n = ndimage.label(mask)  # default structure: 4-connectivity
    if n == 0:
        return []
    counts = np.bincount(labels.ravel())
    boxes: list[BBox] = []
    for index, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or counts[index] < min_area:
            continue
        ys, xs = sl
        boxes.append(BBox(float(xs.start), float(ys.start), float(xs.stop), float(ys.stop)))
    return boxes


def merge_blobs(boxes: Sequence[BBox], gap: float) -> list[BBox]:
    """Replace groups of overlapping/nearby boxes by their enclosing box.

    Frame differencing fragments a single moving object into several
    components (texture phase, partial occlusion); components within
    ``gap`` px of each other almost surely belong to one object.
    """
    n = len(boxes)
    if n <= 1:
        return list(boxes)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    from .geometry import rect_gap

    for i in range(n):
        for j in range(i + 1, n):
            if rect_gap(boxes[i], boxes[j]) <= gap:
                parent[find(i)] = find(j)
    groups: dict[int, BBox] = {}
    order: list[int] = []
    for i in range(n):
        root = find(i)
        if root in groups:
            groups[root] = groups[root].union_box(boxes[i])
        else:
            groups[root] = boxes[i]
            order.append(root)
    return [groups[r] for r in order]


def _fit_similarity(src: np.ndarray, dst: np.ndarray) -> Affine2D:
    """Least-squares 4-DOF similarity fit (a=s*cos, b=s*sin linearization)."""
    n = src.shape[0]
    a_mat = np.zeros((2 * n, 4))
    b_vec = np.zeros(2 * n)
    a_mat[0::2, 0] = src[:, 0]
    a_mat[0::2, 1] = -src[:, 1]
    a_mat[0::2, 2] = 1.0
    a_mat[1::2, 0] = src[:, 1]
    a_mat[1::2, 1] = src[:, 0]
    a_mat[1::2, 3] = 1.0
    b_vec[0::2] = dst[:, 0]
    b_vec[1::2] = dst[:, 1]
    sol, _, rank, _ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    if rank < 4:
        raise ValueError("degenerate correspondences (coincident points)")
    a, b, tx, ty = sol
    scale = math.hypot(a, b)
    if scale <= 0.0:
        raise ValueError("degenerate correspondences (zero scale)")
    return Affine2D(scale, math.atan2(b, a), float(tx), float(ty))


def estimate_partial_affine(
    correspondences: Sequence[tuple[tuple[float, float], tuple[float, float]]],
    ransac: bool = False,
    ransac_iters: int = 100,
    inlier_px: float = 2.0,
    seed: int = 0,
) -> Affine2D:
    """Similarity transform mapping source points onto destination points.

    With ``ransac`` enabled, the best 2-point model over ``ransac_iters``
    seeded trials is refit on its inliers (residual <= ``inlier_px``).
    """
    if len(correspondences) < 2:
        raise ValueError("need at least 2 correspondences")
    src = np.asarray([c[0] for c in correspondences], dtype=float)
    dst = np.asarray([c[1] for c in correspondences], dtype=float)
    if not ransac:
        return _fit_similarity(src, dst)

    rng = np.random.default_rng(seed)
    n = len(correspondences)
    best_inliers: Optional[np.ndarray] = None
    best_count = 0
    for _ in range(ransac_iters):
        i, j = rng.choice(n, size=2, replace=False)
        # Closed-form 2-point similarity: e = s R d exactly determines (a, b).
        dx, dy = src[j] - src[i]
        norm = dx * dx + dy * dy
        if norm < 1e-12:
            continue
        ex, ey = dst[j] - dst[i]
        a = (dx * ex + dy * ey) / norm
        b = (dx * ey - dy * ex) / norm
        tx = dst[i, 0] - (a * src[i, 0] - b * src[i, 1])
        ty = dst[i, 1] - (b * src[i, 0] + a * src[i, 1])
        pred_x = a * src[:, 0] - b * src[:, 1] + tx
        pred_y = b * src[:, 0] + a * src[:, 1] + ty
        residual = np.hypot(pred_x - dst[:, 0], pred_y - dst[:, 1])
        inliers = residual <= inlier_px
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None or best_count < 2:
        raise ValueError("RANSAC found no valid model")
    return _fit_similarity(src[best_inliers], dst[best_inliers])


class TrackStatus(enum.Enum):
    ACTIVE = "active"
    STATIONARY = "stationary"
    LAST_SEEN = "last_seen"


@dataclass
class Track:
    """One tracked object: Kalman state plus bookkeeping for mask recall."""

    track_id: int
    state: np.ndarray  # (x, y, vx, vy)
    cov: np.ndarray
    bbox: BBox
    status: TrackStatus = TrackStatus.ACTIVE
    frames_since_update: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)

    @property
    def centroid(self) -> tuple[float, float]:
        return (float(self.state[0]), float(self.state[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return (float(self.state[2]), float(self.state[3]))


def classify_stationary(
    history: Sequence[tuple[float, float]], move_threshold: float = DEFAULT_MOVE_THRESHOLD
) -> TrackStatus:
    """STATIONARY when the total path length stays under the threshold."""
    if len(history) < 2:
        raise ValueError("need at least 2 positions")
    total = 0.0
    for (x0, y0), (x1, y1) in zip(history, history[1:]):
        total += math.hypot(x1 - x0, y1 - y0)
    return TrackStatus.STATIONARY if total < move_threshold else TrackStatus.ACTIVE


class CentroidTracker:
    """Per-camera Kalman centroid tracker with active/stationary/last-seen states.

    Association is greedy nearest-centroid (deterministic, O(n^2)); swap in
    an optimal assignment here if track counts ever grow past desk scale.
    Tracks are never dropped by the tracker itself; stale tracks disappear
    when the next stabilization round rebuilds the tracker.
    """

    def __init__(self, gate: float = DEFAULT_GATE) -> None:
        if gate <= 0:
            raise ValueError("gate must be positive")
        self.gate = gate
        self.tracks: list[Track] = []
        self._next_id = 0
        # Maps current-frame coordinates back to the coordinates of the frame
        # this tracker was created on, so histories stay comparable under
        # camera ego motion.
        self._to_start = Affine2D.identity()

    def spawn(self, bbox: BBox, status: TrackStatus = TrackStatus.ACTIVE) -> Track:
        cx, cy = bbox.center
        track = Track(
            track_id=self._next_id,
            state=np.array([cx, cy, 0.0, 0.0]),
            cov=_KF_P0.copy(),
            bbox=bbox,
            status=status,
        )
        track.history.append(self._to_start.apply_point(cx, cy))
        self._next_id += 1
        self.tracks.append(track)
        return track

    def step(self, observations: Sequence[BBox], ego: Optional[Affine2D] = None) -> list[BBox]:
        """Advance one frame; returns the mask boxes for this frame.

        Mask boxes are every observation plus the remembered boxes of
        unmatched stationary / newly last-seen tracks.
        """
        if ego is not None and not ego.is_identity:
            self._to_start = self._to_start.compose(ego.inverse())
            for t in self.tracks:
                t.bbox = apply_affine(ego, t.bbox)
                x, y = ego.apply_point(t.state[0], t.state[1])
                t.state[0] = x
                t.state[1] = y

        for t in self.tracks:
            t.state = _KF_F @ t.state
            t.cov = _KF_F @ t.cov @ _KF_F.T + _KF_Q

        pairs: list[tuple[float, int, int]] = []
        for ti, t in enumerate(self.tracks):
            tx, ty = t.centroid
            for oi, obs in enumerate(observations):
                ox, oy = obs.center
                d = math.hypot(tx - ox, ty - oy)
                if d <= self.gate:
                    pairs.append((d, ti, oi))
        pairs.sort()
        matched_tracks: set[int] = set()
        matched_obs: set[int] = set()
        for d, ti, oi in pairs:
            if ti in matched_tracks or oi in matched_obs:
                continue
            matched_tracks.add(ti)
            matched_obs.add(oi)
            self._update(self.tracks[ti], observations[oi])

        mask_boxes: list[BBox] = list(observations)
        for ti, t in enumerate(self.tracks):
            if ti in matched_tracks:
                continue
            t.frames_since_update += 1
            if t.status is not TrackStatus.STATIONARY:
                t.status = TrackStatus.LAST_SEEN
            mask_boxes.append(t.bbox)

        for oi, obs in enumerate(observations):
            if oi not in matched_obs:
                self.spawn(obs)
        return mask_boxes

    def _update(self, track: Track, obs: BBox) -> None:
        z = np.array(obs.center)
        innovation = z - _KF_H @ track.state
        s_mat = _KF_H @ track.cov @ _KF_H.T + _KF_R
        gain = track.cov @ _KF_H.T @ np.linalg.inv(s_mat)
        track.state = track.state + gain @ innovation
        track.cov = (np.eye(4) - gain @ _KF_H) @ track.cov
        track.bbox = obs
        track.status = TrackStatus.ACTIVE
        track.frames_since_update = 0
        track.history.append(self._to_start.apply_point(*track.centroid))
