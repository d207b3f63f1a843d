"""Per-camera RoI scale profiling from observed object sizes.

A stabilization round turns the size distribution of detected objects into
a small set of square tile side lengths (multiples of 32) plus one larger
catch-all scale for objects bigger than anything seen so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.cluster import KMeans

from .geometry import BBox, rect_gap

TILE_QUANTUM = 32
CATCH_ALL_FACTOR = 1.5
DEFAULT_MERGE_GAP = 8.0
DEFAULT_K_MAX = 6
KMEANS_SEED = 0


class SizeSample(NamedTuple):
    width: float
    height: float


@dataclass(frozen=True)
class ScaleSet:
    """Ordered square tile side lengths plus the catch-all side length.

    ``dims`` may be empty (cold-start fallback keeps only the catch-all).
    """

    dims: tuple[int, ...]
    catch_all: int

    def __post_init__(self) -> None:
        if any(d <= 0 or d % TILE_QUANTUM for d in self.dims):
            raise ValueError(f"dims must be positive multiples of {TILE_QUANTUM}: {self.dims}")
        if list(self.dims) != sorted(set(self.dims)):
            raise ValueError(f"dims must be strictly increasing: {self.dims}")
        if self.catch_all <= 0 or self.catch_all % TILE_QUANTUM:
            raise ValueError(f"catch_all must be a positive multiple of {TILE_QUANTUM}")
        if self.dims and self.catch_all <= max(self.dims):
            raise ValueError("catch_all must exceed every tile dim")

    @property
    def all_dims(self) -> tuple[int, ...]:
        """Tile dims in ascending order, catch-all last."""
        return self.dims + (self.catch_all,)


def merge_proximal_boxes(boxes: Sequence[BBox], gap: float = DEFAULT_MERGE_GAP) -> list[SizeSample]:
    """Size samples for the boxes plus enclosing sizes of near/overlapping groups.

    Groups are connected components of the "within ``gap`` px" relation
    (L-infinity rectangle distance, overlap included). Only groups of two
    or more boxes contribute an extra enclosing-rectangle sample.
    """
    if gap < 0:
        raise ValueError("gap must be >= 0")
    samples = [SizeSample(b.width, b.height) for b in boxes]
    n = len(boxes)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if rect_gap(boxes[i], boxes[j]) <= gap:
                parent[find(i)] = find(j)

    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    for members in groups.values():
        if len(members) < 2:
            continue
        enclosing = boxes[members[0]]
        for i in members[1:]:
            enclosing = enclosing.union_box(boxes[i])
        samples.append(SizeSample(enclosing.width, enclosing.height))
    return samples


def _wcss_curve(points: np.ndarray, ks: Sequence[int], seed: int) -> tuple[list[float], dict[int, np.ndarray]]:
    wcss: list[float] = []
    centroids: dict[int, np.ndarray] = {}
    for k in ks:
        km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed)
        km.fit(points)
        wcss.append(float(km.inertia_))
        centroids[k] = km.cluster_centers_
    return wcss, centroids


def _elbow_index(ks: Sequence[int], wcss: Sequence[float]) -> int:
    """Kneedle-style elbow: max perpendicular distance to the k-range chord.

    Both axes are normalized to [0, 1] before measuring distance; ties go
    to the smaller k.
    """
    k_arr = np.asarray(ks, dtype=float)
    w_arr = np.asarray(wcss, dtype=float)
    k_span = k_arr[-1] - k_arr[0]
    w_span = w_arr[0] - w_arr[-1]
    kn = (k_arr - k_arr[0]) / k_span
    wn = (w_arr - w_arr[-1]) / w_span if w_span > 0 else np.zeros_like(w_arr)
    # Chord runs from (0, wn[0]) to (1, wn[-1]); distance reduces to the
    # vertical gap between the curve and the straight line, up to a factor.
    line = wn[0] + (wn[-1] - wn[0]) * kn
    dist = line - wn
    return int(np.argmax(dist))


def cluster_sizes(
    samples: Sequence[SizeSample], k_max: int = DEFAULT_K_MAX, seed: int = KMEANS_SEED
) -> tuple[int, list[tuple[float, float]]]:
    """Cluster (w, h) samples with k-means and pick k by elbow detection.

    Returns the chosen k and its centroids sorted by max(w, h) ascending.
    Deterministic for a fixed seed.
    """
    if not samples:
        raise ValueError("cluster_sizes requires at least one sample")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    points = np.asarray([(s.width, s.height) for s in samples], dtype=float)
    n_distinct = len(np.unique(points, axis=0))
    k_hi = min(k_max, n_distinct)

    if k_hi <= 2:
        # The elbow heuristic needs at least three curve points; with one or
        # two distinct sizes the exact clustering is the obvious answer.
        k = k_hi
        _, centroids = _wcss_curve(points, [k], seed)
    else:
        ks = list(range(1, k_hi + 1))
        wcss, centroids = _wcss_curve(points, ks, seed)
        k = ks[_elbow_index(ks, wcss)]

    cents = sorted((float(c[0]), float(c[1])) for c in centroids[k])
    cents.sort(key=lambda c: max(c))
    return k, cents


def derive_scales(centroids: Sequence[tuple[float, float]]) -> ScaleSet:
    """Tile side lengths from cluster centroids.

    Each centroid's max(w, h) is rounded up to a multiple of 32 (so the
    centroid object fits the usable mask:tile ratio band); duplicates
    collapse. The catch-all is 1.5x the largest dim rounded down to a
    multiple of 32, bumped up when rounding lands it on the largest dim.
    """
    if not centroids:
        raise ValueError("derive_scales requires at least one centroid")
    dims = sorted(
        {
            TILE_QUANTUM * max(1, math.ceil(max(w, h) / TILE_QUANTUM))
            for w, h in centroids
        }
    )
    target = CATCH_ALL_FACTOR * dims[-1]
    catch_all = TILE_QUANTUM * math.floor(target / TILE_QUANTUM)
    if catch_all <= dims[-1]:
        catch_all = TILE_QUANTUM * (math.floor(target / TILE_QUANTUM) + 1)
    return ScaleSet(tuple(dims), catch_all)


def fallback_scales(catch_all: int = 128) -> ScaleSet:
    """Cold-start scale set when a stabilization round saw no objects."""
    return ScaleSet((), catch_all)


def clamp_scales(scales: ScaleSet, max_side: int) -> ScaleSet:
    """Cap tile side lengths at ``max_side`` (usually the canvas side).

    A tile larger than the canvas could never be packed without shrinking
    below scale 1, which no-shrink profiles forbid outright.
    """
    cap = TILE_QUANTUM * (max_side // TILE_QUANTUM)
    if cap < TILE_QUANTUM:
        raise ValueError("max_side smaller than one tile quantum")
    catch_all = min(scales.catch_all, cap)
    dims = tuple(d for d in scales.dims if d < catch_all)
    return ScaleSet(dims, catch_all)
