"""Tile selection: wasted-pixel cost model and greedy min-cost set cover.

The universe is the set of mask ids for one camera frame; candidates are
tiles annotated with the masks they admissibly contain. The greedy rule
repeatedly takes the candidate minimizing cost per newly covered mask,
which carries the classic H(n) approximation guarantee.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geometry import BBox
from .tiling import Tile


class UncoverableMaskError(ValueError):
    """A mask in the universe is not contained in any candidate tile."""


@dataclass(frozen=True)
class TileChoice:
    """A candidate (or chosen) tile with cost and packing attributes."""

    tile: Tile
    covered_masks: frozenset[int]
    cost: float
    min_scale: float = 1.0
    max_scale: float = 1.0
    elasticity: float = 1.0
    degraded: bool = False

    def __post_init__(self) -> None:
        if not self.covered_masks:
            raise ValueError("a tile choice must cover at least one mask")
        if self.cost < 0:
            raise ValueError("cost must be >= 0")
        if self.min_scale > self.max_scale:
            raise ValueError("min_scale must not exceed max_scale")
        if self.elasticity <= 0:
            raise ValueError("elasticity must be positive")


def rect_union_area(rects: Iterable[BBox]) -> float:
    """Exact union area by x coordinate-compression sweep."""
    rects = [r for r in rects if r.width > 0 and r.height > 0]
    if not rects:
        return 0.0
    xs = sorted({r.x_min for r in rects} | {r.x_max for r in rects})
    total = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        strip_w = x1 - x0
        if strip_w <= 0:
            continue
        intervals = sorted(
            (r.y_min, r.y_max) for r in rects if r.x_min <= x0 and r.x_max >= x1
        )
        covered = 0.0
        cur_lo = cur_hi = None
        for lo, hi in intervals:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        total += covered * strip_w
    return total


def tile_cost(tile: Tile, masks_in_tile: Sequence[BBox]) -> float:
    """Wasted pixels: tile area minus the union area of mask-tile overlaps."""
    clipped = []
    for m in masks_in_tile:
        inter = m.intersection(tile.bbox)
        if inter is not None:
            clipped.append(inter)
    return tile.bbox.area - rect_union_area(clipped)


def greedy_mcmsc(universe: set[int], candidates: Sequence[TileChoice]) -> list[TileChoice]:
    """Greedy min-cost min-set-cover over candidate tiles.

    Selection order: minimize cost / newly-covered count, ties broken by
    (more new masks, smaller cost, smaller tile id). A pruning pass then
    drops chosen tiles whose masks are all covered by other chosen tiles
    (most expensive first), so each survivor covers some mask uniquely.
    """
    coverable = set()
    for c in candidates:
        coverable |= c.covered_masks
    missing = universe - coverable
    if missing:
        raise UncoverableMaskError(f"masks not coverable by any candidate: {sorted(missing)}")

    chosen: list[TileChoice] = []
    covered: set[int] = set()
    remaining = list(candidates)
    while covered < universe:
        best = None
        best_key = None
        for c in remaining:
            new = len((c.covered_masks & universe) - covered)
            if new == 0:
                continue
            key = (c.cost / new, -new, c.cost, c.tile.tile_id)
            if best_key is None or key < best_key:
                best_key = key
                best = c
        assert best is not None  # guaranteed by the coverability check
        chosen.append(best)
        covered |= best.covered_masks & universe
        remaining.remove(best)

    return _prune(chosen, universe)


def _prune(chosen: list[TileChoice], universe: set[int]) -> list[TileChoice]:
    keep = list(chosen)
    while True:
        redundant = []
        for c in keep:
            others = set()
            for o in keep:
                if o is not c:
                    others |= o.covered_masks
            if (c.covered_masks & universe) <= others:
                redundant.append(c)
        if not redundant:
            return keep
        victim = max(redundant, key=lambda c: (c.cost, c.tile.tile_id))
        keep.remove(victim)


# Sizing-bound profiles. Scale rank r runs ascending over the k scales a
# camera uses (catch-all included); smaller scales hold smaller objects,
# so they get tighter lower bounds and less packing elasticity. The
# numbers are engineering defaults, exposed so applications can retune.
PROFILE_DETECTION = "detection"
PROFILE_OCR = "ocr"


def profile_bounds(profile: str, scale_rank: int, n_scales: int) -> tuple[float, float, float]:
    """(min_scale, max_scale, elasticity) for a tile's scale rank."""
    if n_scales < 1 or not 0 <= scale_rank < n_scales:
        raise ValueError(f"bad scale rank {scale_rank} of {n_scales}")
    if profile == PROFILE_DETECTION:
        q = scale_rank / (n_scales - 1) if n_scales > 1 else 0.0
        return (0.5 + 0.3 * (1.0 - q), 1.5 - 0.25 * q, 0.5 + 0.5 * q)
    if profile == PROFILE_OCR:
        # Character legibility cannot survive shrinking: no downscale at all.
        return (1.0, 1.25, 0.25)
    raise ValueError(f"unknown profile: {profile!r}")


def attach_bounds(
    choice: TileChoice, scale_rank: int, n_scales: int, profile: str = PROFILE_DETECTION
) -> TileChoice:
    lo, hi, elasticity = profile_bounds(profile, scale_rank, n_scales)
    return dataclasses.replace(choice, min_scale=lo, max_scale=hi, elasticity=elasticity)
