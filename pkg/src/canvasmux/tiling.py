"""Multi-scale tiling of a frame and goodness-based mask assignment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .geometry import BBox, QuadTree
from .scales import ScaleSet

# Tile stride is side * (1 - overlap). The goodness band requires a mask to
# fill 50-90% of its tile, so strides near half a tile side are needed for a
# band-admissible mask to also be 95%-capturable at some grid phase; 0.25
# overlap leaves roughly half of such masks falling through to the catch-all.
DEFAULT_OVERLAP = 0.5
COVERAGE_MIN = 0.95
RATIO_RANGE = (0.5, 0.9)


@dataclass(frozen=True)
class Tile:
    """A candidate square crop at one RoI scale.

    The bbox side equals ``scale_dim`` except when the scale exceeds the
    frame itself, in which case the crop is clamped to the frame.
    """

    tile_id: int
    camera_id: int
    scale_dim: int
    bbox: BBox


@dataclass
class Assignment:
    """Mask <-> tile admissibility, kept as two mutually consistent views."""

    mask_to_tiles: dict[int, set[int]] = field(default_factory=dict)
    tile_to_masks: dict[int, set[int]] = field(default_factory=dict)

    def add(self, mask_id: int, tile_id: int) -> None:
        self.mask_to_tiles.setdefault(mask_id, set()).add(tile_id)
        self.tile_to_masks.setdefault(tile_id, set()).add(mask_id)

    def edges(self) -> set[tuple[int, int]]:
        return {(m, t) for m, tiles in self.mask_to_tiles.items() for t in tiles}


def _grid_positions(extent: int, side: int, overlap: float) -> list[int]:
    """Stride-spaced start offsets with the last one shifted flush to the edge."""
    if side >= extent:
        return [0]
    stride = side * (1.0 - overlap)
    last = extent - side
    positions: list[int] = []
    i = 0
    while True:
        p = int(round(i * stride))
        if p >= last:
            break
        positions.append(p)
        i += 1
    positions.append(last)
    return sorted(set(positions))


def generate_tiles(
    frame_dims: tuple[int, int],
    scales: ScaleSet,
    overlap: float = DEFAULT_OVERLAP,
    camera_id: int = 0,
    id_offset: int = 0,
) -> list[Tile]:
    """Bag of square tiles at every scale (catch-all included).

    Tiles stride by ``side * (1 - overlap)`` rounded to whole pixels; the
    final row/column is shifted flush to the frame edge so every pixel is
    covered at every scale.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    w, h = frame_dims
    tiles: list[Tile] = []
    next_id = id_offset
    for side in scales.all_dims:
        xs = _grid_positions(w, side, overlap)
        ys = _grid_positions(h, side, overlap)
        for y in ys:
            for x in xs:
                tiles.append(
                    Tile(
                        tile_id=next_id,
                        camera_id=camera_id,
                        scale_dim=side,
                        bbox=BBox(x, y, min(x + side, w), min(y + side, h)),
                    )
                )
                next_id += 1
    return tiles


def ratio_admissible(mask_height: float, tile_height: float) -> bool:
    """Open-interval mask:tile height ratio band check."""
    if tile_height <= 0:
        return False
    ratio = mask_height / tile_height
    return RATIO_RANGE[0] < ratio < RATIO_RANGE[1]


def assign_masks(
    tiles: Sequence[Tile],
    masks: Sequence[BBox],
    index: QuadTree | None = None,
    coverage_min: float = COVERAGE_MIN,
) -> tuple[Assignment, list[int]]:
    """Admissible mask->tile assignment plus the list of orphan mask ids.

    A mask is admissible in a tile when the tile captures at least
    ``coverage_min`` of the mask's width and height and the mask:tile
    height ratio falls strictly inside ``RATIO_RANGE``. Orphans (no
    admissible tile anywhere) are left to the caller's fallback.
    """
    if index is None:
        index = build_tile_index(tiles)
    by_id = {t.tile_id: t for t in tiles}
    assignment = Assignment()
    orphans: list[int] = []
    for mask_id, mask in enumerate(masks):
        hit = False
        for tile_id in index.query(mask):
            tile = by_id[tile_id]
            inter = mask.intersection(tile.bbox)
            if inter is None:
                continue
            if inter.width < coverage_min * mask.width:
                continue
            if inter.height < coverage_min * mask.height:
                continue
            if not ratio_admissible(mask.height, tile.bbox.height):
                continue
            assignment.add(mask_id, tile_id)
            hit = True
        if not hit:
            orphans.append(mask_id)
    return assignment, orphans


def build_tile_index(tiles: Sequence[Tile]) -> QuadTree:
    return QuadTree((t.bbox, t.tile_id) for t in tiles)
