"""Inverse 2D bin packing of chosen tiles onto one canvas frame.

Items carry per-tile scale bounds and an elasticity weight. A differential
evolution search over the per-item scale vector minimizes the worst
elasticity-weighted shortfall from each item's maximum scale, with a large
penalty for any item the deterministic skyline placer cannot fit. When no
penalty-free solution exists, lower bounds are relaxed in 10% decrements;
after three relaxations the packer gives up and asks for admission control.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import BBox

PENALTY = 1.0e6
RELAX_STEP = 0.1
MAX_RELAXATIONS = 3
MIN_PLACED_SHORT_SIDE = 16.0
STALL_GENERATIONS = 12
# Cap on the population size. The 4n default explodes for many-tile
# canvases and blows the construction-time envelope; beyond ~64 members the
# extra diversity buys nothing once the water-filling seeds are in play.
POP_CAP = 64


class AdmissionControlError(RuntimeError):
    """Packing failed even with fully relaxed lower bounds.

    The only remedy is assigning fewer camera streams to this node.
    """


@dataclass(frozen=True)
class PackItem:
    """One tile to place: source crop, scale bounds, squeeze elasticity."""

    ref: tuple[int, int]  # (camera_id, tile_id)
    src_bbox: BBox
    min_scale: float
    max_scale: float
    elasticity: float = 1.0

    def __post_init__(self) -> None:
        if self.src_bbox.width <= 0 or self.src_bbox.height <= 0:
            raise ValueError("pack item needs a positive-size source crop")
        if self.min_scale > self.max_scale:
            raise ValueError("min_scale must not exceed max_scale")
        if self.elasticity <= 0:
            raise ValueError("elasticity must be positive")


@dataclass(frozen=True)
class Placement:
    ref: tuple[int, int]
    src_bbox: BBox
    scale: float
    x: int
    y: int
    w: int
    h: int

    @property
    def canvas_box(self) -> BBox:
        return BBox(self.x, self.y, self.x + self.w, self.y + self.h)

    @property
    def sx(self) -> float:
        return self.w / self.src_bbox.width

    @property
    def sy(self) -> float:
        return self.h / self.src_bbox.height


@dataclass
class CanvasLayout:
    canvas_side: int
    placements: list[Placement] = field(default_factory=list)
    relaxed: bool = False
    relax_factor: float = 0.0

    def validate(self) -> None:
        """Raise when any placement exits the canvas or overlaps another."""
        for p in self.placements:
            if p.x < 0 or p.y < 0 or p.x + p.w > self.canvas_side or p.y + p.h > self.canvas_side:
                raise ValueError(f"placement out of bounds: {p}")
        for i, a in enumerate(self.placements):
            for b in self.placements[i + 1 :]:
                if (
                    a.x < b.x + b.w
                    and b.x < a.x + a.w
                    and a.y < b.y + b.h
                    and b.y < a.y + a.h
                ):
                    raise ValueError(f"overlapping placements: {a} / {b}")


@dataclass(frozen=True)
class DEParams:
    pop: Optional[int] = None  # None: max(20, 4 * n_items)
    f: float = 0.7
    cr: float = 0.9
    generations: int = 150
    seed: int = 0

    def population(self, n_items: int) -> int:
        return self.pop if self.pop is not None else min(max(20, 4 * n_items), POP_CAP)


def even_size(v: float) -> int:
    """Nearest even pixel count, at least 2 (keeps resampling stable)."""
    return max(2, int(round(v / 2.0)) * 2)


def _skyline_place(
    sizes: Sequence[tuple[int, int]], canvas: int, partial: bool = False
) -> tuple[Optional[list[tuple[int, int]]], int]:
    """Bottom-left skyline placement in descending-height order.

    Returns (positions in input order, unplaced count). In strict mode
    (``partial=False``) positions is None as soon as any item fails; in
    partial mode failed items are skipped and counted.
    """
    order = sorted(
        range(len(sizes)), key=lambda i: (-sizes[i][1], -sizes[i][0], i)
    )
    # Skyline as parallel lists: span i covers [xs[i], xs[i+1]) at height
    # hs[i]; the last span runs to the canvas edge.
    xs: list[int] = [0]
    hs: list[int] = [0]
    positions: list[Optional[tuple[int, int]]] = [None] * len(sizes)
    unplaced = 0
    for idx in order:
        w, h = sizes[idx]
        best_y = canvas + 1
        best_x = -1
        if w <= canvas and h <= canvas:
            m = len(xs)
            limit = canvas - w
            max_support = canvas - h
            for i in range(m):
                x = xs[i]
                if x > limit:
                    break
                support = hs[i]
                if support >= best_y:
                    continue
                end = x + w
                j = i + 1
                while j < m and xs[j] < end:
                    hj = hs[j]
                    if hj > support:
                        support = hj
                        if support >= best_y or support > max_support:
                            break
                    j += 1
                if support < best_y and support <= max_support:
                    best_y = support
                    best_x = x
                    if best_y == 0:
                        break
        if best_x < 0:
            if not partial:
                return None, len(sizes)
            unplaced += 1
            continue
        positions[idx] = (best_x, best_y)
        _raise_skyline(xs, hs, best_x, best_x + w, best_y + h, canvas)
    if unplaced:
        return None, unplaced
    return [p for p in positions if p is not None], 0


def _raise_skyline(xs: list[int], hs: list[int], x0: int, x1: int, new_h: int, canvas: int) -> None:
    """Set skyline height over [x0, x1) to new_h, merging equal neighbors.

    Spans partition [0, canvas), so remnant starts never collide.
    """
    spans: list[tuple[int, int]] = [(x0, new_h)]
    m = len(xs)
    for i in range(m):
        a = xs[i]
        b = xs[i + 1] if i + 1 < m else canvas
        h = hs[i]
        if b <= x0 or a >= x1:
            spans.append((a, h))
        else:
            if a < x0:
                spans.append((a, h))
            if b > x1:
                spans.append((x1, h))
    spans.sort()
    xs.clear()
    hs.clear()
    for a, h in spans:
        if hs and hs[-1] == h:
            continue
        xs.append(a)
        hs.append(h)


def place_rectangles(
    sizes: Sequence[tuple[float, float]], canvas: int
) -> Optional[list[tuple[int, int]]]:
    """Deterministic skyline placement; None when the set does not fit."""
    int_sizes = [(int(round(w)), int(round(h))) for w, h in sizes]
    if any(w <= 0 or h <= 0 for w, h in int_sizes):
        raise ValueError("sizes must be positive")
    positions, _ = _skyline_place(int_sizes, canvas, partial=False)
    return positions


def relax_bounds(items: Sequence[PackItem], factor: float) -> list[PackItem]:
    """Scale every lower bound down by ``factor``, floored so the placed
    short side never drops below MIN_PLACED_SHORT_SIDE pixels."""
    if not 0.0 < factor < 1.0:
        raise ValueError("relax factor must be in (0, 1)")
    out = []
    for it in items:
        short = min(it.src_bbox.width, it.src_bbox.height)
        floor = MIN_PLACED_SHORT_SIDE / short
        new_lo = max(it.min_scale * (1.0 - factor), floor)
        out.append(dataclasses.replace(it, min_scale=min(new_lo, it.max_scale)))
    return out


def _sizes_for(naturals: np.ndarray, s: np.ndarray) -> list[tuple[int, int]]:
    scaled = np.maximum(2, np.rint(naturals * s[:, None] / 2.0).astype(np.int64) * 2)
    return [tuple(p) for p in scaled.tolist()]


class _Evaluator:
    """Fitness with area pre-filter, placement memoization and shared cache."""

    def __init__(self, items: Sequence[PackItem], canvas: int):
        self.naturals = np.array(
            [(it.src_bbox.width, it.src_bbox.height) for it in items], dtype=float
        )
        self.pixel_areas = self.naturals[:, 0] * self.naturals[:, 1]
        self.elas = np.array([it.elasticity for it in items])
        self.hi = np.array([it.max_scale for it in items])
        self.canvas = canvas
        self.canvas_area = float(canvas * canvas)
        self._memo: dict[tuple[tuple[int, int], ...], int] = {}

    def max_term(self, s: np.ndarray) -> float:
        return float(np.max(self.elas * (self.hi - s)))

    def penalty_units(self, s: np.ndarray) -> float:
        """0 when all items place; otherwise a positive infeasibility measure."""
        total = float((self.pixel_areas * s * s).sum())
        if total > self.canvas_area:
            return 1.0 + (total - self.canvas_area) / self.canvas_area
        sizes = tuple(_sizes_for(self.naturals, s))
        unplaced = self._memo.get(sizes)
        if unplaced is None:
            _, unplaced = _skyline_place(sizes, self.canvas, partial=True)
            self._memo[sizes] = unplaced
        return float(unplaced)

    def fitness(self, s: np.ndarray) -> float:
        return self.max_term(s) + PENALTY * self.penalty_units(s)

    def pressure_vector(self, t: float, lo: np.ndarray) -> np.ndarray:
        """Scales after applying shortfall pressure t uniformly (water-filling)."""
        return np.clip(self.hi - t / self.elas, lo, self.hi)

    def area_lower_bound(self, lo: np.ndarray) -> tuple[float, np.ndarray]:
        """(min possible max-term over the area constraint, argmin vector).

        Any placeable scale vector satisfies the total-area constraint, so
        this is a certified lower bound on the achievable fitness: once a
        feasible individual reaches it, the search can stop.
        """
        if float((self.pixel_areas * self.hi * self.hi).sum()) <= self.canvas_area:
            return 0.0, self.hi.copy()
        t_max = float(np.max(self.elas * (self.hi - lo)))
        t_lo, t_hi = 0.0, t_max
        for _ in range(60):
            mid = 0.5 * (t_lo + t_hi)
            s = self.pressure_vector(mid, lo)
            if float((self.pixel_areas * s * s).sum()) > self.canvas_area:
                t_lo = mid
            else:
                t_hi = mid
        return t_hi, self.pressure_vector(t_hi, lo)


def _seeded_population(
    ev: _Evaluator, lo: np.ndarray, hi: np.ndarray, pop_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Random init plus structured seeds: the bounds themselves and the
    water-filling family (progressively squeezed to buy placement slack)."""
    n = len(lo)
    pop = rng.uniform(lo, hi, size=(pop_size, n))
    pop[0] = hi
    pop[1] = lo
    t_star, base = ev.area_lower_bound(lo)
    slot = 2
    for factor in (1.0, 1.05, 1.15, 1.3, 1.6):
        if slot >= pop_size:
            break
        pop[slot] = ev.pressure_vector(t_star * factor, lo)
        slot += 1
    return pop


def _run_de(
    ev: _Evaluator, lo: np.ndarray, hi: np.ndarray, params: DEParams
) -> tuple[np.ndarray, float]:
    """Generational rand/1/bin differential evolution.

    Trials for a whole generation are built vectorized; the expensive
    placement check runs only for trials that pass the area pre-filter and
    whose shortfall term alone could beat their target. The search stops
    early at the certified area lower bound or after a stall.
    """
    n = len(lo)
    pop_size = params.population(n)
    rng = np.random.default_rng(params.seed)
    pop = _seeded_population(ev, lo, hi, pop_size, rng)
    fit = np.array([ev.fitness(pop[i]) for i in range(pop_size)])
    bound, _ = ev.area_lower_bound(lo)
    best_fit = float(fit.min())
    stall = 0
    span = hi - lo
    for _gen in range(params.generations):
        if best_fit <= bound + 1e-9:
            break
        idx = np.arange(pop_size)
        r = rng.integers(0, pop_size, size=(3, pop_size))
        for row in range(3):
            bad = (r[row] == idx) | (r[row] == r[:row]).any(axis=0) if row else (r[row] == idx)
            while bad.any():
                r[row, bad] = rng.integers(0, pop_size, size=int(bad.sum()))
                bad = (r[row] == idx) | ((r[row] == r[:row]).any(axis=0) if row else False)
        mutants = pop[r[0]] + params.f * (pop[r[1]] - pop[r[2]])
        cross = rng.random((pop_size, n)) < params.cr
        cross[idx, rng.integers(0, n, size=pop_size)] = True
        trials = np.where(cross, mutants, pop)
        np.clip(trials, lo, hi, out=trials)

        max_terms = (ev.elas * (ev.hi - trials)).max(axis=1)
        areas = (ev.pixel_areas * trials * trials).sum(axis=1)
        for i in range(pop_size):
            # Penalty >= 0, so the shortfall term lower-bounds fitness.
            if max_terms[i] >= fit[i]:
                continue
            if areas[i] > ev.canvas_area:
                f_trial = max_terms[i] + PENALTY * (
                    1.0 + (areas[i] - ev.canvas_area) / ev.canvas_area
                )
            else:
                f_trial = max_terms[i] + PENALTY * ev.penalty_units(trials[i])
            if f_trial < fit[i]:
                pop[i] = trials[i]
                fit[i] = f_trial
        gen_best = float(fit.min())
        if gen_best < best_fit - 1e-12:
            best_fit = gen_best
            stall = 0
        else:
            stall += 1
            if best_fit < PENALTY and stall >= STALL_GENERATIONS:
                break
    best_idx = int(np.argmin(fit))
    return pop[best_idx].copy(), float(fit[best_idx])


def inverse_bin_pack(
    items: Sequence[PackItem], canvas: int, params: Optional[DEParams] = None
) -> CanvasLayout:
    """Scale and place all items onto one canvas, maximizing the worst tile.

    Deterministic for a fixed DE seed. Raises AdmissionControlError when
    the items cannot be packed even after MAX_RELAXATIONS lower-bound
    relaxations.
    """
    if not items:
        raise ValueError("inverse_bin_pack needs at least one item")
    if params is None:
        params = DEParams()

    work = list(items)
    for attempt in range(MAX_RELAXATIONS + 1):
        layout = _try_pack(work, canvas, params)
        if layout is not None:
            layout.relaxed = attempt > 0
            layout.relax_factor = 1.0 - (1.0 - RELAX_STEP) ** attempt
            layout.validate()
            return layout
        if attempt == MAX_RELAXATIONS:
            break
        work = relax_bounds(work, RELAX_STEP)
    raise AdmissionControlError(
        f"cannot pack {len(items)} tiles into a {canvas}x{canvas} canvas even "
        f"after {MAX_RELAXATIONS} bound relaxations; assign fewer camera streams"
    )


def _try_pack(
    items: list[PackItem], canvas: int, params: DEParams
) -> Optional[CanvasLayout]:
    ev = _Evaluator(items, canvas)
    lo = np.array([it.min_scale for it in items])
    hi = ev.hi

    # All-at-max is the global optimum whenever it fits: skip the search.
    if ev.penalty_units(hi) == 0.0:
        return _layout_for(items, hi, canvas)
    # Even the most squeezed configuration exceeds the canvas area: hopeless.
    min_area = float((ev.naturals[:, 0] * ev.naturals[:, 1] * lo * lo).sum())
    if min_area > ev.canvas_area:
        return None

    best_s, best_fit = _run_de(ev, lo, hi, params)
    if best_fit >= PENALTY:
        return None
    return _layout_for(items, best_s, canvas)


def _layout_for(items: list[PackItem], s: np.ndarray, canvas: int) -> CanvasLayout:
    naturals = np.array([(it.src_bbox.width, it.src_bbox.height) for it in items])
    sizes = _sizes_for(naturals, s)
    positions, unplaced = _skyline_place(sizes, canvas, partial=False)
    assert positions is not None and unplaced == 0
    placements = [
        Placement(
            ref=it.ref,
            src_bbox=it.src_bbox,
            scale=float(s[i]),
            x=positions[i][0],
            y=positions[i][1],
            w=sizes[i][0],
            h=sizes[i][1],
        )
        for i, it in enumerate(items)
    ]
    return CanvasLayout(canvas_side=canvas, placements=placements)
