"""PS/MoS alternation, the analytic throughput model and admission control.

The pipeline alternates between stabilization (full-frame inference that
refreshes per-camera scales and trackers) and the per-frame multiplexing
path (motion masks -> tiles -> set cover -> packing -> composed canvas ->
detection -> back-translation). Inference latency is a configured model,
not a measurement: the published canvas latencies seed a lookup table so
desk machines reproduce the throughput arithmetic of the target device.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .baselines import fcfs_layout
from .canvas import CanvasFrame, Detection, compose, dedupe, translate_back
from .geometry import QuadTree
from .metrics import packing_stats
from .motion import (
    CentroidTracker,
    GrayFrame,
    TrackStatus,
    classify_stationary,
    estimate_partial_affine,
    frame_diff_masks,
    merge_blobs,
)
from .packer import (
    AdmissionControlError,
    CanvasLayout,
    DEParams,
    PackItem,
    inverse_bin_pack,
)
from .scales import (
    ScaleSet,
    clamp_scales,
    cluster_sizes,
    derive_scales,
    fallback_scales,
    merge_proximal_boxes,
)
from .setcover import TileChoice, attach_bounds, greedy_mcmsc, tile_cost
from .sim import MockDetector, Scenario
from .tiling import Tile, assign_masks, build_tile_index, generate_tiles

THREADS_ENV = "MOSAIC_THREADS"

# Published canvas inference latencies seed the model; other canvas sizes
# scale by a fixed-overhead-plus-quadratic factor in the canvas side.
_BASE_LATENCY_640 = {1: 1.0 / 19.0, 4: 0.170}


def default_batch_latency(canvas: int, batch: int) -> float:
    """Configured inference latency (seconds) for one batch of canvases."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    lat1 = _BASE_LATENCY_640[1]
    lat4 = _BASE_LATENCY_640[4]
    base = lat1 + (lat4 - lat1) * (batch - 1) / 3.0
    ratio = canvas / 640.0
    return base * (0.3 + 0.7 * ratio * ratio)


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PipelineConfig:
    cameras: int = 6
    canvas_side: int = 640
    batch: int = 4
    ps_frames: int = 10
    ps_period_s: float = 30.0
    batch_latency: Optional[float] = None  # None: lookup table
    construction_budget: Optional[float] = None  # None: batch latency
    profile: str = "detection"
    overlap: float = 0.5
    diff_threshold: int = 25
    min_area: int = 64
    gate: float = 50.0
    move_threshold: float = 20.0
    merge_gap: float = 8.0
    k_max: int = 6
    kmeans_seed: int = 0
    ego_compensation: bool = True
    strict: bool = False
    de_params: DEParams = field(default_factory=DEParams)

    def __post_init__(self) -> None:
        if self.cameras < 1 or self.canvas_side < 64 or self.batch < 1:
            raise ValueError("invalid pipeline config")
        if self.ps_frames < 0 or self.ps_period_s <= 0:
            raise ValueError("invalid stabilization config")

    def latency(self) -> float:
        if self.batch_latency is not None:
            return self.batch_latency
        return default_batch_latency(self.canvas_side, self.batch)

    def budget(self) -> float:
        return self.construction_budget if self.construction_budget is not None else self.latency()


@dataclass(frozen=True)
class Throughput:
    canvas_fps: float
    per_camera_fps: float
    cfps: float
    ps_delay: float


def effective_throughput(cfg: PipelineConfig, cameras: Optional[int] = None) -> Throughput:
    """Analytic per-camera and cumulative FPS under PS amortization.

    The canvas rate is the nominal whole-FPS figure (batch / latency,
    rounded), matching how published device rates are quoted; the
    stabilization pass costs ``ps_frames * M / rate`` seconds of each
    period during which every camera advances only ``ps_frames`` frames.
    Canvas construction never appears in the steady-state rate: building
    batch i+1 is pipelined under batch i's inference, which is valid
    whenever construction stays within the inference budget (the condition
    :func:`compute_max_cameras` enforces).
    """
    m = cameras if cameras is not None else cfg.cameras
    canvas_fps = max(1.0, float(round(cfg.batch / cfg.latency())))
    ps_delay = cfg.ps_frames * m / canvas_fps
    if ps_delay >= cfg.ps_period_s:
        raise ValueError(
            f"stabilization of {m} cameras takes {ps_delay:.1f}s, "
            f"longer than the {cfg.ps_period_s:.1f}s period"
        )
    per_camera = (cfg.ps_frames + (cfg.ps_period_s - ps_delay) * canvas_fps) / cfg.ps_period_s
    return Throughput(
        canvas_fps=canvas_fps,
        per_camera_fps=per_camera,
        cfps=m * per_camera,
        ps_delay=ps_delay,
    )


@dataclass
class RunStats:
    frames_ps: int = 0
    frames_mos: int = 0
    construction_times: list[float] = field(default_factory=list)
    dropped_detections: int = 0
    relaxation_events: int = 0
    admission_events: int = 0
    coverage_violations: int = 0
    degraded_assignments: int = 0
    utilizations: list[float] = field(default_factory=list)

    def merge(self, other: "RunStats") -> None:
        self.frames_ps += other.frames_ps
        self.frames_mos += other.frames_mos
        self.construction_times.extend(other.construction_times)
        self.dropped_detections += other.dropped_detections
        self.relaxation_events += other.relaxation_events
        self.admission_events += other.admission_events
        self.coverage_violations += other.coverage_violations
        self.degraded_assignments += other.degraded_assignments
        self.utilizations.extend(other.utilizations)


@dataclass
class MosState:
    scale_sets: dict[int, ScaleSet]
    trackers: dict[int, CentroidTracker]
    tiles: dict[int, list[Tile]]
    tile_index: dict[int, QuadTree]
    prev_frame: dict[int, GrayFrame]
    active_cameras: list[int]


@dataclass
class PsResult:
    state: MosState
    detections: dict[tuple[int, int], list[Detection]]  # (camera, frame) -> dets
    stats: RunStats


@dataclass
class MosStepResult:
    detections: dict[int, list[Detection]]
    frame: CanvasFrame
    chosen: list[TileChoice]
    construction_s: float
    stats: RunStats


def run_ps_cycle(
    scenario: Scenario,
    camera_ids: Sequence[int],
    frame_range: Sequence[int],
    cfg: PipelineConfig,
    detector: MockDetector,
) -> PsResult:
    """Full-frame stabilization: refresh scales, trackers and detections."""
    if not frame_range:
        raise ValueError("stabilization needs at least one frame")
    stats = RunStats()
    scale_sets: dict[int, ScaleSet] = {}
    trackers: dict[int, CentroidTracker] = {}
    prev_frame: dict[int, GrayFrame] = {}
    detections: dict[tuple[int, int], list[Detection]] = {}

    for cam in camera_ids:
        meta = scenario.cameras[cam]
        layout = fcfs_layout((meta.width, meta.height), cfg.canvas_side, camera_id=cam)
        lite = CanvasFrame(layout=layout)
        tracker = CentroidTracker(gate=cfg.gate)
        samples = []
        for idx in frame_range:
            canvas_dets = detector.detect_canvas(
                lite, {cam: scenario.gt(cam, idx)}, frame_idx=idx * 1000 + cam
            )
            per_cam, dropped = translate_back(canvas_dets, lite)
            stats.dropped_detections += dropped
            dets = dedupe(per_cam).get(cam, [])
            detections[(cam, idx)] = dets
            ego = scenario.ego(cam, idx) if cfg.ego_compensation and idx > frame_range[0] else None
            tracker.step([d.bbox for d in dets], ego)
            samples.extend(merge_proximal_boxes([d.bbox for d in dets], cfg.merge_gap))
            stats.frames_ps += 1

        if samples:
            _, centroids = cluster_sizes(samples, cfg.k_max, cfg.kmeans_seed)
            scale_sets[cam] = clamp_scales(derive_scales(centroids), cfg.canvas_side)
        else:
            scale_sets[cam] = fallback_scales()

        for track in tracker.tracks:
            if len(track.history) >= 2:
                track.status = classify_stationary(track.history, cfg.move_threshold)
                if track.status is TrackStatus.STATIONARY:
                    track.state[2] = 0.0
                    track.state[3] = 0.0
        trackers[cam] = tracker
        prev_frame[cam] = scenario.render(cam, frame_range[-1])

    tiles: dict[int, list[Tile]] = {}
    index: dict[int, QuadTree] = {}
    for cam in camera_ids:
        meta = scenario.cameras[cam]
        tiles[cam] = generate_tiles(
            (meta.width, meta.height), scale_sets[cam], cfg.overlap, camera_id=cam
        )
        index[cam] = build_tile_index(tiles[cam])

    state = MosState(
        scale_sets=scale_sets,
        trackers=trackers,
        tiles=tiles,
        tile_index=index,
        prev_frame=prev_frame,
        active_cameras=list(camera_ids),
    )
    return PsResult(state=state, detections=detections, stats=stats)


def _camera_stage(
    scenario: Scenario,
    cam: int,
    frame_idx: int,
    raster: GrayFrame,
    state: MosState,
    cfg: PipelineConfig,
) -> tuple[list[PackItem], list[TileChoice], list, int]:
    """Motion -> masks -> tiles -> set cover for one camera frame."""
    masks_diff = merge_blobs(
        frame_diff_masks(state.prev_frame[cam], raster, cfg.diff_threshold, cfg.min_area),
        cfg.merge_gap,
    )
    ego = None
    if cfg.ego_compensation and not scenario.ego(cam, frame_idx).is_identity:
        corr = scenario.ego_correspondences(cam, frame_idx)
        ego = estimate_partial_affine(corr, ransac=True)
    # Track memory can duplicate a region an observation already covers
    # (track jumps); collapsing overlapping masks keeps the tile bag tight.
    mask_boxes = merge_blobs(state.trackers[cam].step(masks_diff, ego), 0.0)

    tiles = state.tiles[cam]
    assignment, orphans = assign_masks(tiles, mask_boxes, index=state.tile_index[cam])

    by_id = {t.tile_id: t for t in tiles}
    masks_per_tile: dict[int, set[int]] = {
        t: set(ms) for t, ms in assignment.tile_to_masks.items()
    }
    degraded_tiles: set[int] = set()
    universe: set[int] = set(assignment.mask_to_tiles.keys())
    n_degraded = 0

    catch_all_dim = state.scale_sets[cam].catch_all
    catch_tiles = [t for t in tiles if t.scale_dim == catch_all_dim]
    for mask_id in orphans:
        mask = mask_boxes[mask_id]
        best_tile = None
        best_area = 0.0
        for t in catch_tiles:  # ascending tile id: first max wins ties
            inter = mask.intersection(t.bbox)
            area = inter.area if inter is not None else 0.0
            if area > best_area:
                best_area = area
                best_tile = t
        if best_tile is None:
            continue  # mask entirely outside the frame; nothing can show it
        masks_per_tile.setdefault(best_tile.tile_id, set()).add(mask_id)
        degraded_tiles.add(best_tile.tile_id)
        universe.add(mask_id)
        n_degraded += 1

    candidates = []
    for tile_id in sorted(masks_per_tile):
        tile = by_id[tile_id]
        mask_ids = masks_per_tile[tile_id]
        cost = tile_cost(tile, [mask_boxes[m] for m in sorted(mask_ids)])
        candidates.append(
            TileChoice(
                tile=tile,
                covered_masks=frozenset(mask_ids),
                cost=cost,
                degraded=tile_id in degraded_tiles,
            )
        )

    chosen = greedy_mcmsc(universe, candidates) if universe else []
    all_dims = state.scale_sets[cam].all_dims
    rank = {dim: i for i, dim in enumerate(all_dims)}
    chosen = [
        attach_bounds(c, rank[c.tile.scale_dim], len(all_dims), cfg.profile) for c in chosen
    ]
    items = [
        PackItem(
            ref=(cam, c.tile.tile_id),
            src_bbox=c.tile.bbox,
            min_scale=c.min_scale,
            max_scale=c.max_scale,
            elasticity=c.elasticity,
        )
        for c in chosen
    ]
    return items, chosen, mask_boxes, n_degraded


def run_mos_step(
    scenario: Scenario,
    frame_idx: int,
    state: MosState,
    cfg: PipelineConfig,
    detector: MockDetector,
) -> MosStepResult:
    """One multiplexed frame across all active cameras."""
    stats = RunStats()
    cams = list(state.active_cameras)
    rasters = {cam: scenario.render(cam, frame_idx) for cam in cams}

    t0 = time.perf_counter()
    threads = worker_count()
    if threads > 1 and len(cams) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stage_out = list(
                pool.map(
                    lambda cam: _camera_stage(
                        scenario, cam, frame_idx, rasters[cam], state, cfg
                    ),
                    cams,
                )
            )
    else:
        stage_out = [
            _camera_stage(scenario, cam, frame_idx, rasters[cam], state, cfg)
            for cam in cams
        ]

    items: list[PackItem] = []
    chosen: list[TileChoice] = []
    masks_by_cam: dict[int, list] = {}
    for cam, (cam_items, cam_chosen, cam_masks, n_degraded) in zip(cams, stage_out):
        items.extend(cam_items)
        chosen.extend(cam_chosen)
        masks_by_cam[cam] = cam_masks
        stats.degraded_assignments += n_degraded

    de = replace(
        cfg.de_params, seed=(cfg.de_params.seed * 1_000_003 + frame_idx) % (2**31)
    )
    layout = _pack_with_admission(items, cfg, de, state, stats)

    frame = compose(layout, rasters)
    construction = time.perf_counter() - t0
    stats.construction_times.append(construction)
    stats.frames_mos += 1
    if layout.relaxed:
        stats.relaxation_events += 1
    stats.utilizations.append(packing_stats(layout, chosen).utilization)

    gt_by_cam = {cam: scenario.gt(cam, frame_idx) for cam in state.active_cameras}
    canvas_dets = detector.detect_canvas(frame, gt_by_cam, frame_idx=frame_idx)
    per_camera, dropped = translate_back(canvas_dets, frame)
    stats.dropped_detections += dropped
    detections = dedupe(per_camera)
    for cam in cams:
        detections.setdefault(cam, [])

    placed_by_cam: dict[int, list] = {}
    for p in layout.placements:
        placed_by_cam.setdefault(p.ref[0], []).append(p.src_bbox)
    for cam in state.active_cameras:
        placed = placed_by_cam.get(cam, [])
        for mask in masks_by_cam[cam]:
            if mask.area <= 0:
                continue
            if not any(mask.intersects(b) for b in placed):
                stats.coverage_violations += 1

    state.prev_frame.update(rasters)
    return MosStepResult(
        detections=detections,
        frame=frame,
        chosen=chosen,
        construction_s=construction,
        stats=stats,
    )


def _pack_with_admission(
    items: list[PackItem],
    cfg: PipelineConfig,
    de: DEParams,
    state: MosState,
    stats: RunStats,
) -> CanvasLayout:
    """Pack, shedding the highest camera on failure unless strict."""
    if not items:
        return CanvasLayout(canvas_side=cfg.canvas_side)
    work = items
    while True:
        try:
            return inverse_bin_pack(work, cfg.canvas_side, de)
        except AdmissionControlError:
            if cfg.strict or len(state.active_cameras) <= 1:
                raise
            shed = state.active_cameras[-1]
            state.active_cameras = state.active_cameras[:-1]
            stats.admission_events += 1
            work = [it for it in work if it.ref[0] != shed]
            if not work:
                return CanvasLayout(canvas_side=cfg.canvas_side)


@dataclass(frozen=True)
class CameraFeasibility:
    cameras: int
    median_construction_s: float
    batch_construction_s: float
    relaxed: bool
    admitted: bool


def compute_max_cameras(
    cfg: PipelineConfig,
    scenario: Scenario,
    detector: MockDetector,
    probe_frames: int = 8,
) -> tuple[int, list[CameraFeasibility]]:
    """Largest M whose probe satisfies the budget and sizing constraints.

    Feasible means: b-frame construction time within the construction
    budget, and packing succeeded on every probe frame without touching
    the bound relaxation path.
    """
    report: list[CameraFeasibility] = []
    m_max = 0
    budget = cfg.budget()
    for m in range(1, scenario.n_cameras + 1):
        sub = replace(cfg, cameras=m, strict=True)
        cams = list(range(m))
        ps_end = min(sub.ps_frames, scenario.n_frames - 1)
        try:
            ps = run_ps_cycle(scenario, cams, list(range(ps_end)), sub, detector)
        except ValueError:
            break
        times: list[float] = []
        relaxed = False
        admitted = True
        last = min(scenario.n_frames, ps_end + probe_frames)
        for idx in range(ps_end, last):
            try:
                step = run_mos_step(scenario, idx, ps.state, sub, detector)
            except AdmissionControlError:
                admitted = False
                break
            times.append(step.construction_s)
            relaxed = relaxed or step.stats.relaxation_events > 0
        median = sorted(times)[len(times) // 2] if times else float("inf")
        batch_time = median * sub.batch
        feasible = admitted and not relaxed and batch_time <= budget
        report.append(
            CameraFeasibility(
                cameras=m,
                median_construction_s=median,
                batch_construction_s=batch_time,
                relaxed=relaxed,
                admitted=admitted,
            )
        )
        if feasible:
            m_max = m
    return m_max, report
