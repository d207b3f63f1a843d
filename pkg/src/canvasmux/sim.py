"""Synthetic multi-camera scenarios and size-sensitive mock perception.

The mock detector keys off ground-truth geometry rather than raster
content: detectability ramps with the rendered object height and never
improves past the native height. That isolates the effect of how the
packing pipeline sizes and places objects, which is the quantity under
test, from raster detail that a real DNN would consume.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .canvas import CanvasFrame, Detection, to_canvas_box
from .geometry import Affine2D, BBox
from .motion import GrayFrame

BACKGROUND_VALUE = 60
SCENARIO_SCHEMA_VERSION = 1

DEFAULT_H0 = 12.0
DEFAULT_H1 = 32.0
DEFAULT_P_MAX = 0.98
DEFAULT_H_OCR = 16.0
MIN_VISIBLE_WIDTH_FRAC = 0.34
MIN_VISIBLE_AREA = 4.0


@dataclass(frozen=True)
class GTObject:
    object_id: int
    class_label: str
    bbox: BBox
    plate_text: Optional[str] = None

    @property
    def plate_bbox(self) -> Optional[BBox]:
        """Plate strip of a vehicle: bottom-centered, 12% of object height."""
        if self.plate_text is None:
            return None
        b = self.bbox
        ph = max(0.12 * b.height, 1.0)
        pw = max(0.35 * b.width, 1.0)
        cx = 0.5 * (b.x_min + b.x_max)
        return BBox(cx - pw / 2.0, b.y_max - 1.5 * ph, cx + pw / 2.0, b.y_max - 0.5 * ph)


@dataclass(frozen=True)
class CameraMeta:
    camera_id: int
    width: int
    height: int
    fps: float


@dataclass
class Scenario:
    """Per-camera ground truth plus deterministic rendering of gray frames."""

    cameras: list[CameraMeta]
    # frames[camera_id][frame_idx] -> objects visible in that frame
    frames: list[list[list[GTObject]]]
    # egos[camera_id][frame_idx] -> transform from frame idx-1 to frame idx
    egos: list[list[Affine2D]]
    seed: int
    preset: str = "custom"

    @property
    def n_frames(self) -> int:
        return min(len(f) for f in self.frames) if self.frames else 0

    @property
    def n_cameras(self) -> int:
        return len(self.cameras)

    def gt(self, camera_id: int, frame_idx: int) -> list[GTObject]:
        return self.frames[camera_id][frame_idx]

    def ego(self, camera_id: int, frame_idx: int) -> Affine2D:
        return self.egos[camera_id][frame_idx]

    def render(self, camera_id: int, frame_idx: int) -> GrayFrame:
        """Flat background plus block-textured object rectangles.

        The texture rides with each object (anchored to its box origin) so
        frame differencing of a moving object fires across the whole union
        of its old and new footprint, as it would for real imagery. The
        block contrast (50) and object-background contrast (>= 40) both
        clear the default differencing threshold.
        """
        cam = self.cameras[camera_id]
        frame = np.full((cam.height, cam.width), BACKGROUND_VALUE, dtype=np.uint8)
        for obj in self.gt(camera_id, frame_idx):
            b = obj.bbox
            x0, y0 = int(round(b.x_min)), int(round(b.y_min))
            x1 = min(int(round(b.x_max)), cam.width)
            y1 = min(int(round(b.y_max)), cam.height)
            xs, ys = max(0, x0), max(0, y0)
            if x1 <= xs or y1 <= ys:
                continue
            base = 100 + (37 * obj.object_id) % 70
            uu = (np.arange(xs, x1) - x0) // 4
            vv = (np.arange(ys, y1) - y0) // 4
            parity = (vv[:, None] + uu[None, :]) % 2
            frame[ys:y1, xs:x1] = (base + 50 * parity).astype(np.uint8)
            pb = obj.plate_bbox
            if pb is not None:
                frame[
                    max(0, int(round(pb.y_min))) : int(round(pb.y_max)),
                    max(0, int(round(pb.x_min))) : int(round(pb.x_max)),
                ] = 235
        return frame

    def ego_correspondences(
        self,
        camera_id: int,
        frame_idx: int,
        n_points: int = 16,
        noise_px: float = 0.3,
        outlier_frac: float = 0.1,
    ) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        """Seeded keypoint matches from frame idx-1 to idx (with outliers).

        Stands in for real feature matching; the transform behind the
        matches is the scenario's known ego motion.
        """
        cam = self.cameras[camera_id]
        ego = self.ego(camera_id, frame_idx)
        rng = np.random.default_rng((self.seed, camera_id, frame_idx, 0xE90))
        xs = rng.uniform(0, cam.width, n_points)
        ys = rng.uniform(0, cam.height, n_points)
        out = []
        for x, y in zip(xs, ys):
            tx, ty = ego.apply_point(float(x), float(y))
            if rng.random() < outlier_frac:
                tx += rng.uniform(20, 80) * (1 if rng.random() < 0.5 else -1)
                ty += rng.uniform(20, 80) * (1 if rng.random() < 0.5 else -1)
            else:
                tx += rng.normal(0, noise_px)
                ty += rng.normal(0, noise_px)
            out.append(((float(x), float(y)), (float(tx), float(ty))))
        return out


@dataclass(frozen=True)
class ObjectClassSpec:
    label: str
    count_per_camera: int
    # Each object draws (w, h) near one of these (w, h, sigma) size modes.
    size_modes: tuple[tuple[float, float, float], ...]
    speed_range: tuple[float, float]
    stationary_frac: float = 0.0
    plate_frac: float = 0.0
    mode_weights: Optional[tuple[float, ...]] = None  # None: uniform


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n_cameras: int
    frame_dims: tuple[int, int]
    fps: float
    duration_s: float
    classes: tuple[ObjectClassSpec, ...]
    ego_amplitude: float = 0.0  # px per frame camera pan (translation only)

    @property
    def n_frames(self) -> int:
        return max(2, int(round(self.fps * self.duration_s)))


def okutama_like(
    n_cameras: int = 6,
    frame_dims: tuple[int, int] = (3840, 2160),
    fps: float = 10.0,
    duration_s: float = 20.0,
) -> ScenarioSpec:
    """Drone-style pedestrian streams whose object-size mixture has three
    modes matching the (36,39)/(50,54)/(81,44) px clusters."""
    # Distant pedestrians dominate a drone's field of view, so the two
    # small size modes carry most of the probability mass; that population
    # shape is also what makes the elbow resolve all three modes.
    person = ObjectClassSpec(
        label="person",
        count_per_camera=9,
        size_modes=((36.0, 39.0, 2.0), (50.0, 54.0, 2.5), (81.0, 44.0, 3.0)),
        speed_range=(1.0, 4.0),
        stationary_frac=0.3,
        mode_weights=(0.4, 0.4, 0.2),
    )
    return ScenarioSpec(
        name="okutama-like",
        n_cameras=n_cameras,
        frame_dims=frame_dims,
        fps=fps,
        duration_s=duration_s,
        classes=(person,),
        ego_amplitude=0.5,
    )


def ufpr_like(
    n_cameras: int = 3,
    frame_dims: tuple[int, int] = (1920, 1080),
    fps: float = 10.0,
    duration_s: float = 20.0,
) -> ScenarioSpec:
    """Street-level vehicle streams; every vehicle carries a license plate.

    Plate strips run 12% of vehicle height, so the 105-135 px vehicles
    carry 12-17 px plates: legible near native size, hopeless after a
    3x uniform downscale of the full frame. Object counts keep the
    summed tile area for three cameras inside one canvas at the no-shrink
    bounds OCR requires.
    """
    car = ObjectClassSpec(
        label="car",
        count_per_camera=2,
        size_modes=((132.0, 118.0, 4.0),),
        speed_range=(2.0, 6.0),
        stationary_frac=0.25,
        plate_frac=1.0,
    )
    motorcycle = ObjectClassSpec(
        label="motorcycle",
        count_per_camera=1,
        size_modes=((76.0, 104.0, 5.0),),
        speed_range=(3.0, 7.0),
        stationary_frac=0.0,
        plate_frac=1.0,
    )
    return ScenarioSpec(
        name="ufpr-like",
        n_cameras=n_cameras,
        frame_dims=frame_dims,
        fps=fps,
        duration_s=duration_s,
        classes=(car, motorcycle),
        ego_amplitude=0.0,
    )


PRESETS = {"okutama-like": okutama_like, "ufpr-like": ufpr_like}


def _random_plate(rng: np.random.Generator) -> str:
    letters = "".join(rng.choice(list(string.ascii_uppercase), 3))
    digits = "".join(rng.choice(list(string.digits), 4))
    return letters + digits


def generate_scenario(spec: ScenarioSpec, seed: int) -> Scenario:
    """Seeded random-walk scenario; identical seeds give identical output."""
    if spec.n_cameras < 1:
        raise ValueError("need at least one camera")
    w, h = spec.frame_dims
    if w < 64 or h < 64:
        raise ValueError("frame dims too small")
    rng = np.random.default_rng((seed, 0x5CE9))
    n_frames = spec.n_frames

    cameras = [CameraMeta(m, w, h, spec.fps) for m in range(spec.n_cameras)]
    frames: list[list[list[GTObject]]] = []
    egos: list[list[Affine2D]] = []
    next_object_id = 0

    for cam in range(spec.n_cameras):
        # Camera pan: bounded random walk in world coordinates.
        offsets = [(0.0, 0.0)]
        for _ in range(1, n_frames):
            ox, oy = offsets[-1]
            if spec.ego_amplitude > 0:
                ox += float(rng.uniform(-spec.ego_amplitude, spec.ego_amplitude))
                oy += float(rng.uniform(-spec.ego_amplitude, spec.ego_amplitude))
                bound = 40.0
                ox = min(max(ox, -bound), bound)
                oy = min(max(oy, -bound), bound)
            offsets.append((ox, oy))
        cam_egos = [Affine2D.identity()]
        for i in range(1, n_frames):
            dx = offsets[i][0] - offsets[i - 1][0]
            dy = offsets[i][1] - offsets[i - 1][1]
            cam_egos.append(Affine2D.translation(-dx, -dy))

        # Object trajectories in world coordinates (reflecting walls).
        trajs = []
        for cls in spec.classes:
            weights = None
            if cls.mode_weights is not None:
                w_arr = np.asarray(cls.mode_weights, dtype=float)
                weights = w_arr / w_arr.sum()
            for _ in range(cls.count_per_camera):
                mode_idx = int(rng.choice(len(cls.size_modes), p=weights))
                mode = cls.size_modes[mode_idx]
                ow = max(4.0, float(rng.normal(mode[0], mode[2])))
                oh = max(4.0, float(rng.normal(mode[1], mode[2])))
                stationary = bool(rng.random() < cls.stationary_frac)
                speed = 0.0 if stationary else float(rng.uniform(*cls.speed_range))
                theta = float(rng.uniform(0, 2 * math.pi))
                vx, vy = speed * math.cos(theta), speed * math.sin(theta)
                cx = float(rng.uniform(ow / 2, w - ow / 2))
                cy = float(rng.uniform(oh / 2, h - oh / 2))
                plate = (
                    _random_plate(rng) if rng.random() < cls.plate_frac else None
                )
                centers = []
                for _ in range(n_frames):
                    centers.append((cx, cy))
                    cx += vx
                    cy += vy
                    if cx < ow / 2 or cx > w - ow / 2:
                        vx = -vx
                        cx = min(max(cx, ow / 2), w - ow / 2)
                    if cy < oh / 2 or cy > h - oh / 2:
                        vy = -vy
                        cy = min(max(cy, oh / 2), h - oh / 2)
                trajs.append((next_object_id, cls.label, ow, oh, plate, centers))
                next_object_id += 1

        cam_frames: list[list[GTObject]] = []
        for i in range(n_frames):
            ox, oy = offsets[i]
            visible: list[GTObject] = []
            for obj_id, label, ow, oh, plate, centers in trajs:
                cx, cy = centers[i]
                box = BBox(
                    cx - ow / 2 - ox, cy - oh / 2 - oy, cx + ow / 2 - ox, cy + oh / 2 - oy
                )
                clipped = box.clip_to(BBox(0, 0, w, h))
                if clipped.width < 2 or clipped.height < 2:
                    continue
                visible.append(GTObject(obj_id, label, clipped, plate))
            cam_frames.append(visible)
        frames.append(cam_frames)
        egos.append(cam_egos)

    return Scenario(cameras=cameras, frames=frames, egos=egos, seed=seed, preset=spec.name)


# ---------------------------------------------------------------------------
# Scenario file round-trip (line-delimited JSON, one record per camera frame)
# ---------------------------------------------------------------------------


def save_scenario(scenario: Scenario, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "type": "scenario_header",
            "version": SCENARIO_SCHEMA_VERSION,
            "seed": scenario.seed,
            "preset": scenario.preset,
            "cameras": [
                {"camera_id": c.camera_id, "width": c.width, "height": c.height, "fps": c.fps}
                for c in scenario.cameras
            ],
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for cam in scenario.cameras:
            for idx in range(len(scenario.frames[cam.camera_id])):
                ego = scenario.ego(cam.camera_id, idx)
                record = {
                    "camera_id": cam.camera_id,
                    "frame_idx": idx,
                    "ego": [ego.scale, ego.rotation, ego.tx, ego.ty],
                    "objects": [
                        {
                            "id": o.object_id,
                            "class": o.class_label,
                            "bbox": list(o.bbox.as_tuple()),
                            **({"plate": o.plate_text} if o.plate_text else {}),
                        }
                        for o in scenario.gt(cam.camera_id, idx)
                    ],
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("type") != "scenario_header":
            raise ValueError("scenario file missing header record")
        cameras = [
            CameraMeta(c["camera_id"], c["width"], c["height"], c["fps"])
            for c in header["cameras"]
        ]
        frames: dict[tuple[int, int], list[GTObject]] = {}
        egos: dict[tuple[int, int], Affine2D] = {}
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            key = (rec["camera_id"], rec["frame_idx"])
            egos[key] = Affine2D(*rec["ego"])
            frames[key] = [
                GTObject(
                    o["id"], o["class"], BBox(*o["bbox"]), o.get("plate")
                )
                for o in rec["objects"]
            ]
    n_frames = max(k[1] for k in frames) + 1 if frames else 0
    frame_lists = [
        [frames.get((c.camera_id, i), []) for i in range(n_frames)] for c in cameras
    ]
    ego_lists = [
        [egos.get((c.camera_id, i), Affine2D.identity()) for i in range(n_frames)]
        for c in cameras
    ]
    return Scenario(
        cameras=cameras,
        frames=frame_lists,
        egos=ego_lists,
        seed=header["seed"],
        preset=header.get("preset", "custom"),
    )


# ---------------------------------------------------------------------------
# Mock perception models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorModel:
    """Piecewise-linear size-vs-detectability ramp.

    Objects below ``h0`` rendered pixels are never detected; detectability
    grows linearly to ``p_max`` at ``h1`` and saturates there. Upscaling
    past the native height adds no information (the caller clamps).
    """

    h0: float = DEFAULT_H0
    h1: float = DEFAULT_H1
    p_max: float = DEFAULT_P_MAX
    deterministic: bool = False
    jitter_frac: float = 0.02
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.h0 < self.h1:
            raise ValueError("need 0 < h0 < h1")
        if not 0 < self.p_max <= 1:
            raise ValueError("p_max must be in (0, 1]")

    def detect_probability(self, h_eff: float) -> float:
        if h_eff < self.h0:
            return 0.0
        if h_eff >= self.h1:
            return self.p_max
        return self.p_max * (h_eff - self.h0) / (self.h1 - self.h0)


class MockDetector:
    """Geometry-driven detector operating on composed canvas frames."""

    def __init__(self, model: DetectorModel):
        self.model = model

    def rng_for_frame(self, frame_idx: int) -> np.random.Generator:
        return np.random.default_rng((self.model.seed, frame_idx, 0xDE7))

    def detect_canvas(
        self,
        frame: CanvasFrame,
        gt_by_camera: dict[int, Sequence[GTObject]],
        frame_idx: int = 0,
    ) -> list[Detection]:
        """Canvas-coordinate detections for the ground truth visible in bins."""
        rng = self.rng_for_frame(frame_idx)
        dets: list[Detection] = []
        for p in frame.layout.placements:
            for obj in gt_by_camera.get(p.ref[0], ()):
                visible = obj.bbox.intersection(p.src_bbox)
                if visible is None or visible.area < MIN_VISIBLE_AREA:
                    continue
                if visible.width < MIN_VISIBLE_WIDTH_FRAC * obj.bbox.width:
                    continue
                h_eff = min(visible.height * p.sy, obj.bbox.height)
                prob = self.model.detect_probability(h_eff)
                if self.model.deterministic:
                    emit = h_eff >= self.model.h0
                else:
                    emit = rng.random() < prob
                if not emit:
                    continue
                canvas_box = to_canvas_box(p, visible)
                jittered = self._jitter(canvas_box, rng).clip_to(p.canvas_box)
                if jittered.width <= 0 or jittered.height <= 0:
                    continue
                dets.append(
                    Detection(
                        bbox=jittered,
                        class_label=obj.class_label,
                        confidence=prob,
                        render_scale=p.sy,
                    )
                )
        return dets

    def _jitter(self, box: BBox, rng: np.random.Generator) -> BBox:
        sx = self.model.jitter_frac * box.width
        sy = self.model.jitter_frac * box.height
        dx0, dx1 = rng.normal(0, sx, 2) if sx > 0 else (0.0, 0.0)
        dy0, dy1 = rng.normal(0, sy, 2) if sy > 0 else (0.0, 0.0)
        x0, x1 = box.x_min + dx0, box.x_max + dx1
        y0, y1 = box.y_min + dy0, box.y_max + dy1
        return BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def mock_ocr(
    render_height: float,
    gt_text: str,
    h_ocr: float = DEFAULT_H_OCR,
    rng: Optional[np.random.Generator] = None,
) -> str:
    """Plate text as a function of the rendered plate height.

    Full height reads perfectly; below half of ``h_ocr`` nothing is
    legible; in between, a height-proportional fraction of characters is
    corrupted (rounded up).
    """
    if render_height >= h_ocr:
        return gt_text
    if render_height <= h_ocr / 2.0:
        return ""
    if rng is None:
        rng = np.random.default_rng(0)
    frac = min(max((h_ocr - render_height) / h_ocr, 0.0), 1.0)
    n_bad = math.ceil(frac * len(gt_text))
    positions = rng.choice(len(gt_text), size=min(n_bad, len(gt_text)), replace=False)
    alphabet = string.ascii_uppercase + string.digits
    chars = list(gt_text)
    for pos in sorted(int(p) for p in positions):
        original = chars[pos]
        candidates = [c for c in alphabet if c != original]
        chars[pos] = candidates[int(rng.integers(len(candidates)))]
    return "".join(chars)
