import dataclasses

import pytest

from canvasmux.motion import TrackStatus
from canvasmux.packer import AdmissionControlError
from canvasmux.pipeline import (
    PipelineConfig,
    compute_max_cameras,
    default_batch_latency,
    effective_throughput,
    run_mos_step,
    run_ps_cycle,
)
from canvasmux.scales import ScaleSet
from canvasmux.sim import (
    DetectorModel,
    MockDetector,
    ObjectClassSpec,
    ScenarioSpec,
    generate_scenario,
    okutama_like,
    ufpr_like,
)


def static_scene_spec(n_objects=3, dims=(480, 320)):
    cls = ObjectClassSpec(
        label="person",
        count_per_camera=n_objects,
        size_modes=((40.0, 44.0, 2.0),),
        speed_range=(1.0, 2.0),
        stationary_frac=1.0,
    )
    return ScenarioSpec(
        name="static", n_cameras=1, frame_dims=dims, fps=10, duration_s=3.0, classes=(cls,)
    )


class TestEffectiveThroughput:
    def test_paper_configuration_m6(self):
        cfg = PipelineConfig(cameras=6, batch=4, batch_latency=0.170)
        t = effective_throughput(cfg)
        assert t.canvas_fps == 24.0
        assert t.ps_delay == pytest.approx(2.5)
        assert t.per_camera_fps == pytest.approx(22.333, abs=0.001)
        assert t.cfps == pytest.approx(134.0, abs=0.01)

    def test_m3_cumulative(self):
        cfg = PipelineConfig(cameras=3, batch=4, batch_latency=0.170)
        t = effective_throughput(cfg)
        assert t.cfps == pytest.approx(70.0, abs=0.01)

    def test_no_stabilization_equals_canvas_rate(self):
        cfg = PipelineConfig(cameras=6, batch=4, batch_latency=0.170, ps_frames=0)
        t = effective_throughput(cfg)
        assert t.per_camera_fps == t.canvas_fps

    def test_monotone_in_cameras_and_ps_frames(self):
        base = PipelineConfig(cameras=1, batch=4, batch_latency=0.170)
        prev = None
        for m in range(1, 9):
            v = effective_throughput(base, cameras=m).per_camera_fps
            if prev is not None:
                assert v <= prev
            prev = v
        prev = None
        for ps in range(0, 30, 5):
            cfg = dataclasses.replace(base, cameras=6, ps_frames=ps)
            v = effective_throughput(cfg).per_camera_fps
            if prev is not None:
                assert v <= prev
            prev = v

    def test_overlong_stabilization_rejected(self):
        cfg = PipelineConfig(cameras=6, batch=1, batch_latency=1.0, ps_frames=10, ps_period_s=30)
        # canvas_fps = 1: ps_delay 60 s > 30 s period.
        with pytest.raises(ValueError):
            effective_throughput(cfg)

    def test_latency_table_seeds(self):
        assert default_batch_latency(640, 4) == pytest.approx(0.170)
        assert default_batch_latency(640, 1) == pytest.approx(1 / 19)
        # Smaller canvases are faster, larger slower.
        assert default_batch_latency(320, 4) < 0.170 < default_batch_latency(960, 4)


class TestRunPsCycle:
    def test_static_scene_all_stationary(self):
        scenario = generate_scenario(static_scene_spec(), seed=2)
        cfg = PipelineConfig(cameras=1)
        det = MockDetector(DetectorModel(deterministic=True, seed=2))
        ps = run_ps_cycle(scenario, [0], list(range(10)), cfg, det)
        tracker = ps.state.trackers[0]
        n_objects = len(scenario.gt(0, 0))
        assert len(tracker.tracks) == n_objects
        assert all(t.status is TrackStatus.STATIONARY for t in tracker.tracks)

    def test_okutama_camera_reproduces_worked_scales(self):
        spec = okutama_like(n_cameras=6, frame_dims=(960, 540), fps=10, duration_s=2.0)
        scenario = generate_scenario(spec, seed=7)
        cfg = PipelineConfig(cameras=6)
        det = MockDetector(DetectorModel(seed=7))
        ps = run_ps_cycle(scenario, list(range(6)), list(range(10)), cfg, det)
        expected = ScaleSet((64, 96), 128)
        hits = sum(1 for cam in range(6) if ps.state.scale_sets[cam] == expected)
        assert hits >= 3  # the size mixture resolves to {64, 96}+128 typically

    def test_zero_detections_fallback_scales(self):
        cls = ObjectClassSpec(
            label="person",
            count_per_camera=0,
            size_modes=((40.0, 40.0, 1.0),),
            speed_range=(1.0, 2.0),
        )
        spec = ScenarioSpec(
            name="empty", n_cameras=1, frame_dims=(480, 320), fps=10, duration_s=2.0, classes=(cls,)
        )
        scenario = generate_scenario(spec, seed=0)
        cfg = PipelineConfig(cameras=1)
        det = MockDetector(DetectorModel(seed=0))
        ps = run_ps_cycle(scenario, [0], list(range(10)), cfg, det)
        assert ps.state.scale_sets[0] == ScaleSet((), 128)

    def test_ps_detections_recorded_per_frame(self):
        scenario = generate_scenario(static_scene_spec(), seed=2)
        cfg = PipelineConfig(cameras=1)
        det = MockDetector(DetectorModel(deterministic=True, seed=2))
        ps = run_ps_cycle(scenario, [0], list(range(5)), cfg, det)
        assert set(ps.detections) == {(0, i) for i in range(5)}
        assert all(len(v) >= 1 for v in ps.detections.values())


class TestRunMosStep:
    def _prepared(self, spec, seed=3, cams=None, **cfg_kw):
        scenario = generate_scenario(spec, seed=seed)
        cams = cams or list(range(scenario.n_cameras))
        cfg = PipelineConfig(cameras=len(cams), **cfg_kw)
        det = MockDetector(DetectorModel(deterministic=True, seed=seed))
        ps = run_ps_cycle(scenario, cams, list(range(10)), cfg, det)
        return scenario, cfg, det, ps

    def test_single_camera_single_object_detected_near_gt(self):
        cls = ObjectClassSpec(
            label="person",
            count_per_camera=1,
            size_modes=((40.0, 44.0, 1.0),),
            speed_range=(2.0, 3.0),
            stationary_frac=0.0,
        )
        spec = ScenarioSpec(
            name="one", n_cameras=1, frame_dims=(480, 320), fps=10, duration_s=3.0, classes=(cls,)
        )
        scenario, cfg, det, ps = self._prepared(spec)
        step = run_mos_step(scenario, 11, ps.state, cfg, det)
        assert len(step.frame.layout.placements) >= 1
        dets = step.detections[0]
        assert len(dets) >= 1
        gt = scenario.gt(0, 11)[0]
        gx, gy = gt.bbox.center
        dx, dy = dets[0].bbox.center
        # Jitter is 2% of box size; centers must land within a few px.
        assert abs(gx - dx) < 6 and abs(gy - dy) < 6

    def test_no_objects_empty_layout_and_detections(self):
        cls = ObjectClassSpec(
            label="person", count_per_camera=0, size_modes=((40.0, 40.0, 1.0),), speed_range=(1, 2)
        )
        spec = ScenarioSpec(
            name="none", n_cameras=2, frame_dims=(480, 320), fps=10, duration_s=3.0, classes=(cls,)
        )
        scenario, cfg, det, ps = self._prepared(spec)
        step = run_mos_step(scenario, 11, ps.state, cfg, det)
        assert step.frame.layout.placements == []
        assert all(len(v) == 0 for v in step.detections.values())

    def test_stationary_object_still_tiled_without_motion(self):
        scenario, cfg, det, ps = self._prepared(static_scene_spec())
        step = run_mos_step(scenario, 11, ps.state, cfg, det)
        # No motion at all, yet stationary tracks must produce coverage.
        n_objects = len(scenario.gt(0, 11))
        assert len(step.frame.layout.placements) >= 1
        assert len(step.detections[0]) == n_objects

    def test_mask_coverage_audit_clean_over_run(self):
        spec = okutama_like(n_cameras=2, frame_dims=(640, 360), fps=10, duration_s=4.0)
        scenario, cfg, det, ps = self._prepared(spec, seed=5, cams=[0, 1])
        violations = 0
        for idx in range(10, scenario.n_frames):
            step = run_mos_step(scenario, idx, ps.state, cfg, det)
            violations += step.stats.coverage_violations
        assert violations == 0

    def test_strict_mode_propagates_admission_error(self):
        cls = ObjectClassSpec(
            label="bus",
            count_per_camera=4,
            size_modes=((600.0, 500.0, 10.0),),
            speed_range=(2.0, 3.0),
        )
        spec = ScenarioSpec(
            name="jam", n_cameras=3, frame_dims=(1280, 720), fps=10, duration_s=3.0, classes=(cls,)
        )
        scenario, cfg, det, ps = self._prepared(spec, seed=1, profile="ocr", strict=True)
        with pytest.raises(AdmissionControlError):
            for idx in range(10, scenario.n_frames):
                run_mos_step(scenario, idx, ps.state, cfg, det)

    def test_non_strict_sheds_highest_camera(self):
        # Two 480 px tiles fill most of the canvas: one camera packs (with
        # relaxation), two cannot even fully relaxed, so cameras shed.
        cls = ObjectClassSpec(
            label="bus",
            count_per_camera=2,
            size_modes=((470.0, 430.0, 5.0),),
            speed_range=(2.0, 3.0),
        )
        spec = ScenarioSpec(
            name="jam", n_cameras=3, frame_dims=(1280, 720), fps=10, duration_s=3.0, classes=(cls,)
        )
        scenario, cfg, det, ps = self._prepared(spec, seed=1, profile="ocr")
        before = list(ps.state.active_cameras)
        step = run_mos_step(scenario, 10, ps.state, cfg, det)
        assert step.stats.admission_events >= 1
        assert len(ps.state.active_cameras) < len(before)
        assert ps.state.active_cameras == before[: len(ps.state.active_cameras)]
        step.frame.layout.validate()


class TestWorkerParallelism:
    def test_thread_count_does_not_change_results(self, monkeypatch):
        spec = okutama_like(n_cameras=3, frame_dims=(480, 270), fps=10, duration_s=3.0)
        scenario = generate_scenario(spec, seed=6)
        cfg = PipelineConfig(cameras=3)

        def run_with(threads):
            monkeypatch.setenv("MOSAIC_THREADS", str(threads))
            det = MockDetector(DetectorModel(seed=6))
            ps = run_ps_cycle(scenario, [0, 1, 2], list(range(10)), cfg, det)
            out = []
            for idx in range(10, scenario.n_frames):
                step = run_mos_step(scenario, idx, ps.state, cfg, det)
                out.append(
                    [
                        (d.bbox.as_tuple(), d.confidence, d.class_label)
                        for cam in sorted(step.detections)
                        for d in step.detections[cam]
                    ]
                )
            return out

        assert run_with(1) == run_with(4)


class TestComputeMaxCameras:
    def test_zero_budget_supports_nothing(self):
        spec = okutama_like(n_cameras=2, frame_dims=(640, 360), fps=10, duration_s=3.0)
        scenario = generate_scenario(spec, seed=4)
        cfg = PipelineConfig(cameras=2, construction_budget=1e-9)
        det = MockDetector(DetectorModel(seed=4))
        m_max, report = compute_max_cameras(cfg, scenario, det, probe_frames=3)
        assert m_max == 0
        assert all(not (r.batch_construction_s <= 1e-9) for r in report)

    def test_generous_budget_admits_all_cameras(self):
        spec = okutama_like(n_cameras=3, frame_dims=(640, 360), fps=10, duration_s=3.0)
        scenario = generate_scenario(spec, seed=4)
        cfg = PipelineConfig(cameras=3, construction_budget=60.0)
        det = MockDetector(DetectorModel(seed=4))
        m_max, report = compute_max_cameras(cfg, scenario, det, probe_frames=3)
        assert m_max == 3
        assert len(report) == 3

    def test_ocr_profile_supports_fewer_cameras_than_detection(self):
        spec = ufpr_like(n_cameras=6, fps=10, duration_s=3.0)
        scenario = generate_scenario(spec, seed=11)
        det = MockDetector(DetectorModel(seed=11))
        common = dict(construction_budget=60.0, overlap=0.7)
        m_ocr, _ = compute_max_cameras(
            PipelineConfig(cameras=6, profile="ocr", **common), scenario, det, probe_frames=4
        )
        m_det, _ = compute_max_cameras(
            PipelineConfig(cameras=6, profile="detection", **common), scenario, det, probe_frames=4
        )
        assert m_ocr < m_det
