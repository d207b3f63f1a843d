import numpy as np
import pytest

from canvasmux.canvas import (
    GUTTER_VALUE,
    CanvasFrame,
    Detection,
    compose,
    dedupe,
    resize_bilinear,
    to_canvas_box,
    to_source_box,
    translate_back,
)
from canvasmux.geometry import BBox
from canvasmux.packer import CanvasLayout, Placement


def bilinear_oracle(src, out_w, out_h):
    """Scalar reference resampler: half-pixel centers, clamped edges."""
    in_h, in_w = src.shape
    out = np.zeros((out_h, out_w), dtype=np.float64)
    for oy in range(out_h):
        for ox in range(out_w):
            sy = (oy + 0.5) * in_h / out_h - 0.5
            sx = (ox + 0.5) * in_w / out_w - 0.5
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            fy = sy - y0
            fx = sx - x0
            y0c = min(max(y0, 0), in_h - 1)
            y1c = min(max(y0 + 1, 0), in_h - 1)
            x0c = min(max(x0, 0), in_w - 1)
            x1c = min(max(x0 + 1, 0), in_w - 1)
            top = src[y0c, x0c] * (1 - fx) + src[y0c, x1c] * fx
            bot = src[y1c, x0c] * (1 - fx) + src[y1c, x1c] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return out


class TestResizeBilinear:
    def test_identity(self):
        rng = np.random.default_rng(0)
        src = rng.integers(0, 255, (13, 17)).astype(np.uint8)
        assert np.array_equal(resize_bilinear(src, 17, 13), src)

    def test_checker_downscale_is_mean(self):
        src = np.array([[0, 255], [255, 0]], dtype=np.uint8)
        out = resize_bilinear(src, 1, 1)
        assert out.shape == (1, 1)
        assert out[0, 0] == np.rint(bilinear_oracle(src, 1, 1))[0, 0] == 128

    def test_matches_scalar_oracle(self):
        # The implementation interpolates y-first; the oracle x-first. The
        # two differ only by float ulps, which can flip rounding exactly at
        # .5 boundaries, so those pixels may differ by one intensity level.
        rng = np.random.default_rng(4)
        for _ in range(25):
            in_h, in_w = (int(v) for v in rng.integers(2, 24, 2))
            out_h, out_w = (int(v) for v in rng.integers(1, 30, 2))
            src = rng.integers(0, 255, (in_h, in_w)).astype(np.uint8)
            got = resize_bilinear(src, out_w, out_h).astype(int)
            want_float = bilinear_oracle(src, out_w, out_h)
            want = np.rint(want_float).astype(int)
            diff = np.abs(got - want)
            assert diff.max() <= 1
            halfway = np.abs(want_float - np.floor(want_float) - 0.5) < 1e-9
            assert np.all(halfway[diff > 0])

    def test_constant_image_stays_constant(self):
        src = np.full((9, 9), 77, dtype=np.uint8)
        assert np.all(resize_bilinear(src, 30, 5) == 77)


def make_placement(ref=(0, 0), src=(0, 0, 64, 64), scale=1.0, pos=(0, 0), size=None):
    sb = BBox(*src)
    if size is None:
        size = (int(sb.width * scale), int(sb.height * scale))
    return Placement(ref, sb, scale, pos[0], pos[1], size[0], size[1])


class TestCompose:
    def test_single_full_canvas_tile_lossless(self):
        rng = np.random.default_rng(1)
        frame = rng.integers(0, 255, (64, 64)).astype(np.uint8)
        layout = CanvasLayout(64, [make_placement()])
        out = compose(layout, {0: frame})
        assert np.array_equal(out.raster, frame)

    def test_empty_layout_gutter(self):
        out = compose(CanvasLayout(32, []), {})
        assert out.raster.shape == (32, 32)
        assert np.all(out.raster == GUTTER_VALUE)

    def test_scale_one_region_lossless_elsewhere_gutter(self):
        rng = np.random.default_rng(2)
        frame = rng.integers(0, 255, (100, 100)).astype(np.uint8)
        p = make_placement(src=(10, 20, 42, 52), pos=(5, 7))
        out = compose(CanvasLayout(64, [p]), {0: frame})
        assert np.array_equal(out.raster[7:39, 5:37], frame[20:52, 10:42])
        assert out.raster[0, 0] == GUTTER_VALUE

    def test_missing_source_raises(self):
        with pytest.raises(KeyError):
            compose(CanvasLayout(64, [make_placement()]), {})


class TestTranslateBack:
    def test_worked_inverse_affine_example(self):
        # Bin: source rect (1000,500)-(1256,756) placed at (0,0) at scale 0.5.
        p = make_placement(
            ref=(3, 9), src=(1000, 500, 1256, 756), scale=0.5, pos=(0, 0), size=(128, 128)
        )
        frame = CanvasFrame(CanvasLayout(640, [p]))
        det = Detection(BBox(32, 32, 64, 64), "person", 0.9)
        per_cam, dropped = translate_back([det], frame)
        assert dropped == 0
        out = per_cam[3][0]
        assert out.bbox.as_tuple() == pytest.approx((1064, 564, 1128, 628))
        assert out.camera_id == 3

    def test_gutter_detection_dropped(self):
        p = make_placement(pos=(0, 0), size=(32, 32), src=(0, 0, 32, 32))
        frame = CanvasFrame(CanvasLayout(640, [p]))
        det = Detection(BBox(500, 500, 520, 520), "person", 0.5)
        per_cam, dropped = translate_back([det], frame)
        assert dropped == 1
        assert per_cam == {}

    def test_scale_one_bin_is_pure_offset(self):
        p = make_placement(ref=(1, 0), src=(100, 200, 164, 264), scale=1.0, pos=(10, 20))
        frame = CanvasFrame(CanvasLayout(640, [p]))
        det = Detection(BBox(10, 20, 74, 84), "person", 0.5)
        per_cam, _ = translate_back([det], frame)
        assert per_cam[1][0].bbox.as_tuple() == pytest.approx((100, 200, 164, 264))

    def test_clip_to_tile(self):
        p = make_placement(src=(0, 0, 64, 64), pos=(0, 0))
        frame = CanvasFrame(CanvasLayout(640, [p]))
        det = Detection(BBox(-10, -10, 30, 30), "person", 0.5)
        per_cam, _ = translate_back([det], frame)
        b = per_cam[0][0].bbox
        assert b.x_min >= 0 and b.y_min >= 0

    def test_roundtrip_within_half_pixel(self):
        rng = np.random.default_rng(14)
        for _ in range(10_000):
            sx0, sy0 = rng.uniform(0, 2000, 2)
            sw, sh = rng.uniform(16, 256, 2)
            scale = float(rng.uniform(0.3, 2.0))
            pw = max(2, int(round(sw * scale / 2)) * 2)
            ph = max(2, int(round(sh * scale / 2)) * 2)
            px, py = (int(v) for v in rng.integers(0, 300, 2))
            p = make_placement(
                src=(sx0, sy0, sx0 + sw, sy0 + sh), scale=scale, pos=(px, py), size=(pw, ph)
            )
            x0 = rng.uniform(sx0, sx0 + sw - 2)
            y0 = rng.uniform(sy0, sy0 + sh - 2)
            box = BBox(x0, y0, min(x0 + rng.uniform(1, 60), sx0 + sw), min(y0 + rng.uniform(1, 60), sy0 + sh))
            back = to_source_box(p, to_canvas_box(p, box))
            for got, want in zip(back.as_tuple(), box.as_tuple()):
                assert abs(got - want) <= 0.5


class TestDedupe:
    def test_double_observation_collapses(self):
        a = Detection(BBox(10, 10, 50, 50), "person", 0.9, camera_id=0)
        b = Detection(BBox(12, 11, 52, 49), "person", 0.7, camera_id=0)
        out = dedupe({0: [a, b]})
        assert out[0] == [a]

    def test_single_detection_unchanged(self):
        d = Detection(BBox(0, 0, 10, 10), "car", 0.5, camera_id=2)
        assert dedupe({2: [d]}) == {2: [d]}

    def test_different_objects_both_survive(self):
        a = Detection(BBox(0, 0, 10, 10), "person", 0.9, camera_id=0)
        b = Detection(BBox(100, 100, 110, 110), "person", 0.8, camera_id=0)
        out = dedupe({0: [a, b]})
        assert len(out[0]) == 2

    def test_classes_do_not_suppress_each_other(self):
        a = Detection(BBox(0, 0, 10, 10), "car", 0.9, camera_id=0)
        b = Detection(BBox(1, 1, 11, 11), "bus", 0.8, camera_id=0)
        out = dedupe({0: [a, b]})
        assert len(out[0]) == 2

    def test_survivor_pairwise_iou_bounded(self):
        from canvasmux.geometry import iou

        rng = np.random.default_rng(8)
        for _ in range(200):
            dets = []
            for _ in range(15):
                x, y = rng.uniform(0, 80, 2)
                w, h = rng.uniform(5, 40, 2)
                dets.append(
                    Detection(BBox(x, y, x + w, y + h), "person", float(rng.random()), camera_id=0)
                )
            out = dedupe({0: dets})[0]
            for i in range(len(out)):
                for j in range(i + 1, len(out)):
                    assert iou(out[i].bbox, out[j].bbox) <= 0.45
