import itertools

import numpy as np
import pytest

from canvasmux.geometry import BBox
from canvasmux.scales import (
    ScaleSet,
    SizeSample,
    cluster_sizes,
    derive_scales,
    fallback_scales,
    merge_proximal_boxes,
)


def exhaustive_min_wcss(points, k):
    """Oracle: minimum WCSS over every assignment of points to k clusters."""
    pts = np.asarray(points, dtype=float)
    best = float("inf")
    for labels in itertools.product(range(k), repeat=len(pts)):
        if len(set(labels)) != k:
            continue
        total = 0.0
        for c in range(k):
            members = pts[[i for i, l in enumerate(labels) if l == c]]
            centroid = members.mean(axis=0)
            total += float(((members - centroid) ** 2).sum())
        best = min(best, total)
    return best


class TestMergeProximalBoxes:
    def test_far_boxes_not_merged(self):
        boxes = [BBox(0, 0, 10, 10), BBox(100, 100, 110, 110)]
        out = merge_proximal_boxes(boxes, gap=8)
        assert len(out) == 2

    def test_overlapping_pair_adds_enclosing(self):
        boxes = [BBox(0, 0, 10, 10), BBox(5, 5, 15, 15)]
        out = merge_proximal_boxes(boxes, gap=0)
        assert len(out) == 3
        assert SizeSample(15, 15) in out

    def test_empty(self):
        assert merge_proximal_boxes([], gap=8) == []

    def test_matches_union_find_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(0, 10))
            boxes = []
            for _ in range(n):
                x, y = rng.uniform(0, 200, 2)
                w, h = rng.uniform(1, 40, 2)
                boxes.append(BBox(x, y, x + w, y + h))
            gap = float(rng.uniform(0, 20))
            out = merge_proximal_boxes(boxes, gap)
            # Oracle: transitive closure by repeated pairwise merging.
            groups = [{i} for i in range(n)]
            changed = True
            while changed:
                changed = False
                for a in range(len(groups)):
                    for b in range(a + 1, len(groups)):
                        from canvasmux.geometry import rect_gap

                        if any(
                            rect_gap(boxes[i], boxes[j]) <= gap
                            for i in groups[a]
                            for j in groups[b]
                        ):
                            groups[a] |= groups[b]
                            del groups[b]
                            changed = True
                            break
                    if changed:
                        break
            expected_extra = sum(1 for g in groups if len(g) >= 2)
            assert len(out) == n + expected_extra


class TestClusterSizes:
    def test_identical_samples(self):
        samples = [SizeSample(40, 40)] * 10
        k, cents = cluster_sizes(samples, 6)
        assert k == 1
        assert cents[0] == pytest.approx((40, 40))

    def test_two_tight_clusters(self):
        rng = np.random.default_rng(3)
        samples = []
        for _ in range(30):
            samples.append(SizeSample(30 + rng.uniform(-1, 1), 30 + rng.uniform(-1, 1)))
            samples.append(SizeSample(100 + rng.uniform(-1, 1), 100 + rng.uniform(-1, 1)))
        k, cents = cluster_sizes(samples, 6)
        assert k == 2
        assert cents[0] == pytest.approx((30, 30), abs=1.5)
        assert cents[1] == pytest.approx((100, 100), abs=1.5)

    def test_kmeans_wcss_matches_exhaustive_oracle(self):
        # Tiny instance where the oracle enumerates every assignment: the
        # WCSS curve feeding the elbow must sit at the true optimum.
        pts = [(10, 10), (11, 12), (50, 49), (52, 52), (90, 91), (88, 88)]
        from sklearn.cluster import KMeans

        for k in (2, 3):
            km = KMeans(n_clusters=k, n_init=10, random_state=0).fit(
                np.asarray(pts, float)
            )
            assert km.inertia_ == pytest.approx(exhaustive_min_wcss(pts, k), rel=1e-9)

    def test_three_mode_drone_distribution(self):
        # Matches the preset population: small modes dominate.
        rng = np.random.default_rng(5)
        modes = [((36, 39), 80), ((50, 54), 80), ((81, 44), 40)]
        samples = []
        for (w, h), n in modes:
            for _ in range(n):
                samples.append(
                    SizeSample(max(2, rng.normal(w, 2.0)), max(2, rng.normal(h, 2.0)))
                )
        k, cents = cluster_sizes(samples, 6)
        assert k == 3
        for got, want in zip(cents, [(36, 39), (50, 54), (81, 44)]):
            assert got == pytest.approx(want, abs=2.0)
        assert derive_scales(cents) == ScaleSet((64, 96), 128)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        samples = [SizeSample(*rng.uniform(5, 120, 2)) for _ in range(64)]
        assert cluster_sizes(samples, 6) == cluster_sizes(samples, 6)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            cluster_sizes([], 6)


class TestDeriveScales:
    def test_worked_example(self):
        out = derive_scales([(36, 39), (50, 54), (81, 44)])
        assert out == ScaleSet(dims=(64, 96), catch_all=128)

    def test_bump_when_floor_equals_max_dim(self):
        assert derive_scales([(32, 32)]) == ScaleSet(dims=(32,), catch_all=64)

    def test_minimum_scale(self):
        assert derive_scales([(1, 1)]) == ScaleSet(dims=(32,), catch_all=64)

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            derive_scales([])

    def test_fuzz_invariants(self):
        rng = np.random.default_rng(21)
        for _ in range(10_000):
            n = int(rng.integers(1, 7))
            cents = [tuple(rng.uniform(1, 400, 2)) for _ in range(n)]
            ss = derive_scales(cents)
            assert list(ss.dims) == sorted(set(ss.dims))
            assert all(d % 32 == 0 and d > 0 for d in ss.all_dims)
            assert ss.catch_all > max(ss.dims)
            # Ceiling rounding: every centroid fits in some dim.
            for w, h in cents:
                assert any(d >= max(w, h) for d in ss.dims)

    def test_fallback(self):
        ss = fallback_scales()
        assert ss.dims == ()
        assert ss.all_dims == (128,)


class TestScaleSetValidation:
    def test_rejects_non_multiple(self):
        with pytest.raises(ValueError):
            ScaleSet((48,), 96)

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            ScaleSet((96, 64), 128)

    def test_rejects_small_catch_all(self):
        with pytest.raises(ValueError):
            ScaleSet((64,), 64)
