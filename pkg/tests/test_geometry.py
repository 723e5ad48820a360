import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detailfuse.errors import GeometryError
from detailfuse.geometry import (
    TABLE_TOTALS,
    CoverConfig,
    CoverMode,
    ObjectBox,
    PatchBox,
    covers,
    generate_cc,
    generate_grid,
    generate_obj,
    patch_count_bound,
    verify_cover,
)

# frozen oracle: per-level patch counts for a=224, reference schedule, k=1..15
EXPECTED_TOTALS = {
    1: 1, 2: 5, 3: 14, 4: 30, 5: 39, 6: 66, 7: 79, 8: 103, 9: 136,
    10: 166, 11: 187, 12: 248, 13: 273, 14: 315, 15: 355,
}


class TestCoverPredicate:
    def test_strict_area_inequality(self):
        # area(p) * k^2 must strictly exceed area(q)
        q = PatchBox(0, 0, 30, 30, level=1)
        inside = ObjectBox(0, 0, 10, 10, class_id=0)  # 100 * 9 = 900 == area(q)
        assert not covers(q, inside, 3)
        bigger = ObjectBox(0, 0, 11, 11, class_id=0)
        assert covers(q, bigger, 3)

    def test_containment_required(self):
        q = PatchBox(0, 0, 20, 20, level=1)
        straddling = ObjectBox(10, 10, 30, 30, class_id=0)
        assert not covers(q, straddling, 10)

    def test_degenerate_k(self):
        q = PatchBox(0, 0, 20, 20, level=1)
        p = ObjectBox(0, 0, 10, 10, class_id=0)
        with pytest.raises(GeometryError):
            covers(q, p, 0)

    @given(st.integers(1, 60), st.integers(1, 15))
    def test_full_patch_always_covered_for_k_ge_2(self, side, k):
        q = PatchBox(0, 0, side, side, level=1)
        p = ObjectBox(0, 0, side, side, class_id=0)
        assert covers(q, p, k) == (k >= 2)


class TestTableMode:
    @pytest.mark.parametrize("k,total", sorted(EXPECTED_TOTALS.items()))
    def test_reference_totals(self, k, total):
        cover = generate_cc(CoverConfig(224, k, CoverMode.TABLE_COMPAT))
        assert len(cover.patches) == total
        assert TABLE_TOTALS[k] == total

    def test_per_level_counts_k10(self):
        cover = generate_cc(CoverConfig(224, 10, CoverMode.TABLE_COMPAT))
        assert cover.per_level_counts == [1, 4, 9, 16, 36, 100]

    def test_patches_within_bounds(self):
        for k in (2, 5, 10, 15):
            cover = generate_cc(CoverConfig(224, k, CoverMode.TABLE_COMPAT))
            for p in cover.patches:
                assert 0 <= p.x0 < p.x1 <= 224
                assert 0 <= p.y0 < p.y1 <= 224
                assert p.width == p.height

    def test_first_level_is_whole_image(self):
        cover = generate_cc(CoverConfig(224, 7, CoverMode.TABLE_COMPAT))
        p = cover.patches[0]
        assert (p.x0, p.y0, p.x1, p.y1) == (0, 0, 224, 224)

    def test_unsupported_k(self):
        with pytest.raises(GeometryError):
            generate_cc(CoverConfig(224, 16, CoverMode.TABLE_COMPAT))


class TestProvableMode:
    @pytest.mark.parametrize("a", [32, 64, 96, 128])
    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_complete_at_stride_one(self, a, k):
        cover = generate_cc(CoverConfig(a, k, CoverMode.PROVABLE))
        report = verify_cover(cover, k, cover.min_object_side, stride=1)
        assert report.complete, report.uncovered[:5]

    @pytest.mark.parametrize("k", range(2, 16))
    def test_patch_budget(self, k):
        bound = math.ceil(k * k * math.pi ** 2 / 6)
        cover = generate_cc(CoverConfig(224, k, CoverMode.PROVABLE))
        assert len(cover.patches) <= bound * 1.05

    def test_explicit_floor(self):
        # a=120, k=3, objects down to side 5 must be covered
        cover = generate_cc(CoverConfig(120, 3, CoverMode.PROVABLE, min_side=5))
        assert cover.min_object_side <= 5
        report = verify_cover(cover, 3, 5, stride=1)
        assert report.complete

    def test_count_monotone_in_k_at_large_side(self):
        counts = [len(generate_cc(CoverConfig(2240, k, CoverMode.PROVABLE)).patches)
                  for k in range(2, 16)]
        assert counts == sorted(counts)

    def test_k1_covers_nothing(self):
        cover = generate_cc(CoverConfig(64, 1, CoverMode.PROVABLE))
        assert cover.min_object_side == 65  # nothing is covered when k == 1

    @given(st.integers(16, 100), st.integers(2, 6))
    @settings(max_examples=25, deadline=None)
    def test_completeness_property(self, a, k):
        cover = generate_cc(CoverConfig(a, k, CoverMode.PROVABLE))
        report = verify_cover(cover, k, cover.min_object_side, stride=1)
        assert report.complete


class TestVerifyCover:
    def test_single_patch_eq6_case(self):
        # the whole image alone covers everything of side >= ceil(a/k)
        a, k = 100, 10
        cover = generate_obj([ObjectBox(0, 0, a, a, class_id=0)])
        report = verify_cover(cover, k, math.ceil(a / k) + 1, stride=1, image_side=a)
        assert report.complete

    def test_single_patch_misses_small(self):
        a, k = 100, 10
        cover = generate_obj([ObjectBox(0, 0, a, a, class_id=0)])
        report = verify_cover(cover, k, 1, stride=1, image_side=a)
        assert not report.complete
        assert report.uncovered == sorted(report.uncovered)

    def test_stride_validation(self):
        cover = generate_cc(CoverConfig(64, 2, CoverMode.PROVABLE))
        with pytest.raises(GeometryError):
            verify_cover(cover, 2, 1, stride=0)

    def test_edge_objects_enumerated(self):
        # flush-against-edge boxes must appear among the uncovered report
        cover = generate_obj([ObjectBox(0, 0, 10, 10, class_id=0)])
        report = verify_cover(cover, 2, 8, stride=1, image_side=20)
        assert any(x == 12 or y == 12 for _, x, y in report.uncovered)


class TestBound:
    @pytest.mark.parametrize("k,expect", [(1, 2), (2, 7), (3, 15), (10, 165)])
    def test_values(self, k, expect):
        assert patch_count_bound(CoverConfig(224, k, CoverMode.PROVABLE)) == expect


class TestGridAndObj:
    def test_grid_partitions_image(self):
        cover = generate_grid(224, 224, 10, 10)
        assert len(cover.patches) == 100
        area = sum(p.area for p in cover.patches)
        assert area == 224 * 224

    def test_grid_uneven_remainder(self):
        cover = generate_grid(10, 10, 3, 3)
        assert len(cover.patches) == 9
        assert sum(p.area for p in cover.patches) == 100
        assert max(p.x1 for p in cover.patches) == 10

    def test_obj_preserves_order(self):
        objs = [ObjectBox(5, 5, 10, 10, class_id=1), ObjectBox(0, 0, 4, 4, class_id=2)]
        cover = generate_obj(objs)
        assert [(p.x0, p.y0) for p in cover.patches] == [(5, 5), (0, 0)]

    def test_obj_empty(self):
        with pytest.raises(GeometryError):
            generate_obj([])


class TestBoxes:
    def test_invalid_patch(self):
        with pytest.raises(GeometryError):
            PatchBox(5, 0, 5, 10, level=1)
        with pytest.raises(GeometryError):
            PatchBox(0, 0, 10, 10, level=0)

    def test_half_open_area(self):
        assert PatchBox(2, 3, 7, 9, level=1).area == 30

    def test_object_requires_class(self):
        o = ObjectBox(0, 0, 3, 3, class_id=7)
        assert o.class_id == 7 and o.area == 9


def test_determinism():
    a = generate_cc(CoverConfig(224, 10, CoverMode.TABLE_COMPAT))
    b = generate_cc(CoverConfig(224, 10, CoverMode.TABLE_COMPAT))
    assert a.patches == b.patches
    c = generate_cc(CoverConfig(128, 4, CoverMode.PROVABLE))
    d = generate_cc(CoverConfig(128, 4, CoverMode.PROVABLE))
    assert c.patches == d.patches
