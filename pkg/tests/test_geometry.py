"""Grid arithmetic, box IoU, and adjacency tests."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protomatch.geometry import (
    Box,
    GridSpec,
    chebyshev_neighborhood,
    iou,
    patch_to_box,
    union_box_region_iou,
    within_radius,
)

from oracles import pixel_iou, pixel_union_iou


def boxes_within(max_coord: int):
    return st.tuples(
        st.integers(0, max_coord - 1), st.integers(0, max_coord - 1),
        st.integers(1, max_coord), st.integers(1, max_coord),
    ).filter(lambda t: t[0] < t[2] and t[1] < t[3]).map(lambda t: Box(*t))


class TestGridSpec:
    def test_standard_grid(self):
        grid = GridSpec(224, 224, 16)
        assert grid.rows == 14 and grid.cols == 14 and grid.n_patches == 196

    def test_rejects_non_multiple(self):
        with pytest.raises(ValueError):
            GridSpec(224, 225, 16)

    def test_rejects_zero_patch(self):
        with pytest.raises(ValueError):
            GridSpec(224, 224, 0)

    def test_row_col_out_of_range(self):
        with pytest.raises(IndexError):
            GridSpec(32, 32, 16).row_col(4)


class TestPatchToBox:
    def test_first_patch_at_origin(self):
        assert patch_to_box(GridSpec(224, 224, 16), 0) == Box(0, 0, 16, 16)

    def test_row_major_wrap(self):
        # cols=14, so index 15 is row 1 col 1
        assert patch_to_box(GridSpec(224, 224, 16), 15) == Box(16, 16, 32, 32)

    def test_last_patch(self):
        assert patch_to_box(GridSpec(224, 224, 16), 195) == Box(208, 208, 224, 224)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            patch_to_box(GridSpec(224, 224, 16), 196)

    @given(st.sampled_from([(32, 48, 16), (64, 64, 8), (30, 20, 10)]))
    def test_tiling_is_disjoint_and_complete(self, dims):
        grid = GridSpec(*dims)
        boxes = [patch_to_box(grid, p) for p in grid.patch_indices()]
        assert sum(b.area for b in boxes) == grid.image_height * grid.image_width
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                assert iou(a, b) == 0.0


class TestIoU:
    def test_identity(self):
        assert iou(Box(0, 0, 4, 4), Box(0, 0, 4, 4)) == 1.0

    def test_disjoint(self):
        assert iou(Box(0, 0, 2, 2), Box(5, 5, 7, 7)) == 0.0

    def test_offset_overlap(self):
        # pixel-counting over the 0..3 grid gives 1 shared pixel of 7 total
        expected = pixel_iou((0, 0, 2, 2), (1, 1, 3, 3), 3, 3)
        assert expected == pytest.approx(1 / 7)
        assert iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(expected)

    @given(boxes_within(12), boxes_within(12))
    @settings(max_examples=60)
    def test_matches_pixel_oracle(self, a, b):
        got = iou(a, b)
        want = pixel_iou((a.x_min, a.y_min, a.x_max, a.y_max),
                         (b.x_min, b.y_min, b.x_max, b.y_max), 12, 12)
        assert got == pytest.approx(want, abs=1e-12)

    @given(boxes_within(12), boxes_within(12))
    @settings(max_examples=60)
    def test_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        assert iou(a, a) == 1.0

    def test_rejects_empty_box(self):
        with pytest.raises(ValueError):
            Box(3, 0, 3, 4)


class TestUnionRegionIoU:
    def test_single_tile_exact(self):
        assert union_box_region_iou([Box(0, 0, 16, 16)], Box(0, 0, 16, 16)) == 1.0

    def test_two_tiles_cover_gt(self):
        tiles = [Box(0, 0, 16, 16), Box(16, 0, 32, 16)]
        assert union_box_region_iou(tiles, Box(0, 0, 32, 16)) == 1.0

    def test_two_tiles_half_overlap(self):
        tiles = [Box(0, 0, 16, 16), Box(16, 0, 32, 16)]
        want = pixel_union_iou([(0, 0, 16, 16), (16, 0, 32, 16)], (0, 0, 16, 16), 32, 16)
        assert want == 0.5
        assert union_box_region_iou(tiles, Box(0, 0, 16, 16)) == pytest.approx(0.5)

    def test_empty_patch_list(self):
        with pytest.raises(ValueError):
            union_box_region_iou([], Box(0, 0, 4, 4))

    def test_union_is_region_not_hull(self):
        # two diagonal tiles: the hull would cover the gt tile, the region does not
        tiles = [Box(0, 0, 16, 16), Box(16, 16, 32, 32)]
        gt = Box(16, 0, 32, 16)
        assert union_box_region_iou(tiles, gt) == 0.0

    @given(st.lists(boxes_within(20), min_size=1, max_size=4), boxes_within(20))
    @settings(max_examples=60)
    def test_matches_pixel_oracle(self, patches, gt):
        got = union_box_region_iou(patches, gt)
        want = pixel_union_iou(
            [(b.x_min, b.y_min, b.x_max, b.y_max) for b in patches],
            (gt.x_min, gt.y_min, gt.x_max, gt.y_max), 20, 20)
        assert got == pytest.approx(want, abs=1e-12)

    @given(st.lists(boxes_within(64), min_size=1, max_size=3), boxes_within(64))
    @settings(max_examples=25, deadline=None)
    def test_matches_pixel_oracle_64px(self, patches, gt):
        got = union_box_region_iou(patches, gt)
        want = pixel_union_iou(
            [(b.x_min, b.y_min, b.x_max, b.y_max) for b in patches],
            (gt.x_min, gt.y_min, gt.x_max, gt.y_max), 64, 64)
        assert got == pytest.approx(want, abs=1e-12)


class TestWithinRadius:
    GRID = GridSpec(224, 224, 16)  # 14x14

    def test_reflexive(self):
        assert within_radius(self.GRID, 0, 0, 0)

    def test_diagonal_neighbor_at_radius_one(self):
        # (r0,c0) vs (r1,c1): Chebyshev distance 1
        assert within_radius(self.GRID, 0, 15, 1)

    def test_same_row_distance_four(self):
        # exhaustively-verified Chebyshev arithmetic: (r0,c0) vs (r0,c4)
        assert not within_radius(self.GRID, 0, 4, 3)

    @given(st.integers(0, 195), st.integers(0, 195), st.integers(0, 4))
    @settings(max_examples=100)
    def test_symmetric_and_monotone(self, a, b, r):
        assert within_radius(self.GRID, a, b, r) == within_radius(self.GRID, b, a, r)
        if within_radius(self.GRID, a, b, r):
            assert within_radius(self.GRID, a, b, r + 1)

    @given(st.integers(0, 195), st.integers(0, 195), st.integers(0, 4))
    @settings(max_examples=100)
    def test_agrees_with_explicit_formula(self, a, b, r):
        ra, ca = divmod(a, 14)
        rb, cb = divmod(b, 14)
        want = max(abs(ra - rb), abs(ca - cb)) <= r
        assert within_radius(self.GRID, a, b, r) == want

    @given(st.integers(0, 63), st.integers(0, 3))
    @settings(max_examples=60)
    def test_neighborhood_matches_predicate(self, center, r):
        grid = GridSpec(128, 128, 16)
        hood = set(chebyshev_neighborhood(grid, center, r))
        for p in grid.patch_indices():
            assert (p in hood) == within_radius(grid, center, p, r)
