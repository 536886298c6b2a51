"""Tests for gridapprox module."""

import numpy as np
import pytest

from pa_homeo_approx.exceptions import CrossError, TilingError
from pa_homeo_approx.geometry import Disk, Point2, RightPolygon, domain_from_spec
from pa_homeo_approx.gridapprox import (
    CASES,
    GridMap,
    GridQ,
    Tiling,
    build_grid,
    build_grid_map,
    build_tiling,
    check_grid_injective,
    compute_cross,
    compute_crosses,
    crosses_disjoint,
    eps_boundary_map,
    omega_eps_clearance,
    segment_interpolation,
    stratified_ratios,
    verify_grid_bilip,
)
from pa_homeo_approx.lebesgue import classify
from pa_homeo_approx.maps import IdentityMap, MapOracle, ShearSineMap

UNIT = domain_from_spec("unit_square")
R = 0.125


def _identity_tiling() -> tuple[MapOracle, Tiling, RightPolygon]:
    o = IdentityMap(UNIT)
    omega_eps = classify(o, R, 1e-6, quad_n=4, concurrency=1).omega_eps
    assert omega_eps is not None
    return o, build_tiling(UNIT, omega_eps), omega_eps


def _grid_map(o: MapOracle, grid: GridQ) -> GridMap:
    boundary = eps_boundary_map(o, grid)
    crosses = compute_crosses(o, grid, boundary, concurrency=2)
    return build_grid_map(o, grid, crosses, boundary, concurrency=2)


class TestTiling:
    """Tests for build_tiling."""

    def test_uniform_tiling(self) -> None:
        """Test that a right-polygon domain is tiled by all of its r-cells."""
        _, tiling, _ = _identity_tiling()
        assert tiling.n_tiles == 64
        assert int(tiling.inside.sum()) == 16
        assert tiling.level == 0
        assert tiling.uncovered_area == 0.0
        assert tiling.max_neighbour_ratio() == 1.0

    def test_inside_tiles_match_region(self) -> None:
        """Test that the inside tiles are exactly the Lebesgue cells."""
        _, tiling, _ = _identity_tiling()
        ll = tiling.lower_left[tiling.inside]
        assert ll.min() == pytest.approx(0.25)
        assert ll.max() == pytest.approx(0.625)

    def test_touches_inside(self) -> None:
        """Test the ring of tiles around the Lebesgue region."""
        _, tiling, _ = _identity_tiling()
        assert int(tiling.touches_inside().sum()) == 36

    def test_requires_side_without_region(self) -> None:
        """Test error when neither a region nor r is given."""
        with pytest.raises(TilingError, match="Side length r is required"):
            build_tiling(UNIT, None)

    def test_misaligned_region(self) -> None:
        """Test error for a region off the r-grid."""
        omega_eps = RightPolygon(R, frozenset({(0, 0)}), Point2(0.3, 0.3))
        with pytest.raises(TilingError, match="not aligned"):
            build_tiling(UNIT, omega_eps)

    def test_region_touching_boundary(self) -> None:
        """Test error for a region cell on the domain boundary."""
        omega_eps = RightPolygon(R, frozenset({(0, 0)}), Point2(0.0, 0.0))
        with pytest.raises(TilingError, match="not compactly inside"):
            build_tiling(UNIT, omega_eps)

    def test_quadtree_on_disk(self) -> None:
        """Test the balanced quadtree on a disk."""
        disk = Disk(Point2(0.5, 0.5), 0.5)
        tiling = build_tiling(disk, None, max_depth=3, r=0.25)
        assert tiling.level == 3
        assert not tiling.inside.any()
        assert tiling.uncovered_area > 0.0
        covered = float(np.sum(tiling.sides**2))
        assert covered + tiling.uncovered_area == pytest.approx(disk.area)
        assert tiling.max_neighbour_ratio() <= 2.0
        assert all(disk.square_inside(sq.lower_left, sq.side) for sq in tiling.squares)


class TestGrid:
    """Tests for build_grid."""

    def test_counts(self) -> None:
        """Test vertices, sides and the Q' split of an 8x8 grid."""
        _, tiling, _ = _identity_tiling()
        grid = build_grid(tiling)
        assert grid.n_vertices == 81
        assert grid.n_sides == 144
        assert int(grid.in_qprime.sum()) == 104
        assert len(grid.qprime_vertices) == 72
        assert int(grid.on_eps_boundary.sum()) == 16
        assert int(grid.on_outer.sum()) == 32
        np.testing.assert_allclose(grid.lengths, R)

    def test_hanging_vertices_split_sides(self) -> None:
        """Test that a large tile next to small ones gets split sides."""
        tiling = Tiling(
            r=1.0,
            origin=Point2(0.0, 0.0),
            level=1,
            keys=np.array([[0, 0, 2], [2, 0, 1], [2, 1, 1]]),
            inside=np.zeros(3, dtype=bool),
        )
        grid = build_grid(tiling)
        assert grid.n_vertices == 8
        assert len(grid.tile_sides[0]) == 5
        assert grid.ell(int(np.flatnonzero((grid.keys == [2, 1]).all(axis=1))[0])) == 0.5

    def test_empty_tiling(self) -> None:
        """Test error for a tiling without squares."""
        tiling = Tiling(
            r=1.0,
            origin=Point2(0.0, 0.0),
            level=0,
            keys=np.zeros((0, 3), dtype=np.int64),
            inside=np.zeros(0, dtype=bool),
        )
        with pytest.raises(TilingError, match="Empty tiling"):
            build_grid(tiling)


class TestSegmentInterpolation:
    """Tests for segment_interpolation."""

    def test_image_steps_bounded(self) -> None:
        """Test that consecutive breakpoint images stay within rho."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        rho = 0.05
        seg = segment_interpolation(o, [0.1, 0.2], [0.9, 0.7], rho)
        steps = np.hypot(*np.diff(seg.images, axis=0).T)
        assert steps.max() <= rho * (1.0 + 1e-9)
        assert seg.ts[0] == 0.0
        assert seg.ts[-1] == 1.0
        assert np.all(np.diff(seg.ts) > 0)

    def test_identity_is_exact(self) -> None:
        """Test that interpolating the identity reproduces the segment."""
        seg = segment_interpolation(IdentityMap(UNIT), [0.0, 0.5], [1.0, 0.5], 0.3)
        np.testing.assert_allclose(seg.ts, [0.0, 0.3, 0.6, 0.9, 1.0], atol=1e-9)
        t = np.linspace(0.0, 1.0, 11)
        np.testing.assert_allclose(seg(t), np.column_stack([t, np.full(11, 0.5)]), atol=1e-12)

    def test_breakpoints_are_last_exits(self) -> None:
        """Test that each breakpoint image sits on the rho sphere around the previous one."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        rho = 0.05
        seg = segment_interpolation(o, [0.1, 0.2], [0.9, 0.7], rho)
        steps = np.hypot(*np.diff(seg.images, axis=0).T)
        np.testing.assert_allclose(steps[:-1], rho, atol=1e-8)

    def test_interpolation_is_4l_bilipschitz(self) -> None:
        """Test the pairwise distortion of the interpolated segment against 4L."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        p, q = np.array([0.1, 0.2]), np.array([0.9, 0.7])
        seg = segment_interpolation(o, p, q, 0.05)
        t = np.linspace(0.0, 1.0, 301)
        img = seg(t)
        i, j = np.triu_indices(len(t), k=1)
        dom = (t[j] - t[i]) * float(np.hypot(*(q - p)))
        ratio = np.hypot(*(img[j] - img[i]).T) / dom
        assert ratio.max() <= 4.0 * o.L
        assert ratio.min() >= 1.0 / (4.0 * o.L)

    def test_invalid_rho(self) -> None:
        """Test error for a non-positive rho."""
        with pytest.raises(ValueError, match="Invalid rho"):
            segment_interpolation(IdentityMap(UNIT), [0.0, 0.0], [1.0, 0.0], 0.0)


class TestCrosses:
    """Tests for crosses."""

    def test_identity_cross_fractions(self) -> None:
        """Test that identity crosses reach exactly the radius xi."""
        o, tiling, _ = _identity_tiling()
        grid = build_grid(tiling)
        crosses = compute_crosses(o, grid, eps_boundary_map(o, grid), concurrency=1)
        assert sorted(crosses) == [int(v) for v in grid.qprime_vertices]
        for v, cross in crosses.items():
            assert cross.xi <= grid.ell(v) / 3.0
            for frac in cross.fractions:
                assert frac * R == pytest.approx(cross.xi, rel=1e-6)

    def test_not_in_qprime(self) -> None:
        """Test error for a vertex interior to the Lebesgue region."""
        o, tiling, _ = _identity_tiling()
        grid = build_grid(tiling)
        v = int(np.flatnonzero((grid.keys == [4, 4]).all(axis=1))[0])
        with pytest.raises(CrossError, match="not in Q'"):
            compute_cross(o, grid, None, v)

    def test_missing_cross(self) -> None:
        """Test error when assembling without a needed cross."""
        o, tiling, _ = _identity_tiling()
        grid = build_grid(tiling)
        boundary = eps_boundary_map(o, grid)
        with pytest.raises(CrossError, match="cross missing"):
            build_grid_map(o, grid, {}, boundary)


class TestGridMap:
    """Tests for the grid map and its checks."""

    def test_identity_grid_map(self) -> None:
        """Test that the identity grid map is an isometry on Q."""
        o, tiling, _ = _identity_tiling()
        gm = _grid_map(o, build_grid(tiling))
        assert check_grid_injective(gm)
        assert crosses_disjoint(gm)
        lower, upper = verify_grid_bilip(gm, o.L, pairs=300, seed=1)
        assert lower == pytest.approx(1.0, abs=1e-9)
        assert upper == pytest.approx(1.0, abs=1e-9)

    def test_tile_boundary(self) -> None:
        """Test the boundary polygon of a tile outside the region."""
        o, tiling, _ = _identity_tiling()
        gm = _grid_map(o, build_grid(tiling))
        pts, imgs = gm.tile_boundary(0)
        np.testing.assert_array_equal(pts[0], [0.0, 0.0])
        np.testing.assert_allclose(imgs, pts, atol=1e-12)
        area = 0.5 * np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
        assert area == pytest.approx(R * R)

    def test_eval_side_from(self) -> None:
        """Test evaluation from either end of a side."""
        o, tiling, _ = _identity_tiling()
        gm = _grid_map(o, build_grid(tiling))
        a, b = (int(v) for v in gm.grid.sides[0])
        np.testing.assert_allclose(gm.eval_side_from(0, a, [0.0]), gm.grid.points[[a]])
        np.testing.assert_allclose(gm.eval_side_from(0, b, [0.0]), gm.grid.points[[b]])

    def test_adjusted_agrees_at_breakpoints(self) -> None:
        """Test that the adjusted map keeps the breakpoint images."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        gm = _grid_map(o, build_grid(build_tiling(UNIT, None, r=0.25)))
        side = int(np.flatnonzero(gm.grid.in_qprime)[0])
        pc = gm.piece(side)
        np.testing.assert_allclose(gm.adjusted().eval_side(side, pc.ts), pc.images, atol=1e-12)

    def test_shear_sine_without_region(self) -> None:
        """Test an injective grid map when every square lies outside the region."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        tiling = build_tiling(UNIT, None, r=0.25)
        grid = build_grid(tiling)
        assert grid.in_qprime.all()
        gm = _grid_map(o, grid)
        assert check_grid_injective(gm)
        assert crosses_disjoint(gm)
        lower, upper = verify_grid_bilip(gm, o.L, pairs=300)
        assert 1.0 / (72.0 * o.L) <= lower <= upper <= 72.0 * o.L

    def test_stratified_classes(self) -> None:
        """Test that every pair class is reported."""
        o, tiling, _ = _identity_tiling()
        stats = stratified_ratios(_grid_map(o, build_grid(tiling)), pairs=300, seed=2)
        assert tuple(stats) == CASES
        assert stats["same_cross"].count > 0

    def test_invalid_pairs(self) -> None:
        """Test error for a non-positive pair count."""
        o, tiling, _ = _identity_tiling()
        with pytest.raises(ValueError, match="Invalid pairs"):
            verify_grid_bilip(_grid_map(o, build_grid(tiling)), 1.0, pairs=0)

    def test_clearance(self) -> None:
        """Test the distance from the region to the domain boundary."""
        _, _, omega_eps = _identity_tiling()
        assert omega_eps_clearance(UNIT, omega_eps) == pytest.approx(0.25)
