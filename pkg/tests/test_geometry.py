"""Tests for geometry module."""

import math

import numpy as np
import pytest

from pa_homeo_approx.geometry import (
    BucketGrid,
    Disk,
    Mat2,
    Point2,
    Polygon,
    RightPolygon,
    Square,
    Triangle,
    Triangulation,
    distortion,
    domain_from_spec,
    find_segment_crossings,
    in_L_class,
    in_L_class_many,
    nonconforming_pair,
    op_norm,
    orient,
    point_in_triangle,
    polygon_crossing,
    polygon_is_simple,
    segments_intersect,
    signed_area,
    signed_areas,
    singular_values,
    snap_quantum,
    validate_triangulation,
)


class TestPrimitives:
    """Tests for scalar primitives."""

    def test_signed_area_orientation(self) -> None:
        """Test that counterclockwise triangles have positive area."""
        t = Triangle(Point2(0, 0), Point2(1, 0), Point2(0, 1))
        assert signed_area(t) == 0.5
        assert signed_area(Triangle(t.v0, t.v2, t.v1)) == -0.5

    def test_signed_areas_vectorised(self) -> None:
        """Test vectorised signed areas against the scalar version."""
        pts = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
        tris = np.array([[0, 1, 2], [1, 3, 2], [0, 2, 1]])
        expected = [signed_area(Triangle(*(Point2(*pts[i]) for i in t))) for t in tris]
        np.testing.assert_allclose(signed_areas(pts, tris), expected)

    def test_singular_values_match_svd(self) -> None:
        """Test the closed-form singular values against numpy's SVD."""
        rng = np.random.default_rng(3)
        m = rng.normal(size=(50, 2, 2))
        smax, smin = singular_values(m)
        s = np.linalg.svd(m, compute_uv=False)
        np.testing.assert_allclose(smax, s[:, 0], rtol=1e-12)
        np.testing.assert_allclose(smin, s[:, 1], atol=1e-12)

    def test_op_norm(self) -> None:
        """Test the operator norm of diagonal and rotation matrices."""
        assert op_norm(Mat2(3.0, 0.0, 0.0, -0.5)) == pytest.approx(3.0)
        c, s = math.cos(0.3), math.sin(0.3)
        assert op_norm([[c, -s], [s, c]]) == pytest.approx(1.0)

    def test_distortion(self) -> None:
        """Test distortion of regular and singular matrices."""
        d = distortion(np.array([[[2.0, 0.0], [0.0, 0.25]], [[1.0, 1.0], [1.0, 1.0]]]))
        assert d[0] == pytest.approx(4.0)
        assert math.isinf(d[1])

    def test_l_class(self) -> None:
        """Test membership in the L-class."""
        assert in_L_class(Mat2.identity(), 1.0)
        assert in_L_class(Mat2(2.0, 0.0, 0.0, 0.5), 2.0)
        assert not in_L_class(Mat2(2.0, 0.0, 0.0, 0.5), 1.5)
        assert not in_L_class(Mat2(-1.0, 0.0, 0.0, 1.0), 2.0)
        many = in_L_class_many(np.array([np.eye(2), np.diag([1.0, -1.0])]), 1.0)
        assert many.tolist() == [True, False]

    def test_mat2_inverse(self) -> None:
        """Test the 2x2 inverse."""
        m = Mat2(2.0, 1.0, 1.0, 1.0)
        np.testing.assert_allclose(m.as_array() @ m.inverse().as_array(), np.eye(2))
        with pytest.raises(ZeroDivisionError):
            Mat2(1.0, 2.0, 2.0, 4.0).inverse()

    def test_square(self) -> None:
        """Test square corners and scaling."""
        sq = Square(Point2(1.0, 1.0), 2.0)
        assert sq.lower_left == Point2(0.0, 0.0)
        np.testing.assert_array_equal(sq.corners()[2], [2.0, 2.0])
        assert sq.scaled(3.0).side == 6.0
        with pytest.raises(ValueError, match="Invalid square side"):
            Square(Point2(0, 0), 0.0)


class TestPredicates:
    """Tests for orientation and intersection predicates."""

    def test_orient_signs(self) -> None:
        """Test counterclockwise, clockwise and collinear triples."""
        s = orient([[0, 0], [0, 0], [0, 0]], [[1, 0], [0, 1], [1, 1]], [[0, 1], [1, 0], [2, 2]])
        assert s.tolist() == [1, -1, 0]

    def test_orient_near_degenerate_is_exact(self) -> None:
        """Test that a nearly collinear triple gets the exact sign."""
        a = np.array([0.5, 0.5])
        b = np.array([12.0, 12.0])
        c = np.array([24.0, 24.0 + 2.0**-45])
        assert orient(a, b, c)[0] == 1
        assert orient(a, b, np.array([24.0, 24.0]))[0] == 0

    def test_segments_intersect(self) -> None:
        """Test crossing, touching and disjoint segments."""
        hit = segments_intersect(
            [[0, 0], [0, 0], [0, 0]],
            [[1, 1], [1, 0], [1, 0]],
            [[0, 1], [1, 0], [0, 1]],
            [[1, 0], [2, 0], [1, 1]],
        )
        assert hit.tolist() == [True, True, False]

    def test_point_in_triangle(self) -> None:
        """Test closed membership for either orientation."""
        a, b, c = [0, 0], [1, 0], [0, 1]
        pts = np.array([[0.2, 0.2], [0.5, 0.5], [1.0, 1.0]])
        assert point_in_triangle(pts, a, b, c).tolist() == [True, True, False]
        assert point_in_triangle(pts, a, c, b).tolist() == [True, True, False]

    def test_snap_quantum(self) -> None:
        """Test the snapping grid spacing."""
        assert snap_quantum(1.0) == 2.0**-40
        assert snap_quantum(4.0, exponent=2) == 1.0

    def test_find_segment_crossings_bucketed(self) -> None:
        """Test that the bucketed search agrees with brute force."""
        rng = np.random.default_rng(0)
        s = rng.uniform(size=(120, 2))
        e = s + rng.normal(scale=0.05, size=(120, 2))
        found = set(find_segment_crossings(s, e, first_only=False))
        brute = {
            (i, j)
            for i in range(120)
            for j in range(i + 1, 120)
            if segments_intersect(s[i], e[i], s[j], e[j])[0]
        }
        assert found == brute

    def test_bucket_grid_pairs(self) -> None:
        """Test overlapping box pairs."""
        boxes = np.array([[0, 0, 1, 1], [0.5, 0.5, 2, 2], [3, 3, 4, 4]], dtype=float)
        i, j = BucketGrid.build(boxes).overlapping_pairs()
        assert list(zip(i.tolist(), j.tolist())) == [(0, 1)]


class TestPolygons:
    """Tests for polygons and simplicity."""

    def test_simple_polygon(self) -> None:
        """Test a square is simple and a bow-tie is not."""
        assert polygon_is_simple([[0, 0], [1, 0], [1, 1], [0, 1]])
        assert polygon_crossing([[0, 0], [1, 1], [1, 0], [0, 1]]) is not None

    def test_repeated_vertex(self) -> None:
        """Test that a repeated vertex is reported."""
        assert polygon_crossing([[0, 0], [1, 0], [0, 0], [0, 1]]) == (0, 2)

    def test_polygon_domain(self) -> None:
        """Test polygon area, convexity and square containment."""
        tri = Polygon.from_array([[0, 0], [2, 0], [0, 2]])
        assert tri.area == 2.0
        assert tri.is_convex
        assert tri.square_inside((0.25, 0.25), 0.5)
        assert not tri.square_inside((0.9, 0.9), 0.5)
        assert tri.square_meets((0.9, 0.9), 0.5)
        assert not tri.square_meets((3.0, 3.0), 0.5)
        assert not tri.square_inside((0.0, 0.0), 0.5)


class TestRightPolygon:
    """Tests for right polygons."""

    def test_rectangle(self) -> None:
        """Test area, bounding box and convexity."""
        rp = RightPolygon.rectangle(0.0, 0.0, 2, 1, 0.5)
        assert rp.area == 0.5
        assert rp.bbox == (0.0, 0.0, 1.0, 0.5)
        assert rp.is_convex
        assert rp.is_right_polygon

    def test_lshape(self) -> None:
        """Test the L-shaped domain."""
        rp = domain_from_spec("lshape")
        assert isinstance(rp, RightPolygon)
        assert rp.area == 0.75
        assert not rp.is_convex
        assert rp.contains([[0.25, 0.75], [0.75, 0.75]]).tolist() == [True, False]

    def test_compact_containment(self) -> None:
        """Test that squares touching the boundary are not inside."""
        rp = domain_from_spec("unit_square")
        assert not rp.square_inside((0.0, 0.0), 1.0)
        assert rp.square_inside((0.25, 0.25), 0.5)
        assert not rp.square_inside((0.75, 0.75), 0.5)

    def test_boundary_segments(self) -> None:
        """Test the boundary of an L-shape is a closed cycle of unit edges."""
        a, b = RightPolygon(1.0, frozenset({(0, 0), (1, 0), (0, 1)})).boundary_segments()
        assert len(a) == 8
        assert sorted(map(tuple, a.tolist())) == sorted(map(tuple, b.tolist()))

    def test_boundary_distance(self) -> None:
        """Test distance to the right polygon boundary."""
        rp = domain_from_spec("unit_square")
        assert isinstance(rp, RightPolygon)
        np.testing.assert_allclose(rp.boundary_distance([[0.5, 0.5], [0.1, 0.5]]), [0.5, 0.1])


class TestDisk:
    """Tests for the disk domain."""

    def test_disk(self) -> None:
        """Test area, containment and squares."""
        d = Disk(Point2(0.0, 0.0), 1.0)
        assert d.area == pytest.approx(math.pi)
        assert d.contains([[0.5, 0.5], [1.0, 1.0]]).tolist() == [True, False]
        assert d.square_inside((-0.5, -0.5), 1.0)
        assert not d.square_inside((0.5, 0.5), 1.0)
        assert d.square_meets((0.5, 0.5), 1.0)


class TestTriangulation:
    """Tests for triangulations."""

    def test_boundary_edges(self) -> None:
        """Test that a split square has four boundary edges."""
        t = Triangulation(
            np.array([[0, 0], [1, 0], [1, 1], [0, 1]]), np.array([[0, 1, 2], [0, 2, 3]])
        )
        assert len(t.boundary_edges()) == 4
        assert t.n_vertices == 4
        assert t.n_triangles == 2

    def test_conforming(self) -> None:
        """Test a conforming and a non-conforming triangulation."""
        pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        good = Triangulation(pts, np.array([[0, 1, 2], [0, 2, 3]]))
        assert validate_triangulation(good)
        overlap = Triangulation(pts, np.array([[0, 1, 2], [0, 1, 3]]))
        assert nonconforming_pair(overlap) == (0, 1)

    def test_degenerate_triangle(self) -> None:
        """Test that a zero-area triangle is reported."""
        pts = np.array([[0, 0], [1, 0], [2, 0]], dtype=float)
        assert nonconforming_pair(Triangulation(pts, np.array([[0, 1, 2]]))) == (0, 0)


class TestDomainFromSpec:
    """Tests for domain_from_spec."""

    def test_rect_right(self) -> None:
        """Test that a rectangle with commensurable sides is a right polygon."""
        d = domain_from_spec("rect:0,0,2,1")
        assert isinstance(d, RightPolygon)
        assert d.area == 2.0

    def test_rect_polygon(self) -> None:
        """Test that other rectangles are polygons."""
        assert isinstance(domain_from_spec("rect:0,0,1.5,1"), Polygon)

    def test_polygon_reoriented(self) -> None:
        """Test that clockwise polygons are reoriented."""
        d = domain_from_spec("polygon:0,0;0,1;1,1;1,0")
        assert isinstance(d, Polygon)
        assert d.signed_area > 0

    def test_right_spec(self) -> None:
        """Test an explicit cell list."""
        d = domain_from_spec("right:0.5;0,0;1,0")
        assert isinstance(d, RightPolygon)
        assert d.area == 0.5

    def test_disk_spec(self) -> None:
        """Test a disk spec."""
        d = domain_from_spec("disk:0.5,0.5,0.5")
        assert isinstance(d, Disk)
        assert d.radius == 0.5

    def test_invalid(self) -> None:
        """Test error messages for bad specs."""
        with pytest.raises(ValueError, match="Invalid domain 'hexagon'"):
            domain_from_spec("hexagon")
        with pytest.raises(ValueError, match="Expected 3 numbers"):
            domain_from_spec("disk:0,0")
        with pytest.raises(ValueError, match="Polygon must be simple"):
            domain_from_spec("polygon:0,0;1,1;1,0;0,1")
        with pytest.raises(ValueError, match="positive extent"):
            domain_from_spec("rect:0,0,0,1")
