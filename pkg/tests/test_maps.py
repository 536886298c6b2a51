"""Tests for maps module."""

import math

import numpy as np
import pytest

from pa_homeo_approx.exceptions import DomainError, InversionError
from pa_homeo_approx.geometry import Disk, Point2, domain_from_spec, signed_areas
from pa_homeo_approx.maps import (
    AffineMap,
    FoldCandidateMap,
    IdentityMap,
    PolarTwistMap,
    SampledMap,
    ShearSineMap,
    builtin_catalogue,
    estimate_L,
    make_builtin,
    map_from_spec,
    sample_domain,
)

UNIT = domain_from_spec("unit_square")


class TestBuiltins:
    """Tests for builtin maps."""

    def test_identity(self) -> None:
        """Test the identity map and its constant."""
        o = IdentityMap(UNIT)
        z = np.array([[0.1, 0.2], [0.9, 0.4]])
        np.testing.assert_array_equal(o.eval(z), z)
        np.testing.assert_array_equal(o.invert(z), z)
        assert o.L == 1.0

    def test_affine_constant(self) -> None:
        """Test that the affine constant is the matrix distortion."""
        o = AffineMap(UNIT, [[2.0, 0.0], [0.0, 0.5]])
        assert o.L == pytest.approx(2.0)
        np.testing.assert_allclose(o.eval([1.0, 1.0]), [2.0, 0.5])

    def test_affine_rejects_reflection(self) -> None:
        """Test that orientation-reversing matrices are rejected."""
        with pytest.raises(ValueError, match="positive determinant"):
            AffineMap(UNIT, [[1.0, 0.0], [0.0, -1.0]])

    def test_shear_sine_constant(self) -> None:
        """Test the closed-form shear constant."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        s = 2.0 * math.pi * 0.1
        assert o.L == pytest.approx((s + math.sqrt(s * s + 4.0)) / 2.0)

    def test_analytic_jacobians_match_differences(self) -> None:
        """Test analytic Jacobians against central differences."""
        z = sample_domain(UNIT, 40, seed=1) * 0.9 + 0.05
        for o in (
            ShearSineMap(UNIT, 0.1, 1.0),
            PolarTwistMap(UNIT, 1.0),
            FoldCandidateMap(UNIT, 1.2),
        ):
            np.testing.assert_allclose(o.diff(z), o.fd_diff(z), atol=1e-6)

    def test_inverses(self) -> None:
        """Test that closed-form inverses undo the maps."""
        z = sample_domain(UNIT, 100, seed=2)
        for o in (ShearSineMap(UNIT), PolarTwistMap(UNIT), FoldCandidateMap(UNIT)):
            np.testing.assert_allclose(o.invert(o.eval(z)), z, atol=1e-12)

    def test_fold_candidate_preserves_area(self) -> None:
        """Test that the fold candidate has unit Jacobian determinant."""
        z = sample_domain(UNIT, 200, seed=3)
        det = np.linalg.det(FoldCandidateMap(UNIT).diff(z))
        np.testing.assert_allclose(det, 1.0, atol=1e-12)

    def test_fold_candidate_flips_naive_triangle(self) -> None:
        """Test that the quarter-grid triangle near the annulus turns inside out."""
        o = FoldCandidateMap(UNIT, 1.2)
        tri = np.array([[0.5, 0.5], [0.75, 0.75], [0.5, 0.75]])
        assert signed_areas(tri, [[0, 1, 2]])[0] > 0
        assert signed_areas(o.eval(tri), [[0, 1, 2]])[0] < 0

    def test_declared_constants_bound_observed(self) -> None:
        """Test that sampled ratios never exceed the declared constant."""
        for name in ("shear_sine", "polar_twist", "fold_candidate", "affine"):
            o = make_builtin(name)
            assert estimate_L(o, 500, seed=4) <= o.L * (1.0 + 1e-6)

    def test_polar_twist_on_disk(self) -> None:
        """Test the polar twist on a disk domain."""
        disk = Disk(Point2(0.5, 0.5), 0.5)
        o = PolarTwistMap(disk, 1.0)
        s = math.sqrt(0.5)
        assert o.L == pytest.approx((s + math.sqrt(s * s + 4.0)) / 2.0)
        assert o.domain is disk


class TestDomainChecks:
    """Tests for domain checks and inversion failures."""

    def test_eval_outside_raises(self) -> None:
        """Test that evaluation outside the domain raises."""
        with pytest.raises(DomainError, match="1 point"):
            IdentityMap(UNIT).eval([[0.5, 0.5], [1.5, 0.5]])

    def test_eval_unchecked(self) -> None:
        """Test that unchecked evaluation extends the formula."""
        np.testing.assert_array_equal(IdentityMap(UNIT).eval([1.5, 0.5], check=False), [1.5, 0.5])

    def test_invert_outside_image_raises(self) -> None:
        """Test that points outside the image cannot be inverted."""
        with pytest.raises(InversionError):
            IdentityMap(UNIT).invert([[2.0, 2.0]])

    def test_try_invert_mask(self) -> None:
        """Test the success mask of try_invert."""
        _, ok = IdentityMap(UNIT).try_invert([[0.5, 0.5], [2.0, 2.0]])
        assert ok.tolist() == [True, False]

    def test_invert_extended_past_boundary(self) -> None:
        """Test that the extended inverse returns preimages outside the domain."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        z = np.array([[0.5, 0.5], [1.2, 0.3], [-0.1, 0.75]])
        w = o.eval(z, check=False)
        np.testing.assert_allclose(o.invert_extended(w), z, atol=1e-12)
        _, ok = o.try_invert(w)
        assert ok.tolist() == [True, False, False]


class TestSampledMap:
    """Tests for sampled maps."""

    def _sampled(self, n: int = 33) -> tuple[SampledMap, ShearSineMap]:
        exact = ShearSineMap(UNIT, 0.05, 1.0)
        xs = np.linspace(0.0, 1.0, n)
        gx, gy = np.meshgrid(xs, xs)
        values = exact.eval(np.column_stack([gx.ravel(), gy.ravel()])).reshape(n, n, 2)
        return SampledMap(xs, xs, values, exact.L), exact

    def test_reproduces_samples(self) -> None:
        """Test that grid nodes are reproduced exactly."""
        o, exact = self._sampled()
        z = np.array([[0.0, 0.0], [0.5, 0.25], [1.0, 1.0]])
        np.testing.assert_allclose(o.eval(z), exact.eval(z), atol=1e-15)

    def test_close_to_exact(self) -> None:
        """Test bilinear accuracy between nodes."""
        o, exact = self._sampled()
        z = sample_domain(UNIT, 200, seed=5)
        assert np.abs(o.eval(z) - exact.eval(z)).max() < 1e-3

    def test_newton_inverse(self) -> None:
        """Test the generic Newton inversion."""
        o, _ = self._sampled()
        z = sample_domain(UNIT, 50, seed=6) * 0.8 + 0.1
        np.testing.assert_allclose(o.invert(o.eval(z)), z, atol=1e-8)

    def test_shape_check(self) -> None:
        """Test that mismatched sample arrays are rejected."""
        with pytest.raises(ValueError, match="Invalid samples of shape"):
            SampledMap([0, 1], [0, 1], np.zeros((3, 2, 2)), 1.0)


class TestSpecs:
    """Tests for map specs and the catalogue."""

    def test_map_from_spec(self) -> None:
        """Test parameter parsing."""
        o = map_from_spec("shear_sine:a=0.2,k=2")
        assert isinstance(o, ShearSineMap)
        assert o.params == {"a": 0.2, "k": 2.0}

    def test_unknown_parameter(self) -> None:
        """Test error for unknown parameters."""
        with pytest.raises(ValueError, match="Invalid parameter"):
            map_from_spec("shear_sine:q=1")

    def test_non_numeric_parameter(self) -> None:
        """Test error for non-numeric parameters."""
        with pytest.raises(ValueError, match="must be numbers"):
            map_from_spec("polar_twist:tau=x")

    def test_unknown_map(self) -> None:
        """Test error for unknown names."""
        with pytest.raises(ValueError, match="Invalid map 'swirl'"):
            map_from_spec("swirl")

    def test_catalogue(self) -> None:
        """Test the builtin catalogue table."""
        df = builtin_catalogue()
        assert list(df["name"]) == [
            "identity",
            "affine",
            "shear_sine",
            "polar_twist",
            "fold_candidate",
        ]
        assert (df["L"] >= 1.0).all()
