"""Tests for exceptions module."""

from pa_homeo_approx.exceptions import (
    ClassificationError,
    CrossError,
    DomainError,
    ExtensionError,
    InversionError,
    MeshFormatError,
    PAApproxError,
    TilingError,
    ValidationError,
)


class TestExceptionHierarchy:
    """Tests for exception hierarchy."""

    def test_all_exceptions_inherit_from_base(self) -> None:
        """Test that all exceptions inherit from PAApproxError."""
        for cls in (
            DomainError,
            InversionError,
            ClassificationError,
            TilingError,
            CrossError,
            ExtensionError,
            MeshFormatError,
            ValidationError,
        ):
            assert issubclass(cls, PAApproxError)

    def test_base_inherits_from_exception(self) -> None:
        """Test that base exception inherits from Exception."""
        assert issubclass(PAApproxError, Exception)


class TestMessages:
    """Tests for exceptions that build their own message."""

    def test_domain_error(self) -> None:
        """Test DomainError attributes and message."""
        error = DomainError("points", 3)
        assert error.count == 3
        assert str(error) == "3 points outside the domain"

    def test_inversion_error(self) -> None:
        """Test InversionError attributes and message."""
        error = InversionError(2, 1.5e-3)
        assert error.count == 2
        assert error.residual == 1.5e-3
        assert "2 point(s)" in str(error)
        assert "1.500e-03" in str(error)

    def test_cross_error(self) -> None:
        """Test CrossError attributes and message."""
        error = CrossError(7, "vertex not in Q'")
        assert error.vertex == 7
        assert str(error) == "Cross at vertex 7: vertex not in Q'"

    def test_extension_error(self) -> None:
        """Test ExtensionError attributes and message."""
        error = ExtensionError(12, "untangling did not converge")
        assert error.square_id == 12
        assert error.reason == "untangling did not converge"
        assert str(error) == "Extension of square 12 failed: untangling did not converge"

    def test_mesh_format_error(self) -> None:
        """Test MeshFormatError attributes and message."""
        error = MeshFormatError("mesh.pamesh", 4, "expected 't i j k'")
        assert error.path == "mesh.pamesh"
        assert error.line_number == 4
        assert str(error) == "mesh.pamesh:4: expected 't i j k'"
