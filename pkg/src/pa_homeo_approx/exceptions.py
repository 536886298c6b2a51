"""Custom exceptions for pa-homeo-approx."""

from __future__ import annotations


class PAApproxError(Exception):
    """Base exception for pa-homeo-approx."""

    pass


class DomainError(PAApproxError):
    """Point, stencil or square outside the domain of a map."""

    def __init__(self, what: str, count: int = 1):
        self.what = what
        self.count = count

        super().__init__(f"{count} {what} outside the domain")


class InversionError(PAApproxError):
    """Newton inversion did not converge."""

    def __init__(self, count: int, residual: float):
        self.count = count
        self.residual = residual

        super().__init__(
            f"Inversion failed for {count} point(s); worst residual {residual:.3e}"
            " (point outside the image or tolerance too tight)"
        )


class ClassificationError(PAApproxError):
    """Lebesgue classification cannot run on this domain and side length."""

    pass


class TilingError(PAApproxError):
    """Inner right polygon is not strictly inside the domain or not grid aligned."""

    pass


class CrossError(PAApproxError):
    """Cross requested for a vertex outside Q' or missing when assembling the grid map."""

    def __init__(self, vertex: int, reason: str):
        self.vertex = vertex
        self.reason = reason

        super().__init__(f"Cross at vertex {vertex}: {reason}")


class ExtensionError(PAApproxError):
    """Piecewise-affine extension of one square failed."""

    def __init__(self, square_id: int, reason: str):
        self.square_id = square_id
        self.reason = reason

        super().__init__(f"Extension of square {square_id} failed: {reason}")


class MeshFormatError(PAApproxError):
    """Malformed PAMESH or SAMPLEDMAP file."""

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        self.reason = reason

        super().__init__(f"{path}:{line_number}: {reason}")


class ValidationError(PAApproxError):
    """An internal certificate disagreed with its independent check."""

    pass
