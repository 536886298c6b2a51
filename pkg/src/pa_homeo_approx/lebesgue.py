"""Lebesgue squares: averaged Jacobian deviation, the inner right polygon and its interpolation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from pa_homeo_approx.config import DEFAULT_CONCURRENCY, DEFAULT_QUAD_N
from pa_homeo_approx.exceptions import ClassificationError
from pa_homeo_approx.geometry import (
    FloatArray,
    IntArray,
    Mat2,
    Point2,
    RightPolygon,
    Square,
    Triangulation,
    in_L_class_many,
    singular_values,
)
from pa_homeo_approx.maps import MapOracle
from pa_homeo_approx.metrics import PAMap
from pa_homeo_approx.workers import chunked, map_ordered

logger = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_CHUNK_SQUARES = 512


def _square_nodes(lower_left: FloatArray, side: float, quad_n: int) -> FloatArray:
    """Midpoint-rule nodes of squares, shape ``(k, quad_n**2, 2)``."""
    offsets = (np.arange(quad_n) + 0.5) * (side / quad_n)
    gx, gy = np.meshgrid(offsets, offsets, indexing="xy")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    return np.asarray(lower_left[:, None, :] + grid[None])


def avg_deviations(
    o: MapOracle, lower_left: ArrayLike, side: float, matrices: ArrayLike, quad_n: int
) -> FloatArray:
    """Mean operator-norm deviation of ``Du`` from one matrix per square, for a batch of squares."""
    ll = np.asarray(lower_left, dtype=float).reshape(-1, 2)
    mats = np.asarray(matrices, dtype=float).reshape(-1, 2, 2)
    nodes = _square_nodes(ll, side, quad_n)
    jac = o.diff(nodes.reshape(-1, 2)).reshape(len(ll), quad_n * quad_n, 2, 2)
    smax, _ = singular_values(jac - mats[:, None])
    return np.asarray(smax.mean(axis=1))


def avg_deviation(
    o: MapOracle, sq: Square, m: Mat2 | ArrayLike, quad_n: int = DEFAULT_QUAD_N
) -> float:
    """Mean of ``|Du(z) - m|`` over the square by the midpoint rule on a ``quad_n`` subgrid.

    Parameters
    ----------
    o : MapOracle
        Map whose Jacobian is averaged.
    sq : Square
        Square compactly inside the domain.
    m : Mat2 | ArrayLike
        Reference matrix.
    quad_n : int
        Nodes per axis, at least 2.

    Returns
    -------
    float
        The averaged deviation.

    Raises
    ------
    DomainError
        If a quadrature node lies outside the domain.

    """
    if quad_n < 2:
        raise ValueError(f"Invalid quad_n {quad_n}. Must be >= 2")
    mat = m.as_array() if isinstance(m, Mat2) else np.asarray(m, dtype=float)
    return float(avg_deviations(o, np.asarray([sq.lower_left]), sq.side, mat[None], quad_n)[0])


def delta_of_eta(eta: float, L: float) -> float:  # noqa: N803
    """Averaged deviation that guarantees a sup distance ``eta * rho`` to an affine map.

    Minimising ``4 sqrt(2) L / R + 2 R delta`` over ``R`` gives
    ``4 sqrt(2 sqrt(2) L delta)``; solving for ``delta`` yields
    ``eta**2 / (32 sqrt(2) L)``.
    """
    if not eta > 0:
        raise ValueError(f"Invalid eta {eta}. Must be positive")
    if not L >= 1:
        raise ValueError(f"Invalid L {L}. Must be >= 1")
    return eta * eta / (32.0 * _SQRT2 * L)


def eta_of_delta(delta: float, L: float) -> float:  # noqa: N803
    """Inverse of :func:`delta_of_eta`."""
    return 4.0 * math.sqrt(2.0 * _SQRT2 * L * max(delta, 0.0))


def check_linfty_lemma(
    o: MapOracle, sq_center: Point2 | ArrayLike, rho: float, m: Mat2 | ArrayLike, n: int = 64
) -> float:
    """Sup of ``|u(z) - u(c) - m (z - c)|`` over an ``n x n`` grid of the square ``D(c, rho)``."""
    c = np.asarray(sq_center, dtype=float)
    mat = m.as_array() if isinstance(m, Mat2) else np.asarray(m, dtype=float)
    ticks = np.linspace(-rho / 2.0, rho / 2.0, n)
    gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
    d = np.column_stack([gx.ravel(), gy.ravel()])
    approx = o.eval(c) + d @ mat.T
    return float(np.hypot(*(o.eval(c + d) - approx).T).max())


def _quadratic_cap(a: float, b: float, k: float) -> float:
    """Largest ``x >= 0`` with ``a x**2 + b x <= k`` (``a, b >= 0``, ``k >= 0``)."""
    if k <= 0:
        return 0.0
    return 2.0 * k / (b + math.sqrt(b * b + 4.0 * a * k))


def eta_budget(L: float, eps: float, p: float, r: float, area_omega: float) -> float:  # noqa: N803
    """Largest ``eta`` meeting every explicit constraint of the interpolation estimates.

    Parameters
    ----------
    L : float
        Bi-Lipschitz constant of the input map.
    eps : float
        Internal accuracy.
    p : float
        Sobolev exponent.
    r : float
        Tile side.
    area_omega : float
        Area of the domain.

    Returns
    -------
    float
        The admissible ``eta``, always below ``1/(6L)``.

    """
    for name, value in (("L", L), ("eps", eps), ("p", p), ("r", r), ("area", area_omega)):
        if not value > 0:
            raise ValueError(f"Invalid {name} {value}. Must be positive")
    c = 1.0 / (32.0 * _SQRT2 * L)
    weight = (3.0 * L) ** (p - 1.0) * area_omega
    budget = (eps / 4.0) ** p
    caps = [
        (1.0 - 1e-12) / (6.0 * L),
        eps / (24.0 * L * r),
        _quadratic_cap(9.0 * c, 9.0, budget / weight),
        _quadratic_cap(9.0 * L**4 * c, 18.0 * L * L, budget / weight),
        eps / (12.0 * L * (L + eps)),
        _SQRT2 / (36.0 * L**3),
    ]
    return min(caps)


@dataclass(frozen=True, eq=False)
class LebesgueClassification:
    """Outcome of the Lebesgue-square test on the eligible cells of an r-grid.

    ``cells`` are integer grid coordinates relative to ``origin``; a cell is
    eligible when its threefold enlargement is compactly inside the domain.
    """

    r: float
    origin: Point2
    delta: float
    quad_n: int
    cells: IntArray
    accepted: np.ndarray
    matrices: FloatArray
    deviations: FloatArray
    domain_area: float

    @property
    def accepted_cells(self) -> IntArray:
        return self.cells[self.accepted]

    @property
    def rejected_cells(self) -> IntArray:
        return self.cells[~self.accepted]

    @property
    def accepted_area(self) -> float:
        return int(np.count_nonzero(self.accepted)) * self.r * self.r

    @property
    def area_deficit(self) -> float:
        """Measure of the domain outside the union of accepted squares."""
        return max(0.0, self.domain_area - self.accepted_area)

    @cached_property
    def omega_eps(self) -> RightPolygon | None:
        """Union of the accepted squares, or None when nothing was accepted."""
        cells = self.accepted_cells
        if len(cells) == 0:
            return None
        return RightPolygon(self.r, frozenset((int(i), int(j)) for i, j in cells), self.origin)

    def witness(self, i: int, j: int) -> Mat2:
        """Witness matrix of an accepted cell."""
        hit = np.flatnonzero((self.cells[:, 0] == i) & (self.cells[:, 1] == j) & self.accepted)
        if len(hit) == 0:
            raise KeyError(f"Cell ({i}, {j}) is not accepted")
        return Mat2.from_array(self.matrices[hit[0]])

    def table(self) -> pd.DataFrame:
        """One row per eligible cell."""
        m = self.matrices
        return pd.DataFrame(
            {
                "i": self.cells[:, 0],
                "j": self.cells[:, 1],
                "accepted": self.accepted,
                "m11": m[:, 0, 0],
                "m12": m[:, 0, 1],
                "m21": m[:, 1, 0],
                "m22": m[:, 1, 1],
                "deviation": self.deviations,
            }
        )


def grid_origin(o: MapOracle) -> Point2:
    """Lower-left corner of the domain bbox, the origin of every r-grid."""
    x0, y0, _, _ = o.domain.bbox
    return Point2(x0, y0)


def eligible_cells(o: MapOracle, r: float) -> IntArray:
    """Cells of the r-grid whose threefold enlargement is compactly inside the domain."""
    x0, y0, x1, y1 = o.domain.bbox
    nx = math.ceil((x1 - x0) / r - 1e-9)
    ny = math.ceil((y1 - y0) / r - 1e-9)
    keep = [
        (i, j)
        for j in range(1, ny - 1)
        for i in range(1, nx - 1)
        if o.domain.square_inside((x0 + (i - 1) * r, y0 + (j - 1) * r), 3.0 * r)
    ]
    return np.asarray(keep, dtype=np.int64).reshape(-1, 2)


def classify(
    o: MapOracle,
    r: float,
    delta: float,
    quad_n: int = DEFAULT_QUAD_N,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> LebesgueClassification:
    """Accept the r-grid cells on which ``Du`` stays on average within ``delta`` of ``Du(center)``.

    Parameters
    ----------
    o : MapOracle
        Input map.
    r : float
        Tile side.
    delta : float
        Averaged deviation threshold, measured over the threefold enlargement.
    quad_n : int
        Midpoint-rule nodes per axis.
    concurrency : int
        Worker threads for the batches of cells.

    Returns
    -------
    LebesgueClassification
        Accepted and rejected cells with witnesses and deviations.

    Raises
    ------
    ClassificationError
        If no square of side ``r`` fits in the domain bbox.

    """
    if not r > 0 or not delta > 0:
        raise ValueError(f"Invalid r={r} or delta={delta}. Both must be positive")
    x0, y0, x1, y1 = o.domain.bbox
    if r > min(x1 - x0, y1 - y0):
        raise ClassificationError(f"Side r={r} is larger than the domain")
    origin = Point2(x0, y0)
    cells = eligible_cells(o, r)
    centers = np.column_stack([x0 + (cells[:, 0] + 0.5) * r, y0 + (cells[:, 1] + 0.5) * r])
    matrices = o.diff(centers) if len(cells) else np.zeros((0, 2, 2))
    lower_left = centers - 1.5 * r

    def batch(s: slice) -> FloatArray:
        return avg_deviations(o, lower_left[s], 3.0 * r, matrices[s], quad_n)

    parts = map_ordered(batch, chunked(len(cells), _CHUNK_SQUARES), concurrency)
    deviations = np.concatenate(parts) if parts else np.zeros(0)
    accepted = (deviations <= delta) & in_L_class_many(matrices, o.L)
    result = LebesgueClassification(
        r=r,
        origin=origin,
        delta=delta,
        quad_n=quad_n,
        cells=cells,
        accepted=accepted,
        matrices=matrices,
        deviations=deviations,
        domain_area=o.domain.area,
    )
    logger.info(
        "r=%.6g: %d eligible cells, %d accepted, area deficit %.4g",
        r,
        len(cells),
        int(np.count_nonzero(accepted)),
        result.area_deficit,
    )
    return result


@dataclass(frozen=True, eq=False)
class InterpolationMesh:
    """Grid interpolation over a set of r-cells, two triangles per cell."""

    mesh: PAMap
    r: float
    origin: Point2
    cells: IntArray
    vertex_keys: IntArray

    @property
    def cell_of_triangle(self) -> IntArray:
        return np.repeat(np.arange(len(self.cells)), 2)


def interpolate_cells(o: MapOracle, cells: IntArray, r: float, origin: Point2) -> InterpolationMesh:
    """Interpolate ``u`` at the corners of ``cells``, split along each SW-NE diagonal."""
    c = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    corners = np.stack([c, c + (1, 0), c + (1, 1), c + (0, 1)], axis=1)
    keys, inverse = np.unique(corners.reshape(-1, 2), axis=0, return_inverse=True)
    idx = inverse.reshape(-1, 4)
    sw, se, ne, nw = idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]
    triangles = np.stack([np.column_stack([sw, se, ne]), np.column_stack([sw, ne, nw])], axis=1)
    vertices = grid_points(keys, r, origin)
    images = o.eval(vertices, check=False)
    mesh = PAMap(Triangulation(vertices, triangles.reshape(-1, 3)), images)
    return InterpolationMesh(mesh, r, origin, c, keys)


def grid_points(keys: ArrayLike, r: float, origin: Point2) -> FloatArray:
    """Coordinates ``origin + key * r`` of (possibly dyadic) grid keys."""
    k = np.asarray(keys, dtype=float).reshape(-1, 2)
    return np.column_stack([origin.x + k[:, 0] * r, origin.y + k[:, 1] * r])


def interpolate(o: MapOracle, cls: LebesgueClassification) -> InterpolationMesh:
    """Interpolation of ``u`` over the accepted squares.

    Raises
    ------
    ClassificationError
        If no square was accepted.

    """
    cells = cls.accepted_cells
    if len(cells) == 0:
        raise ClassificationError("No Lebesgue square accepted; nothing to interpolate")
    result = interpolate_cells(o, cells, cls.r, cls.origin)
    logger.info("Interpolated %d squares into %d triangles", len(cells), result.mesh.n_triangles)
    return result
