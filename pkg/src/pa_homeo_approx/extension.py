"""Piecewise-affine extension of a boundary map of a square onto the polygon it bounds.

The boundary data is a list of breakpoints on the square boundary,
counterclockwise from the south-west corner, with one image point each. The
extension mesh keeps those breakpoints as its first vertices, so its
restriction to the boundary is the boundary map itself.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import ArrayLike

from pa_homeo_approx.config import C1, RING_MAX_INNER, UNTANGLE_MAX_SWEEPS
from pa_homeo_approx.exceptions import ExtensionError
from pa_homeo_approx.geometry import (
    FloatArray,
    IntArray,
    Point2,
    Square,
    orient,
    point_in_triangle,
    polygon_is_simple,
    signed_areas,
    snap_quantum,
)
from pa_homeo_approx.metrics import PAMap, pa_bilip

logger = logging.getLogger(__name__)

Guide = Callable[[FloatArray], FloatArray]

_SIDE_TOL = 1e-12
_INNERMOST_SCALE = 0.2


@dataclass(frozen=True, eq=False)
class BoundaryMap:
    """Breakpoints on the boundary of a square and their images."""

    square: Square
    breakpoints: FloatArray
    images: FloatArray
    square_id: int = -1

    def __post_init__(self) -> None:
        pts = np.asarray(self.breakpoints, dtype=float).reshape(-1, 2)
        img = np.asarray(self.images, dtype=float).reshape(-1, 2)
        if len(pts) != len(img):
            raise ValueError(
                f"Invalid boundary map with {len(pts)} breakpoints and {len(img)} images"
            )
        if len(pts) < 4:
            raise ValueError(f"Invalid boundary map with {len(pts)} breakpoints. Must be >= 4")
        object.__setattr__(self, "breakpoints", pts)
        object.__setattr__(self, "images", img)

    @classmethod
    def from_function(
        cls, square: Square, f: Callable[[FloatArray], FloatArray], per_side: int = 1
    ) -> BoundaryMap:
        """Sample ``f`` at ``per_side`` equally spaced breakpoints per side, corners included."""
        sigma = np.arange(4 * per_side) / per_side
        pts = boundary_points(square, sigma)
        return cls(square, pts, np.asarray(f(pts), dtype=float))

    @property
    def n(self) -> int:
        return len(self.breakpoints)

    @cached_property
    def sigma(self) -> FloatArray:
        """Boundary parameter in ``[0, 4)``, one unit per side, ccw from the SW corner."""
        return boundary_parameter(self.square, self.breakpoints)

    def validate(self) -> None:
        """Check the breakpoint order and that the images bound a counterclockwise simple polygon.

        Raises
        ------
        ExtensionError
            If the breakpoints miss a corner or are out of order, or the image
            polygon is not simple or not counterclockwise.

        """
        s = self.sigma
        if np.any(np.diff(s) <= 0) or s[0] != 0.0:
            raise ExtensionError(
                self.square_id, "breakpoints are not counterclockwise from the SW corner"
            )
        if not all(np.any(s == c) for c in (0.0, 1.0, 2.0, 3.0)):
            raise ExtensionError(self.square_id, "breakpoints miss a corner of the square")
        quantum = snap_quantum(float(np.ptp(self.images, axis=0).max()))
        if not polygon_is_simple(self.images, quantum):
            raise ExtensionError(self.square_id, "image polygon is not simple")
        if _polygon_area(self.images) <= 0:
            raise ExtensionError(
                self.square_id, "image polygon orientation does not match the square"
            )


@dataclass(frozen=True, eq=False)
class ExtensionMesh:
    """A piecewise-affine map of the square whose first vertices are the boundary breakpoints."""

    boundary: BoundaryMap
    mesh: PAMap
    method: str

    @property
    def square_id(self) -> int:
        return self.boundary.square_id

    def boundary_exact(self) -> bool:
        n = self.boundary.n
        return bool(
            np.array_equal(self.mesh.vertices[:n], self.boundary.breakpoints)
            and np.array_equal(self.mesh.images[:n], self.boundary.images)
        )


def boundary_parameter(square: Square, points: ArrayLike) -> FloatArray:
    """Counterclockwise boundary parameter in ``[0, 4)`` of points on the square boundary."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    x0, y0 = square.lower_left
    u = (p[:, 0] - x0) / square.side
    v = (p[:, 1] - y0) / square.side
    out = np.full(len(p), np.nan)
    bottom = (np.abs(v) <= _SIDE_TOL) & (u < 1.0 - _SIDE_TOL)
    right = ~bottom & (np.abs(u - 1.0) <= _SIDE_TOL) & (v < 1.0 - _SIDE_TOL)
    top = ~bottom & ~right & (np.abs(v - 1.0) <= _SIDE_TOL) & (u > _SIDE_TOL)
    left = ~bottom & ~right & ~top & (np.abs(u) <= _SIDE_TOL)
    out[bottom] = np.clip(u[bottom], 0.0, 1.0)
    out[right] = 1.0 + np.clip(v[right], 0.0, 1.0)
    out[top] = 2.0 + np.clip(1.0 - u[top], 0.0, 1.0)
    out[left] = 3.0 + np.clip(1.0 - v[left], 0.0, 1.0)
    if np.any(np.isnan(out)):
        raise ValueError("Invalid breakpoints. Must lie on the square boundary")
    # snap exact corners so the order checks compare cleanly
    snapped = np.round(out)
    corner = np.abs(out - snapped) <= _SIDE_TOL
    out[corner] = snapped[corner] % 4.0
    return out


def boundary_points(square: Square, sigma: ArrayLike) -> FloatArray:
    """Points of the square boundary at parameters ``sigma``."""
    s = np.asarray(sigma, dtype=float) % 4.0
    side = np.floor(s)
    f = s - side
    x0, y0 = square.lower_left
    first = [side == 0, side == 1, side == 2]
    one, zero = np.ones_like(f), np.zeros_like(f)
    u = np.select(first, [f, one, 1.0 - f], zero)
    v = np.select(first, [zero, f, one], 1.0 - f)
    return np.column_stack([x0 + u * square.side, y0 + v * square.side])


def _polygon_area(p: FloatArray) -> float:
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


# ---------------------------------------------------------------------------
# Ring mesh
# ---------------------------------------------------------------------------


def _rings(sigma: FloatArray) -> list[IntArray]:
    rings = [np.arange(len(sigma))]
    while len(rings[-1]) > RING_MAX_INNER:
        prev = rings[-1]
        keep = (np.arange(len(prev)) % 2 == 0) | (sigma[prev] == np.round(sigma[prev]))
        if keep.all():
            break
        rings.append(prev[keep])
    return rings


def _zipper(
    outer: IntArray, inner: IntArray, s_out: FloatArray, s_in: FloatArray
) -> list[tuple[int, int, int]]:
    na, nb = len(outer), len(inner)
    tris: list[tuple[int, int, int]] = []
    i = j = 0
    while i < na or j < nb:
        sa = s_out[i + 1] if i + 1 < na else 4.0
        sb = s_in[j + 1] if j + 1 < nb else 4.0
        if i < na and (j >= nb or sa <= sb):
            tris.append((int(outer[i]), int(outer[(i + 1) % na]), int(inner[j % nb])))
            i += 1
        else:
            tris.append((int(outer[i % na]), int(inner[(j + 1) % nb]), int(inner[j])))
            j += 1
    return tris


def ring_mesh(bm: BoundaryMap) -> tuple[FloatArray, IntArray]:
    """Graded concentric-ring triangulation of the square with the breakpoints as outer ring.

    Each inner ring keeps every other vertex of the ring outside it (and the
    corners) until at most ``RING_MAX_INNER`` are left; the last ring is
    fanned to the centre.

    Returns
    -------
    tuple[FloatArray, IntArray]
        Vertices (breakpoints first, centre last) and counterclockwise triangles.

    """
    sigma = bm.sigma
    rings = _rings(sigma)
    depth = len(rings) - 1
    centre = np.asarray(bm.square.center, dtype=float)
    vertices = [bm.breakpoints]
    index_rings = [rings[0]]
    offset = bm.n
    for j in range(1, depth + 1):
        scale = 1.0 - (1.0 - _INNERMOST_SCALE) * (2**j - 1) / (2**depth - 1)
        pts = centre + scale * (bm.breakpoints[rings[j]] - centre)
        vertices.append(pts)
        index_rings.append(np.arange(offset, offset + len(pts)))
        offset += len(pts)
    vertices.append(centre[None])
    tris: list[tuple[int, int, int]] = []
    for j in range(depth):
        outer, inner = index_rings[j], index_rings[j + 1]
        tris.extend(_zipper(outer, inner, sigma[rings[j]], sigma[rings[j + 1]]))
    last = index_rings[-1]
    for k in range(len(last)):
        tris.append((int(last[k]), int(last[(k + 1) % len(last)]), offset))
    return np.vstack(vertices), np.asarray(tris, dtype=np.int64)


# ---------------------------------------------------------------------------
# Image placement
# ---------------------------------------------------------------------------


def coons_patch(bm: BoundaryMap, values: FloatArray, points: FloatArray) -> FloatArray:
    """Transfinite interpolation inside the square of data given at the breakpoints.

    The data is linear between breakpoints along each side.
    """
    sigma = np.append(bm.sigma, 4.0)
    data = np.vstack([values, values[:1]])

    def edge(s: FloatArray) -> FloatArray:
        return np.column_stack([np.interp(s, sigma, data[:, 0]), np.interp(s, sigma, data[:, 1])])

    x0, y0 = bm.square.lower_left
    s = np.clip((points[:, 0] - x0) / bm.square.side, 0.0, 1.0)
    t = np.clip((points[:, 1] - y0) / bm.square.side, 0.0, 1.0)
    s_, t_ = s[:, None], t[:, None]
    bottom, right = edge(s), edge(1.0 + t)
    top, left = edge(2.0 + (1.0 - s)), edge(3.0 + (1.0 - t))
    p00, p10, p11, p01 = edge(np.array([0.0, 1.0, 2.0, 3.0]))
    return np.asarray(
        (1 - t_) * bottom
        + t_ * top
        + (1 - s_) * left
        + s_ * right
        - ((1 - s_) * (1 - t_) * p00 + s_ * (1 - t_) * p10 + (1 - s_) * t_ * p01 + s_ * t_ * p11)
    )


def convex_combination(
    n_vertices: int, triangles: IntArray, fixed: IntArray, fixed_values: FloatArray
) -> FloatArray:
    """Place free vertices at the average of their neighbours, fixed vertices held.

    Solves the uniform-weight graph Laplacian system with a sparse direct solver.
    """
    t = triangles
    edges = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_vertices, n_vertices)).tocsr()
    degree = np.asarray(adj.sum(axis=1)).ravel()
    lap = (sp.diags(degree) - adj).tocsr()
    is_fixed = np.zeros(n_vertices, dtype=bool)
    is_fixed[fixed] = True
    free = np.flatnonzero(~is_fixed)
    out = np.zeros((n_vertices, 2))
    out[fixed] = fixed_values
    if len(free) == 0:
        return out
    a = lap[free][:, free].tocsc()
    b = -lap[free][:, fixed] @ fixed_values
    sol = spla.spsolve(a, b)
    out[free] = np.asarray(sol).reshape(len(free), 2)
    return out


# ---------------------------------------------------------------------------
# Ear-clipping pull-back
# ---------------------------------------------------------------------------


def ear_clip(polygon: FloatArray, quantum: float | None = None) -> IntArray:
    """Triangulate a counterclockwise simple polygon by clipping strictly convex ears.

    Raises
    ------
    ValueError
        If no ear is left before the polygon is exhausted.

    """
    remaining = list(range(len(polygon)))
    tris: list[tuple[int, int, int]] = []
    while len(remaining) > 3:
        m = len(remaining)
        for k in range(m):
            a, b, c = remaining[k - 1], remaining[k], remaining[(k + 1) % m]
            if orient(polygon[a], polygon[b], polygon[c], quantum)[0] <= 0:
                continue
            others = [v for v in remaining if v not in (a, b, c)]
            if others and np.any(
                point_in_triangle(polygon[others], polygon[a], polygon[b], polygon[c], quantum)
            ):
                continue
            tris.append((a, b, c))
            remaining.pop(k)
            break
        else:
            raise ValueError(f"Polygon has no ear left with {m} vertices")
    a, b, c = remaining
    if orient(polygon[a], polygon[b], polygon[c], quantum)[0] <= 0:
        raise ValueError("Last ear is degenerate")
    tris.append((a, b, c))
    return np.asarray(tris, dtype=np.int64)


def split_diagonals(n_boundary: int, triangles: IntArray) -> tuple[IntArray, IntArray]:
    """Split every edge joining two non-adjacent boundary vertices at a new midpoint vertex.

    Returns
    -------
    tuple[IntArray, IntArray]
        New triangles and the ``(a, b)`` endpoints of the midpoint vertices
        ``n_boundary, n_boundary + 1, ...``.

    """
    tris = [tuple(int(v) for v in t) for t in triangles]
    edges = {tuple(sorted((t[i], t[(i + 1) % 3]))) for t in tris for i in range(3)}
    diagonals = sorted(
        (a, b) for a, b in edges if (b - a) % n_boundary not in (1, n_boundary - 1)
    )
    ends: list[tuple[int, int]] = []
    for a, b in diagonals:
        mid = n_boundary + len(ends)
        ends.append((a, b))
        nxt: list[tuple[int, int, int]] = []
        for t in tris:
            k = next((i for i in range(3) if {t[i], t[(i + 1) % 3]} == {a, b}), None)
            if k is None:
                nxt.append(t)
                continue
            p, q, r = t[k], t[(k + 1) % 3], t[(k + 2) % 3]
            nxt.extend([(p, mid, r), (mid, q, r)])
        tris = nxt
    return np.asarray(tris, dtype=np.int64), np.asarray(ends, dtype=np.int64).reshape(-1, 2)


def untangle(
    vertices: FloatArray, triangles: IntArray, free: IntArray, max_sweeps: int = UNTANGLE_MAX_SWEEPS
) -> FloatArray | None:
    """Move free vertices until every triangle is counterclockwise; None if the cap is hit.

    A vertex on a non-positive triangle moves to whichever of the average of
    its neighbours and the area-weighted centroid of its star gives the
    largest smallest incident area, damped toward its position when neither
    improves it.
    """
    v = vertices.copy()
    star: dict[int, IntArray] = {int(f): np.flatnonzero((triangles == f).any(axis=1)) for f in free}
    nbrs = {
        f: np.setdiff1d(np.unique(triangles[idx]), [f]) for f, idx in star.items()
    }
    for sweep in range(max_sweeps):
        areas = signed_areas(v, triangles)
        if np.all(areas > 0):
            if sweep:
                logger.debug("Untangled after %d sweeps", sweep)
            return v
        moved = False
        for f, idx in star.items():
            if np.all(areas[idx] > 0):
                continue
            current = float(signed_areas(v, triangles[idx]).min())
            t = triangles[idx]
            cent = v[t].mean(axis=1)
            w = np.abs(signed_areas(v, t)) + 1e-300
            candidates = [
                v[nbrs[f]].mean(axis=0),
                (cent * w[:, None]).sum(axis=0) / w.sum(),
            ]
            best, best_area = v[f].copy(), current
            for cand in candidates:
                for step in (1.0, 0.5, 0.25):
                    trial = v.copy()
                    trial[f] = v[f] + step * (cand - v[f])
                    a = float(signed_areas(trial, t).min())
                    if a > best_area:
                        best, best_area = trial[f], a
            if best_area > current:
                v[f] = best
                moved = True
            areas = signed_areas(v, triangles)
        if not moved:
            return None
    return None


def pull_back(bm: BoundaryMap) -> PAMap | None:
    """Ear-clip the image polygon and place the same combinatorics in the square.

    Returns None if the domain copy cannot be untangled.
    """
    n = bm.n
    quantum = snap_quantum(float(np.ptp(bm.images, axis=0).max()))
    try:
        ears = ear_clip(bm.images, quantum)
    except ValueError as e:
        logger.debug("Ear clipping failed on square %d: %s", bm.square_id, e)
        return None
    tris, ends = split_diagonals(n, ears)
    images = np.vstack([bm.images, 0.5 * (bm.images[ends[:, 0]] + bm.images[ends[:, 1]])])
    fixed = np.arange(n)
    domain = convex_combination(len(images), tris, fixed, bm.breakpoints)
    domain[:n] = bm.breakpoints
    if not np.all(signed_areas(domain, tris) > 0):
        placed = untangle(domain, tris, np.arange(n, len(images)))
        if placed is None:
            return None
        domain = placed
    return PAMap.from_arrays(domain, tris, images)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def extend_square(bm: BoundaryMap, guide: Guide | None = None) -> ExtensionMesh:
    """Extend a boundary map to a piecewise-affine homeomorphism of the square.

    Tries in turn: the ring mesh with images from ``guide`` plus a Coons
    correction of the boundary mismatch (or the Coons patch of the boundary
    data alone), the ring mesh with convex-combination images, and the
    ear-clipping pull-back.

    Parameters
    ----------
    bm : BoundaryMap
        Boundary data.
    guide : Guide | None
        A map close to the boundary data, evaluated at interior vertices.

    Returns
    -------
    ExtensionMesh
        The extension.

    Raises
    ------
    ExtensionError
        If the boundary data is invalid or every strategy fails.

    """
    bm.validate()
    vertices, tris = ring_mesh(bm)
    n = bm.n
    interior = vertices[n:]
    if guide is not None:
        base = np.asarray(guide(interior), dtype=float)
        residual = bm.images - np.asarray(guide(bm.breakpoints), dtype=float)
        placed = base + coons_patch(bm, residual, interior)
    else:
        placed = coons_patch(bm, bm.images, interior)
    images = np.vstack([bm.images, placed])
    if np.all(signed_areas(images, tris) > 0):
        return ExtensionMesh(bm, PAMap.from_arrays(vertices, tris, images), "coons")

    images = convex_combination(len(vertices), tris, np.arange(n), bm.images)
    images[:n] = bm.images
    if np.all(signed_areas(images, tris) > 0):
        logger.debug("Square %d extended by convex combination", bm.square_id)
        return ExtensionMesh(bm, PAMap.from_arrays(vertices, tris, images), "tutte")

    mesh = pull_back(bm)
    if mesh is not None:
        logger.debug("Square %d extended by ear-clipping pull-back", bm.square_id)
        return ExtensionMesh(bm, mesh, "pullback")
    raise ExtensionError(bm.square_id, "untangling did not converge")


def measured_bilip(em: ExtensionMesh) -> float:
    """Largest ``max(sigma_max, 1/sigma_min)`` over the affine pieces of an extension."""
    return pa_bilip(em.mesh)


def within_ceiling(em: ExtensionMesh, L: float) -> bool:  # noqa: N803
    """Whether the measured constant is below ``C1 * L**4``."""
    return measured_bilip(em) <= C1 * L**4


def square_of(lower_left: ArrayLike, side: float) -> Square:
    x0, y0 = (float(v) for v in np.asarray(lower_left, dtype=float))
    return Square(Point2(x0 + side / 2.0, y0 + side / 2.0), side)
