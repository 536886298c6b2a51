"""Planar primitives: points, matrices, squares, polygons, triangulations and predicates.

Orientation and intersection tests use a floating-point filter backed by exact
integer arithmetic on coordinates snapped to a fixed quantum, so nearly
degenerate configurations never flip sign from rounding.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from matplotlib.path import Path as MplPath
from numpy.typing import ArrayLike, NDArray

from pa_homeo_approx.config import DEFAULT_SNAP_EXPONENT, DomainKind

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

# Shewchuk's static error bound for the 2D orientation determinant
_MACHINE_EPS = np.finfo(np.float64).eps / 2.0
_CCW_ERRBOUND = (3.0 + 16.0 * _MACHINE_EPS) * _MACHINE_EPS


class Point2(NamedTuple):
    """A point of the plane."""

    x: float
    y: float


class Mat2(NamedTuple):
    """A real 2x2 matrix ``[[a11, a12], [a21, a22]]``."""

    a11: float
    a12: float
    a21: float
    a22: float

    @classmethod
    def from_array(cls, a: ArrayLike) -> Mat2:
        m = np.asarray(a, dtype=float).reshape(2, 2)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    @classmethod
    def identity(cls) -> Mat2:
        return cls(1.0, 0.0, 0.0, 1.0)

    def as_array(self) -> FloatArray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]], dtype=float)

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    def inverse(self) -> Mat2:
        d = self.det
        if d == 0.0:
            raise ZeroDivisionError("Singular matrix has no inverse")
        return Mat2(self.a22 / d, -self.a12 / d, -self.a21 / d, self.a11 / d)


@dataclass(frozen=True)
class Square:
    """Axis-aligned closed square ``D(center, side)``."""

    center: Point2
    side: float

    def __post_init__(self) -> None:
        if not self.side > 0:
            raise ValueError(f"Invalid square side {self.side}. Must be positive")

    @property
    def lower_left(self) -> Point2:
        h = self.side / 2.0
        return Point2(self.center.x - h, self.center.y - h)

    def corners(self) -> FloatArray:
        """Corners counterclockwise starting at the south-west one."""
        x0, y0 = self.lower_left
        s = self.side
        return np.array([[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]], dtype=float)

    def scaled(self, factor: float) -> Square:
        """Concentric square with side multiplied by ``factor``."""
        return Square(self.center, self.side * factor)


class Triangle(NamedTuple):
    """A triangle given by its three vertices."""

    v0: Point2
    v1: Point2
    v2: Point2


# ---------------------------------------------------------------------------
# Scalar primitives
# ---------------------------------------------------------------------------


def signed_area(t: Triangle) -> float:
    """Signed area of a triangle, positive iff ``(v0, v1, v2)`` is counterclockwise."""
    (x0, y0), (x1, y1), (x2, y2) = t
    return 0.5 * ((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))


def signed_areas(points: ArrayLike, triangles: ArrayLike) -> FloatArray:
    """Vectorised signed areas of ``triangles`` (index triples) over ``points``."""
    p = np.asarray(points, dtype=float)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    ab = p[t[:, 1]] - p[t[:, 0]]
    ac = p[t[:, 2]] - p[t[:, 0]]
    return 0.5 * (ab[:, 0] * ac[:, 1] - ac[:, 0] * ab[:, 1])


def singular_values(m: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Closed-form singular values of one or many 2x2 matrices.

    Parameters
    ----------
    m : ArrayLike
        Array of shape ``(..., 2, 2)``.

    Returns
    -------
    tuple[FloatArray, FloatArray]
        ``(sigma_max, sigma_min)`` with the leading shape of ``m``.

    """
    a = np.asarray(m, dtype=float)
    p = np.hypot(a[..., 0, 0] + a[..., 1, 1], a[..., 1, 0] - a[..., 0, 1])
    q = np.hypot(a[..., 0, 0] - a[..., 1, 1], a[..., 1, 0] + a[..., 0, 1])
    return 0.5 * (p + q), 0.5 * np.abs(p - q)


def op_norm(m: Mat2 | ArrayLike) -> float:
    """Operator norm (largest singular value) of a 2x2 matrix."""
    arr = m.as_array() if isinstance(m, Mat2) else np.asarray(m, dtype=float).reshape(2, 2)
    smax, _ = singular_values(arr)
    return float(smax)


def distortion(m: ArrayLike) -> FloatArray:
    """Per-matrix ``max(sigma_max, 1/sigma_min)``; infinite for singular matrices."""
    smax, smin = singular_values(m)
    with np.errstate(divide="ignore"):
        inv = np.where(smin > 0, 1.0 / np.where(smin > 0, smin, 1.0), np.inf)
    return np.maximum(smax, inv)


def in_L_class(m: Mat2 | ArrayLike, L: float, rtol: float = 1e-12) -> bool:  # noqa: N802
    """Whether ``det m > 0``, ``|m| <= L`` and ``|m^-1| <= L``."""
    arr = m.as_array() if isinstance(m, Mat2) else np.asarray(m, dtype=float).reshape(2, 2)
    det = arr[0, 0] * arr[1, 1] - arr[0, 1] * arr[1, 0]
    if not det > 0:
        return False
    smax, smin = singular_values(arr)
    limit = L * (1.0 + rtol)
    return bool(smax <= limit and 1.0 / smin <= limit)


def in_L_class_many(m: ArrayLike, L: float, rtol: float = 1e-12) -> NDArray[np.bool_]:  # noqa: N802
    """Vectorised :func:`in_L_class` over ``(..., 2, 2)``."""
    a = np.asarray(m, dtype=float)
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    return (det > 0) & (distortion(a) <= L * (1.0 + rtol))


# ---------------------------------------------------------------------------
# Exact-leaning predicates
# ---------------------------------------------------------------------------


def snap_quantum(diameter: float, exponent: int = DEFAULT_SNAP_EXPONENT) -> float:
    """Snapping grid spacing ``2**-exponent`` of ``diameter``."""
    return math.ldexp(max(diameter, 1e-300), -exponent)


def _exact_orient(a: FloatArray, b: FloatArray, c: FloatArray, quantum: float | None) -> int:
    if quantum is None:
        ax, ay, bx, by, cx, cy = (Fraction(float(v)) for v in (*a, *b, *c))
        det_f = (ax - cx) * (by - cy) - (ay - cy) * (bx - cx)
        return (det_f > 0) - (det_f < 0)
    ix, iy, jx, jy, kx, ky = (round(float(v) / quantum) for v in (*a, *b, *c))
    det_i = (ix - kx) * (jy - ky) - (iy - ky) * (jx - kx)
    return (det_i > 0) - (det_i < 0)


def orient(a: ArrayLike, b: ArrayLike, c: ArrayLike, quantum: float | None = None) -> IntArray:
    """Orientation signs of point triples: +1 counterclockwise, -1 clockwise, 0 collinear.

    Parameters
    ----------
    a, b, c : ArrayLike
        Points of shape ``(2,)`` or ``(n, 2)``.
    quantum : float | None
        Snapping grid for the exact fallback. ``None`` evaluates the
        determinant in exact rational arithmetic on the raw floats.

    Returns
    -------
    IntArray
        Signs of shape ``(n,)``.

    """
    pa = np.atleast_2d(np.asarray(a, dtype=float))
    pb = np.atleast_2d(np.asarray(b, dtype=float))
    pc = np.atleast_2d(np.asarray(c, dtype=float))
    pa, pb, pc = np.broadcast_arrays(pa, pb, pc)
    detleft = (pa[:, 0] - pc[:, 0]) * (pb[:, 1] - pc[:, 1])
    detright = (pa[:, 1] - pc[:, 1]) * (pb[:, 0] - pc[:, 0])
    det = detleft - detright
    bound = _CCW_ERRBOUND * (np.abs(detleft) + np.abs(detright))
    signs = np.sign(det).astype(np.int64)
    if quantum is not None:
        uncertain = np.abs(det) <= bound + 4.0 * quantum * (
            np.abs(pa - pc).sum(axis=1) + np.abs(pb - pc).sum(axis=1) + quantum
        )
    else:
        uncertain = np.abs(det) <= bound
    for i in np.flatnonzero(uncertain):
        signs[i] = _exact_orient(pa[i], pb[i], pc[i], quantum)
    return signs


def _on_segment(p: FloatArray, q: FloatArray, r: FloatArray) -> NDArray[np.bool_]:
    """For collinear triples: whether ``r`` lies on the closed segment ``pq``."""
    return (
        (np.minimum(p[:, 0], q[:, 0]) <= r[:, 0])
        & (r[:, 0] <= np.maximum(p[:, 0], q[:, 0]))
        & (np.minimum(p[:, 1], q[:, 1]) <= r[:, 1])
        & (r[:, 1] <= np.maximum(p[:, 1], q[:, 1]))
    )


def segments_intersect(
    p1: ArrayLike,
    p2: ArrayLike,
    q1: ArrayLike,
    q2: ArrayLike,
    quantum: float | None = None,
) -> NDArray[np.bool_]:
    """Whether closed segments ``p1p2`` and ``q1q2`` share at least one point."""
    a1 = np.atleast_2d(np.asarray(p1, dtype=float))
    a2 = np.atleast_2d(np.asarray(p2, dtype=float))
    b1 = np.atleast_2d(np.asarray(q1, dtype=float))
    b2 = np.atleast_2d(np.asarray(q2, dtype=float))
    a1, a2, b1, b2 = np.broadcast_arrays(a1, a2, b1, b2)
    o1 = orient(a1, a2, b1, quantum)
    o2 = orient(a1, a2, b2, quantum)
    o3 = orient(b1, b2, a1, quantum)
    o4 = orient(b1, b2, a2, quantum)
    hit = (o1 * o2 < 0) & (o3 * o4 < 0)
    hit |= (o1 == 0) & _on_segment(a1, a2, b1)
    hit |= (o2 == 0) & _on_segment(a1, a2, b2)
    hit |= (o3 == 0) & _on_segment(b1, b2, a1)
    hit |= (o4 == 0) & _on_segment(b1, b2, a2)
    return hit


def point_in_triangle(
    p: ArrayLike, a: ArrayLike, b: ArrayLike, c: ArrayLike, quantum: float | None = None
) -> NDArray[np.bool_]:
    """Whether ``p`` lies in the closed triangle ``abc`` (either orientation)."""
    s1 = orient(a, b, p, quantum)
    s2 = orient(b, c, p, quantum)
    s3 = orient(c, a, p, quantum)
    has_neg = (s1 < 0) | (s2 < 0) | (s3 < 0)
    has_pos = (s1 > 0) | (s2 > 0) | (s3 > 0)
    return ~(has_neg & has_pos)


# ---------------------------------------------------------------------------
# Spatial hashing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BucketGrid:
    """Uniform bucket grid over axis-aligned boxes, stored in CSR form."""

    origin: FloatArray
    cell: float
    nx: int
    ny: int
    starts: IntArray
    items: IntArray
    boxes: FloatArray

    @classmethod
    def build(cls, boxes: ArrayLike, target_buckets: int | None = None) -> BucketGrid:
        """Register every box ``[xmin, ymin, xmax, ymax]`` in the buckets it overlaps."""
        bx = np.asarray(boxes, dtype=float).reshape(-1, 4)
        m = len(bx)
        if m == 0:
            empty = np.zeros(0, np.int64)
            return cls(np.zeros(2), 1.0, 1, 1, np.zeros(2, dtype=np.int64), empty, bx)
        lo = bx[:, :2].min(axis=0)
        hi = bx[:, 2:].max(axis=0)
        extent = np.maximum(hi - lo, 1e-300)
        target = target_buckets or max(1, 2 * m)
        cell = float(max(math.sqrt(extent[0] * extent[1] / target), extent.max() / 4096.0, 1e-300))
        nx = int(min(4096, max(1, math.ceil(extent[0] / cell))))
        ny = int(min(4096, max(1, math.ceil(extent[1] / cell))))
        ix0, iy0 = cls._index(bx[:, 0], bx[:, 1], lo, cell, nx, ny)
        ix1, iy1 = cls._index(bx[:, 2], bx[:, 3], lo, cell, nx, ny)
        w = ix1 - ix0 + 1
        counts = w * (iy1 - iy0 + 1)
        owner = np.repeat(np.arange(m, dtype=np.int64), counts)
        starts = np.repeat(np.cumsum(counts) - counts, counts)
        offset = np.arange(counts.sum(), dtype=np.int64) - starts
        wr = np.repeat(w, counts)
        bucket = (np.repeat(iy0, counts) + offset // wr) * nx + np.repeat(ix0, counts) + offset % wr
        order = np.argsort(bucket, kind="stable")
        starts = np.zeros(nx * ny + 1, dtype=np.int64)
        np.cumsum(np.bincount(bucket, minlength=nx * ny), out=starts[1:])
        return cls(lo, cell, nx, ny, starts, owner[order], bx)

    @staticmethod
    def _index(
        x: FloatArray, y: FloatArray, lo: FloatArray, cell: float, nx: int, ny: int
    ) -> tuple[IntArray, IntArray]:
        ix = np.clip(np.floor((x - lo[0]) / cell), 0, nx - 1).astype(np.int64)
        iy = np.clip(np.floor((y - lo[1]) / cell), 0, ny - 1).astype(np.int64)
        return ix, iy

    def query_points(self, points: ArrayLike) -> tuple[IntArray, IntArray]:
        """Candidate ``(point_index, item_index)`` pairs for ``points``."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(self.items) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        ix, iy = self._index(p[:, 0], p[:, 1], self.origin, self.cell, self.nx, self.ny)
        b = iy * self.nx + ix
        counts = self.starts[b + 1] - self.starts[b]
        pidx = np.repeat(np.arange(len(p), dtype=np.int64), counts)
        pos = np.repeat(self.starts[b], counts) + (
            np.arange(counts.sum(), dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        )
        return pidx, self.items[pos]

    def overlapping_pairs(self) -> tuple[IntArray, IntArray]:
        """Unique pairs ``i < j`` of boxes sharing a bucket and overlapping."""
        sizes = np.diff(self.starts)
        total = len(self.items)
        if total == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        bucket_of = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)
        rank = np.arange(total, dtype=np.int64) - self.starts[bucket_of]
        partners = sizes[bucket_of] - rank - 1
        first = np.repeat(np.arange(total, dtype=np.int64), partners)
        step = np.arange(partners.sum(), dtype=np.int64) - np.repeat(
            np.cumsum(partners) - partners, partners
        )
        second = first + 1 + step
        i = self.items[first]
        j = self.items[second]
        lo = np.minimum(i, j)
        hi = np.maximum(i, j)
        keep = lo != hi
        key = np.unique(lo[keep] * (len(self.boxes) + 1) + hi[keep])
        lo = key // (len(self.boxes) + 1)
        hi = key % (len(self.boxes) + 1)
        b = self.boxes
        overlap = (
            (b[lo, 0] <= b[hi, 2])
            & (b[hi, 0] <= b[lo, 2])
            & (b[lo, 1] <= b[hi, 3])
            & (b[hi, 1] <= b[lo, 3])
        )
        return lo[overlap], hi[overlap]


def segment_boxes(starts: ArrayLike, ends: ArrayLike) -> FloatArray:
    """Bounding boxes ``[xmin, ymin, xmax, ymax]`` of segments."""
    s = np.asarray(starts, dtype=float).reshape(-1, 2)
    e = np.asarray(ends, dtype=float).reshape(-1, 2)
    lo = np.minimum(s, e)
    hi = np.maximum(s, e)
    return np.column_stack([lo, hi])


def find_segment_crossings(
    starts: ArrayLike,
    ends: ArrayLike,
    ignore: NDArray[np.bool_] | None = None,
    quantum: float | None = None,
    first_only: bool = True,
) -> list[tuple[int, int]]:
    """Pairs of closed segments that intersect.

    Parameters
    ----------
    starts, ends : ArrayLike
        Segment endpoints, shape ``(n, 2)``.
    ignore : NDArray[np.bool_] | None
        Square mask of pairs to skip. When None, pairs of segments sharing an
        endpoint coordinate are skipped.
    quantum : float | None
        Snapping grid for exact fallbacks.
    first_only : bool
        Stop after the first crossing found.

    Returns
    -------
    list[tuple[int, int]]
        Crossing index pairs ``(i, j)`` with ``i < j``.

    """
    s = np.asarray(starts, dtype=float).reshape(-1, 2)
    e = np.asarray(ends, dtype=float).reshape(-1, 2)
    n = len(s)
    if n < 2:
        return []
    if n <= 64:
        ii, jj = np.triu_indices(n, k=1)
        i, j = ii.astype(np.int64), jj.astype(np.int64)
    else:
        i, j = BucketGrid.build(segment_boxes(s, e)).overlapping_pairs()
    share = (
        np.all(s[i] == s[j], axis=1)
        | np.all(s[i] == e[j], axis=1)
        | np.all(e[i] == s[j], axis=1)
        | np.all(e[i] == e[j], axis=1)
    )
    if ignore is not None:
        share = ignore[i, j] if ignore.ndim == 2 else share
    i, j = i[~share], j[~share]
    found: list[tuple[int, int]] = []
    chunk = 4096
    for k in range(0, len(i), chunk):
        ci, cj = i[k : k + chunk], j[k : k + chunk]
        hit = segments_intersect(s[ci], e[ci], s[cj], e[cj], quantum)
        for a, b in zip(ci[hit], cj[hit]):
            found.append((int(a), int(b)))
            if first_only:
                return found
    return found


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


class Domain(ABC):
    """An open bounded planar set with the queries the pipeline needs."""

    @property
    @abstractmethod
    def bbox(self) -> tuple[float, float, float, float]:
        """``(xmin, ymin, xmax, ymax)``."""

    @property
    @abstractmethod
    def area(self) -> float: ...

    @property
    @abstractmethod
    def is_convex(self) -> bool: ...

    @abstractmethod
    def contains(self, points: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_]:
        """Membership in the closure, with points up to ``tol`` outside accepted."""

    @abstractmethod
    def square_inside(self, lower_left: ArrayLike, side: float) -> bool:
        """Whether the closed square lies in the open domain (compact containment)."""

    @abstractmethod
    def square_meets(self, lower_left: ArrayLike, side: float) -> bool:
        """Whether the open square intersects the domain."""

    @property
    def diameter(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def is_right_polygon(self) -> bool:
        return False


@dataclass(frozen=True)
class Polygon(Domain):
    """A closed polygon given by its vertex cycle; as a domain, its interior."""

    vertices: tuple[Point2, ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 3:
            raise ValueError(f"Invalid polygon with {len(self.vertices)} vertices. Must have >= 3")

    @classmethod
    def from_array(cls, points: ArrayLike) -> Polygon:
        return cls(tuple(Point2(float(x), float(y)) for x, y in np.asarray(points, dtype=float)))

    def as_array(self) -> FloatArray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def signed_area(self) -> float:
        p = self.as_array()
        q = np.roll(p, -1, axis=0)
        return float(0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        p = self.as_array()
        (x0, y0), (x1, y1) = p.min(axis=0), p.max(axis=0)
        return float(x0), float(y0), float(x1), float(y1)

    @property
    def is_convex(self) -> bool:
        p = self.as_array()
        s = orient(p, np.roll(p, -1, axis=0), np.roll(p, -2, axis=0))
        return bool(np.all(s >= 0) or np.all(s <= 0))

    def _path(self) -> MplPath:
        return MplPath(self.as_array(), closed=False)

    def contains(self, points: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_]:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        inside = self._path().contains_points(p)
        inside |= self.boundary_distance(p) <= max(tol, 1e-12 * self.diameter)
        return np.asarray(inside, dtype=bool)

    def boundary_distance(self, points: ArrayLike) -> FloatArray:
        """Distance from each point to the polygon boundary."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        a = self.as_array()
        b = np.roll(a, -1, axis=0)
        d = b - a
        ll = np.maximum((d**2).sum(axis=1), 1e-300)
        t = np.clip(((p[:, None, :] - a[None]) * d[None]).sum(axis=2) / ll, 0.0, 1.0)
        proj = a[None] + t[..., None] * d[None]
        return np.asarray(np.sqrt(((p[:, None, :] - proj) ** 2).sum(axis=2)).min(axis=1))

    def square_inside(self, lower_left: ArrayLike, side: float) -> bool:
        x0, y0 = np.asarray(lower_left, dtype=float)
        sq = np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])
        if not np.all(self._path().contains_points(sq)):
            return False
        if np.any(self.boundary_distance(sq) <= 0.0):
            return False
        v = self.as_array()
        in_x = (v[:, 0] >= x0) & (v[:, 0] <= x0 + side)
        if np.any(in_x & (v[:, 1] >= y0) & (v[:, 1] <= y0 + side)):
            return False
        return not find_segment_crossings(
            np.vstack([v, sq]),
            np.vstack([np.roll(v, -1, axis=0), np.roll(sq, -1, axis=0)]),
            ignore=_cross_block_mask(len(v), 4),
        )

    def square_meets(self, lower_left: ArrayLike, side: float) -> bool:
        x0, y0 = np.asarray(lower_left, dtype=float)
        sq = np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])
        center = sq.mean(axis=0, keepdims=True)
        if self._path().contains_points(np.vstack([sq, center])).any():
            return True
        v = self.as_array()
        if np.any((v[:, 0] > x0) & (v[:, 0] < x0 + side) & (v[:, 1] > y0) & (v[:, 1] < y0 + side)):
            return True
        return bool(
            find_segment_crossings(
                np.vstack([v, sq]),
                np.vstack([np.roll(v, -1, axis=0), np.roll(sq, -1, axis=0)]),
                ignore=_cross_block_mask(len(v), 4),
            )
        )


def _cross_block_mask(n: int, m: int) -> NDArray[np.bool_]:
    """Ignore-mask keeping only pairs between the first ``n`` and the last ``m`` segments."""
    mask = np.ones((n + m, n + m), dtype=bool)
    mask[:n, n:] = False
    return mask


@dataclass(frozen=True)
class RightPolygon(Domain):
    """Union of closed grid cells of side ``resolution``; as a domain, its interior."""

    resolution: float
    cells: frozenset[tuple[int, int]]
    origin: Point2 = field(default=Point2(0.0, 0.0))

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValueError(f"Invalid resolution {self.resolution}. Must be positive")
        if not self.cells:
            raise ValueError("Invalid right polygon. Must have at least one cell")

    @classmethod
    def rectangle(cls, x0: float, y0: float, nx: int, ny: int, resolution: float) -> RightPolygon:
        cells = frozenset((i, j) for i in range(nx) for j in range(ny))
        return cls(resolution, cells, Point2(x0, y0))

    @property
    def area(self) -> float:
        return len(self.cells) * self.resolution**2

    @property
    def index_bounds(self) -> tuple[int, int, int, int]:
        ii = [c[0] for c in self.cells]
        jj = [c[1] for c in self.cells]
        return min(ii), min(jj), max(ii) + 1, max(jj) + 1

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        i0, j0, i1, j1 = self.index_bounds
        r, (ox, oy) = self.resolution, self.origin
        return ox + i0 * r, oy + j0 * r, ox + i1 * r, oy + j1 * r

    @property
    def is_right_polygon(self) -> bool:
        return True

    @property
    def is_convex(self) -> bool:
        i0, j0, i1, j1 = self.index_bounds
        return len(self.cells) == (i1 - i0) * (j1 - j0)

    def _occupancy(self) -> tuple[NDArray[np.bool_], int, int]:
        i0, j0, i1, j1 = self.index_bounds
        occ = np.zeros((i1 - i0 + 2, j1 - j0 + 2), dtype=bool)
        for i, j in self.cells:
            occ[i - i0 + 1, j - j0 + 1] = True
        return occ, i0 - 1, j0 - 1

    def cell_lower_left(self, i: int, j: int) -> Point2:
        return Point2(self.origin.x + i * self.resolution, self.origin.y + j * self.resolution)

    def contains(self, points: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_]:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        occ, si, sj = self._occupancy()
        r = self.resolution
        eps = max(tol, 1e-12 * r)
        out = np.zeros(len(p), dtype=bool)
        for dx in (-eps, eps):
            for dy in (-eps, eps):
                gi = np.floor((p[:, 0] + dx - self.origin.x) / r).astype(np.int64) - si
                gj = np.floor((p[:, 1] + dy - self.origin.y) / r).astype(np.int64) - sj
                ok = (gi >= 0) & (gi < occ.shape[0]) & (gj >= 0) & (gj < occ.shape[1])
                hit = np.zeros(len(p), dtype=bool)
                hit[ok] = occ[gi[ok], gj[ok]]
                out |= hit
        return out

    def square_inside(self, lower_left: ArrayLike, side: float) -> bool:
        x0, y0 = (float(v) for v in np.asarray(lower_left, dtype=float))
        r = self.resolution
        tau = 1e-9 * r
        i_lo = math.floor((x0 - tau - self.origin.x) / r)
        i_hi = math.floor((x0 + side + tau - self.origin.x) / r)
        j_lo = math.floor((y0 - tau - self.origin.y) / r)
        j_hi = math.floor((y0 + side + tau - self.origin.y) / r)
        return all(
            (i, j) in self.cells for i in range(i_lo, i_hi + 1) for j in range(j_lo, j_hi + 1)
        )

    def square_meets(self, lower_left: ArrayLike, side: float) -> bool:
        x0, y0 = (float(v) for v in np.asarray(lower_left, dtype=float))
        r = self.resolution
        tau = 1e-9 * r
        i_lo = math.floor((x0 + tau - self.origin.x) / r)
        i_hi = math.floor((x0 + side - tau - self.origin.x) / r)
        j_lo = math.floor((y0 + tau - self.origin.y) / r)
        j_hi = math.floor((y0 + side - tau - self.origin.y) / r)
        return any(
            (i, j) in self.cells for i in range(i_lo, i_hi + 1) for j in range(j_lo, j_hi + 1)
        )

    def boundary_segments(self) -> tuple[FloatArray, FloatArray]:
        """Unit boundary edges of the cell union as ``(starts, ends)``, cells on the left."""
        r, (ox, oy) = self.resolution, self.origin
        starts: list[tuple[float, float]] = []
        ends: list[tuple[float, float]] = []
        for i, j in sorted(self.cells):
            x0, y0 = ox + i * r, oy + j * r
            if (i, j - 1) not in self.cells:
                starts.append((x0, y0))
                ends.append((x0 + r, y0))
            if (i + 1, j) not in self.cells:
                starts.append((x0 + r, y0))
                ends.append((x0 + r, y0 + r))
            if (i, j + 1) not in self.cells:
                starts.append((x0 + r, y0 + r))
                ends.append((x0, y0 + r))
            if (i - 1, j) not in self.cells:
                starts.append((x0, y0 + r))
                ends.append((x0, y0))
        return np.asarray(starts, dtype=float), np.asarray(ends, dtype=float)

    def boundary_distance(self, points: ArrayLike) -> FloatArray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        a, b = self.boundary_segments()
        d = b - a
        ll = (d**2).sum(axis=1)
        t = np.clip(((p[:, None, :] - a[None]) * d[None]).sum(axis=2) / ll, 0.0, 1.0)
        proj = a[None] + t[..., None] * d[None]
        return np.asarray(np.sqrt(((p[:, None, :] - proj) ** 2).sum(axis=2)).min(axis=1))


@dataclass(frozen=True)
class Disk(Domain):
    """Open disk, the non-polygonal domain used to exercise the truncated tiling."""

    center: Point2
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"Invalid radius {self.radius}. Must be positive")

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        return cx - self.radius, cy - self.radius, cx + self.radius, cy + self.radius

    @property
    def is_convex(self) -> bool:
        return True

    def contains(self, points: ArrayLike, tol: float = 0.0) -> NDArray[np.bool_]:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        d = np.hypot(p[:, 0] - self.center.x, p[:, 1] - self.center.y)
        return np.asarray(d <= self.radius * (1 + 1e-12) + tol)

    def boundary_distance(self, points: ArrayLike) -> FloatArray:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        return np.abs(self.radius - np.hypot(p[:, 0] - self.center.x, p[:, 1] - self.center.y))

    def square_inside(self, lower_left: ArrayLike, side: float) -> bool:
        x0, y0 = np.asarray(lower_left, dtype=float)
        sq = np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])
        dist = np.hypot(sq[:, 0] - self.center.x, sq[:, 1] - self.center.y)
        return bool(np.all(dist < self.radius))

    def square_meets(self, lower_left: ArrayLike, side: float) -> bool:
        x0, y0 = (float(v) for v in np.asarray(lower_left, dtype=float))
        nx = min(max(self.center.x, x0), x0 + side)
        ny = min(max(self.center.y, y0), y0 + side)
        return math.hypot(nx - self.center.x, ny - self.center.y) < self.radius


# ---------------------------------------------------------------------------
# Polygons and triangulations
# ---------------------------------------------------------------------------


def polygon_crossing(
    p: Polygon | ArrayLike, quantum: float | None = None
) -> tuple[int, int] | None:
    """First offending edge pair of a polygon, or None when it is simple.

    Edge ``i`` joins vertex ``i`` to vertex ``i + 1``. A repeated vertex is
    reported as the pair of edges leaving the two copies.
    """
    v = p.as_array() if isinstance(p, Polygon) else np.asarray(p, dtype=float).reshape(-1, 2)
    n = len(v)
    _, first, counts = np.unique(v, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = v[first[np.argmax(counts > 1)]]
        idx = np.flatnonzero(np.all(v == dup, axis=1))
        return int(idx[0]), int(idx[1])
    w = np.roll(v, -1, axis=0)
    # adjacent edges (i, i+1) must not fold back onto each other
    nxt = np.roll(v, -2, axis=0)
    folded = (orient(v, w, nxt, quantum) == 0) & (((v - w) * (nxt - w)).sum(axis=1) > 0)
    if np.any(folded):
        i = int(np.argmax(folded))
        return i, (i + 1) % n
    if n == 3:
        return None
    idx = np.arange(n)
    adjacent = (np.abs(idx[:, None] - idx[None, :]) <= 1) | (
        np.abs(idx[:, None] - idx[None, :]) == n - 1
    )
    hits = find_segment_crossings(v, w, ignore=adjacent, quantum=quantum)
    return hits[0] if hits else None


def polygon_is_simple(p: Polygon | ArrayLike, quantum: float | None = None) -> bool:
    """Whether the closed polygon has no self-intersection."""
    return polygon_crossing(p, quantum) is None


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Vertices with index triples; pairwise intersections follow the conforming rule."""

    vertices: FloatArray
    triangles: IntArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float).reshape(-1, 2))
        object.__setattr__(
            self, "triangles", np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> FloatArray:
        return signed_areas(self.vertices, self.triangles)

    def boundary_edges(self) -> IntArray:
        """Edges used by exactly one triangle, oriented as in that triangle."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(e, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return e[counts[inverse.ravel()] == 1]


def _triangle_pair_conforms(
    ta: FloatArray, tb: FloatArray, ia: IntArray, ib: IntArray, quantum: float | None
) -> bool:
    shared = [k for k in ia if k in ib]
    if len(shared) == 3:
        return False
    if len(shared) == 2:
        u, w = ta[list(ia).index(shared[0])], ta[list(ia).index(shared[1])]
        ca = ta[[k for k in range(3) if ia[k] not in shared][0]]
        cb = tb[[k for k in range(3) if ib[k] not in shared][0]]
        return int(orient(u, w, ca, quantum)[0]) * int(orient(u, w, cb, quantum)[0]) < 0
    edges_a = [(0, 1), (1, 2), (2, 0)]
    starts_a = ta[[e[0] for e in edges_a]]
    ends_a = ta[[e[1] for e in edges_a]]
    starts_b = tb[[e[0] for e in edges_a]]
    ends_b = tb[[e[1] for e in edges_a]]
    if len(shared) == 1:
        v = shared[0]
        ka = list(ia).index(v)
        kb = list(ib).index(v)
        for ea, (a0, a1) in enumerate(edges_a):
            for eb, (b0, b1) in enumerate(edges_a):
                inc_a = ka in (a0, a1)
                inc_b = kb in (b0, b1)
                if inc_a and inc_b:
                    pa = ta[a1 if a0 == ka else a0]
                    pb = tb[b1 if b0 == kb else b0]
                    vv = ta[ka]
                    if int(orient(vv, pa, pb, quantum)[0]) == 0 and np.dot(pa - vv, pb - vv) > 0:
                        return False
                    continue
                hit = segments_intersect(
                    starts_a[ea], ends_a[ea], starts_b[eb], ends_b[eb], quantum
                )
                if hit[0]:
                    return False
        others_a = ta[[k for k in range(3) if k != ka]]
        others_b = tb[[k for k in range(3) if k != kb]]
        if np.any(point_in_triangle(others_a, tb[0], tb[1], tb[2], quantum)):
            return False
        return not np.any(point_in_triangle(others_b, ta[0], ta[1], ta[2], quantum))
    hit = segments_intersect(
        np.repeat(starts_a, 3, axis=0),
        np.repeat(ends_a, 3, axis=0),
        np.tile(starts_b, (3, 1)),
        np.tile(ends_b, (3, 1)),
        quantum,
    )
    if np.any(hit):
        return False
    if np.any(point_in_triangle(ta, tb[0], tb[1], tb[2], quantum)):
        return False
    return not np.any(point_in_triangle(tb, ta[0], ta[1], ta[2], quantum))


def nonconforming_pair(
    t: Triangulation, quantum: float | None = None
) -> tuple[int, int] | None:
    """First triangle pair violating the conforming intersection rule, or None."""
    areas = t.signed_areas()
    if np.any(areas == 0.0):
        k = int(np.argmax(areas == 0.0))
        return k, k
    pts = t.vertices
    tri = t.triangles
    corners = pts[tri]
    boxes = np.column_stack([corners.min(axis=1), corners.max(axis=1)])
    if len(tri) <= 64:
        ii, jj = np.triu_indices(len(tri), k=1)
    else:
        ii, jj = BucketGrid.build(boxes).overlapping_pairs()
    for i, j in zip(ii.tolist(), jj.tolist()):
        b = boxes
        if b[i, 0] > b[j, 2] or b[j, 0] > b[i, 2] or b[i, 1] > b[j, 3] or b[j, 1] > b[i, 3]:
            continue
        if not _triangle_pair_conforms(corners[i], corners[j], tri[i], tri[j], quantum):
            return i, j
    return None


def validate_triangulation(t: Triangulation, quantum: float | None = None) -> bool:
    """Whether every triangle pair meets in nothing, a common vertex or a common side."""
    return nonconforming_pair(t, quantum) is None


# ---------------------------------------------------------------------------
# Domain specs
# ---------------------------------------------------------------------------


def _floats(text: str, spec: str, count: int | None = None) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"Invalid domain '{spec}'. Coordinates must be numbers") from None
    if count is not None and len(values) != count:
        raise ValueError(f"Invalid domain '{spec}'. Expected {count} numbers, got {len(values)}")
    return values


def rect_domain(x0: float, y0: float, x1: float, y1: float, spec: str) -> Domain:
    w, h = x1 - x0, y1 - y0
    if not (w > 0 and h > 0):
        raise ValueError(f"Invalid domain '{spec}'. Rectangle must have positive extent")
    side = min(w, h)
    nx, ny = w / side, h / side
    if nx == round(nx) and ny == round(ny):
        return RightPolygon.rectangle(x0, y0, round(nx), round(ny), side)
    return Polygon.from_array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def domain_from_spec(spec: str) -> Domain:
    """Build a domain from ``unit_square``, ``rect:x0,y0,x1,y1``, ``lshape``,
    ``right:r;i,j;...``, ``polygon:x,y;x,y;...`` or ``disk:cx,cy,R``.

    Raises
    ------
    ValueError
        If the spec is not understood or describes an empty or invalid shape.

    """
    kind, _, rest = spec.strip().partition(":")
    valid = ", ".join(k.value for k in DomainKind)
    if kind not in {k.value for k in DomainKind}:
        raise ValueError(f"Invalid domain '{kind}'. Must be one of: {valid}")
    shape = DomainKind(kind)
    if shape is DomainKind.UNIT_SQUARE:
        return RightPolygon.rectangle(0.0, 0.0, 1, 1, 1.0)
    if shape is DomainKind.LSHAPE:
        return RightPolygon(0.5, frozenset({(0, 0), (1, 0), (0, 1)}))
    if shape is DomainKind.RECT:
        x0, y0, x1, y1 = _floats(rest, spec, 4)
        return rect_domain(x0, y0, x1, y1, spec)
    if shape is DomainKind.DISK:
        cx, cy, radius = _floats(rest, spec, 3)
        return Disk(Point2(cx, cy), radius)
    parts = [part for part in rest.split(";") if part.strip()]
    if shape is DomainKind.RIGHT:
        if len(parts) < 2:
            raise ValueError(f"Invalid domain '{spec}'. Expected right:r;i,j;...")
        (resolution,) = _floats(parts[0], spec, 1)
        cells = frozenset((round(i), round(j)) for i, j in (_floats(c, spec, 2) for c in parts[1:]))
        return RightPolygon(resolution, cells)
    points = [_floats(part, spec, 2) for part in parts]
    polygon = Polygon.from_array(points)
    if not polygon_is_simple(polygon):
        raise ValueError(f"Invalid domain '{spec}'. Polygon must be simple")
    if polygon.signed_area < 0:
        polygon = Polygon(tuple(reversed(polygon.vertices)))
    return polygon
