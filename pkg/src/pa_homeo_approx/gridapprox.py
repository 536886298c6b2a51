"""Square tiling around the Lebesgue region, its grid Q and the adjusted map on Q.

Tile and vertex positions are kept as integer keys in units of ``r / 2**level``
so that shared corners, hanging vertices and sides are matched exactly.
"""

from __future__ import annotations

import bisect
import logging
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pa_homeo_approx.config import (
    BISECTION_TOL,
    CROSS_SCAN_SAMPLES,
    DEFAULT_CONCURRENCY,
    DEFAULT_MAX_DEPTH,
)
from pa_homeo_approx.exceptions import CrossError, TilingError
from pa_homeo_approx.geometry import (
    BucketGrid,
    Disk,
    Domain,
    FloatArray,
    IntArray,
    Point2,
    Polygon,
    RightPolygon,
    Square,
    find_segment_crossings,
    snap_quantum,
)
from pa_homeo_approx.lebesgue import grid_points
from pa_homeo_approx.maps import MapOracle
from pa_homeo_approx.workers import map_ordered

logger = logging.getLogger(__name__)

_ALIGN_TOL = 1e-9
_MAX_CROSS_HALVINGS = 40

_Tiles = dict[tuple[int, int], int]


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Tiling:
    """Squares covering the domain up to a reported sliver, some inside the Lebesgue region.

    ``keys`` rows are ``(x, y, size)`` in units of ``r / 2**level`` relative to ``origin``.
    """

    r: float
    origin: Point2
    level: int
    keys: IntArray
    inside: NDArray[np.bool_]
    uncovered_area: float = 0.0
    balance_conflicts: int = 0

    @property
    def n_tiles(self) -> int:
        return len(self.keys)

    @property
    def scale(self) -> int:
        """Units per side ``r``."""
        return 1 << self.level

    def to_points(self, keys: ArrayLike) -> FloatArray:
        k = np.asarray(keys, dtype=float).reshape(-1, 2) / self.scale
        return grid_points(k, self.r, self.origin)

    @property
    def sides(self) -> FloatArray:
        return np.asarray(self.keys[:, 2] / self.scale * self.r, dtype=float)

    @property
    def lower_left(self) -> FloatArray:
        return self.to_points(self.keys[:, :2])

    @property
    def squares(self) -> list[Square]:
        ll = self.lower_left
        return [
            Square(Point2(x + s / 2.0, y + s / 2.0), float(s))
            for (x, y), s in zip(ll, self.sides)
        ]

    @property
    def outside_tiles(self) -> IntArray:
        return np.flatnonzero(~self.inside)

    def touches_inside(self) -> NDArray[np.bool_]:
        """Tiles whose closure meets a tile of the Lebesgue region."""
        k = self.keys
        ins = k[self.inside]
        out = self.inside.copy()
        if len(ins) == 0:
            return out
        for t in np.flatnonzero(~self.inside):
            x, y, s = k[t]
            meets = (
                (ins[:, 0] <= x + s)
                & (x <= ins[:, 0] + ins[:, 2])
                & (ins[:, 1] <= y + s)
                & (y <= ins[:, 1] + ins[:, 2])
            )
            out[t] = bool(np.any(meets))
        return out

    def max_neighbour_ratio(self) -> float:
        """Largest side ratio between tiles sharing a segment of positive length."""
        k = self.keys
        worst = 1.0
        for t in range(len(k)):
            x, y, s = k[t]
            share_v = ((k[:, 0] + k[:, 2] == x) | (k[:, 0] == x + s)) & (
                np.minimum(k[:, 1] + k[:, 2], y + s) > np.maximum(k[:, 1], y)
            )
            share_h = ((k[:, 1] + k[:, 2] == y) | (k[:, 1] == y + s)) & (
                np.minimum(k[:, 0] + k[:, 2], x + s) > np.maximum(k[:, 0], x)
            )
            nb = k[share_v | share_h, 2]
            if len(nb):
                worst = max(worst, float(s / nb.min()))
        return worst


def _aligned(value: float) -> int | None:
    n = round(value)
    return n if abs(value - n) <= _ALIGN_TOL * max(1.0, abs(value)) else None


def _eps_cells(omega_eps: RightPolygon, r: float, origin: Point2) -> set[tuple[int, int]]:
    ox = _aligned((omega_eps.origin.x - origin.x) / r)
    oy = _aligned((omega_eps.origin.y - origin.y) / r)
    if ox is None or oy is None:
        raise TilingError("Inner right polygon is not aligned to the r-grid of the domain")
    return {(i + ox, j + oy) for i, j in omega_eps.cells}


def _right_branch_cells(
    omega: RightPolygon, r: float, origin: Point2
) -> set[tuple[int, int]] | None:
    f = _aligned(omega.resolution / r)
    ox = _aligned((omega.origin.x - origin.x) / r)
    oy = _aligned((omega.origin.y - origin.y) / r)
    if f is None or f < 1 or ox is None or oy is None:
        return None
    return {
        (i * f + ox + a, j * f + oy + b) for i, j in omega.cells for a in range(f) for b in range(f)
    }


def _find_tile(tiles: _Tiles, px: int, py: int, top: int) -> tuple[int, int, int] | None:
    s = 1
    while s <= top:
        key = (px - px % s, py - py % s)
        if tiles.get(key) == s:
            return key[0], key[1], s
        s <<= 1
    return None


def _has_small_neighbour(tiles: _Tiles, x: int, y: int, s: int, top: int) -> bool:
    half = s // 2
    for fixed, horizontal in ((x + s, False), (x - 1, False), (y + s, True), (y - 1, True)):
        pos = x if horizontal else y
        end = pos + s
        while pos < end:
            px, py = (pos, fixed) if horizontal else (fixed, pos)
            hit = _find_tile(tiles, px, py, top)
            if hit is None:
                pos += 1
                continue
            if hit[2] < half:
                return True
            pos = (hit[0] if horizontal else hit[1]) + hit[2]
    return False


def _balance(
    tiles: _Tiles, locked: set[tuple[int, int]], top: int
) -> int:
    conflicts: set[tuple[int, int]] = set()
    changed = True
    while changed:
        changed = False
        for (x, y), s in sorted(tiles.items()):
            if s < 4 or tiles.get((x, y)) != s:
                continue
            if not _has_small_neighbour(tiles, x, y, s, top):
                continue
            if (x, y) in locked:
                conflicts.add((x, y))
                continue
            h = s // 2
            del tiles[(x, y)]
            for cx, cy in ((x, y), (x + h, y), (x, y + h), (x + h, y + h)):
                tiles[(cx, cy)] = h
            changed = True
    return len(conflicts)


def build_tiling(
    omega: Domain,
    omega_eps: RightPolygon | None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    *,
    r: float | None = None,
    origin: Point2 | None = None,
) -> Tiling:
    """Tile the domain with squares whose restriction to the Lebesgue region is its r-tiling.

    A right-polygon domain on a grid of side in ``r * N`` is tiled by all of
    its r-cells. Any other domain gets a 2:1-balanced quadtree refined toward
    the boundary down to ``max_depth`` halvings; the rest is reported as
    uncovered area.

    Parameters
    ----------
    omega : Domain
        The domain.
    omega_eps : RightPolygon | None
        The Lebesgue region; None when no square was accepted.
    max_depth : int
        Quadtree halvings below side ``r``.
    r : float | None
        Side length; required when ``omega_eps`` is None.
    origin : Point2 | None
        Origin of the r-grid; defaults to the lower-left corner of the domain bbox.

    Returns
    -------
    Tiling
        The tiling.

    Raises
    ------
    TilingError
        If the Lebesgue region is not grid aligned or not compactly inside the domain.

    """
    x0, y0, x1, y1 = omega.bbox
    grid_origin = origin if origin is not None else Point2(x0, y0)
    if omega_eps is not None:
        r = omega_eps.resolution
    if r is None or not r > 0:
        raise TilingError("Side length r is required when there is no Lebesgue region")
    eps_cells = _eps_cells(omega_eps, r, grid_origin) if omega_eps is not None else set()
    for i, j in sorted(eps_cells):
        ll = (grid_origin.x + i * r, grid_origin.y + j * r)
        if not omega.square_inside(ll, r):
            raise TilingError(f"Lebesgue cell ({i}, {j}) is not compactly inside the domain")

    cells = _right_branch_cells(omega, r, grid_origin) if isinstance(omega, RightPolygon) else None
    if cells is not None:
        keys = np.asarray(sorted(cells), dtype=np.int64).reshape(-1, 2)
        inside = np.asarray([(int(i), int(j)) in eps_cells for i, j in keys], dtype=bool)
        if not eps_cells <= cells:
            raise TilingError("Inner right polygon has cells outside the domain")
        tiling = Tiling(
            r=r,
            origin=grid_origin,
            level=0,
            keys=np.column_stack([keys, np.ones(len(keys), dtype=np.int64)]),
            inside=inside,
        )
        logger.info("Uniform tiling: %d squares (%d inside)", tiling.n_tiles, int(inside.sum()))
        return tiling

    top = 1 << max_depth
    nx = math.ceil((x1 - grid_origin.x) / r - _ALIGN_TOL)
    ny = math.ceil((y1 - grid_origin.y) / r - _ALIGN_TOL)
    tiles: dict[tuple[int, int], int] = {}
    stack = [(i * top, j * top, top) for j in range(ny - 1, -1, -1) for i in range(nx - 1, -1, -1)]
    while stack:
        x, y, s = stack.pop()
        if s == top and (x // top, y // top) in eps_cells:
            tiles[(x, y)] = s
            continue
        ll = (grid_origin.x + x / top * r, grid_origin.y + y / top * r)
        side = s / top * r
        if omega.square_inside(ll, side):
            tiles[(x, y)] = s
        elif s > 1 and omega.square_meets(ll, side):
            h = s // 2
            stack.extend([(x + h, y + h, h), (x, y + h, h), (x + h, y, h), (x, y, h)])

    locked = {(i * top, j * top) for i, j in eps_cells}
    for i, j in eps_cells:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                key = ((i + di) * top, (j + dj) * top)
                if tiles.get(key) == top:
                    locked.add(key)
    conflicts = _balance(tiles, locked, top)
    if conflicts:
        logger.warning("2:1 balance left %d locked squares next to smaller ones", conflicts)

    ordered = sorted(tiles.items())
    keys = np.asarray([(x, y, s) for (x, y), s in ordered], dtype=np.int64).reshape(-1, 3)
    inside = np.asarray(
        [s == top and (x // top, y // top) in eps_cells for (x, y), s in ordered], dtype=bool
    )
    covered = float(np.sum((keys[:, 2] / top * r) ** 2)) if len(keys) else 0.0
    uncovered = max(0.0, omega.area - covered)
    if uncovered > 0:
        logger.warning("Quadtree tiling leaves an uncovered sliver of area %.3e", uncovered)
    tiling = Tiling(
        r=r,
        origin=grid_origin,
        level=max_depth,
        keys=keys,
        inside=inside,
        uncovered_area=uncovered,
        balance_conflicts=conflicts,
    )
    logger.info("Quadtree tiling: %d squares (%d inside)", tiling.n_tiles, int(inside.sum()))
    return tiling


# ---------------------------------------------------------------------------
# Grid Q
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GridQ:
    """The 1-skeleton of a tiling: vertices, minimal sides and their adjacency."""

    tiling: Tiling
    keys: IntArray
    points: FloatArray
    sides: IntArray
    side_tiles: tuple[tuple[int, ...], ...]
    tile_sides: tuple[tuple[tuple[int, bool], ...], ...]
    incident: tuple[tuple[int, ...], ...]

    @property
    def n_vertices(self) -> int:
        return len(self.keys)

    @property
    def n_sides(self) -> int:
        return len(self.sides)

    @cached_property
    def lengths(self) -> FloatArray:
        d = self.keys[self.sides[:, 1]] - self.keys[self.sides[:, 0]]
        return np.asarray(np.abs(d).sum(axis=1) / self.tiling.scale * self.tiling.r, dtype=float)

    @cached_property
    def in_qprime(self) -> NDArray[np.bool_]:
        """Sides not touching the Lebesgue region."""
        ins = self.tiling.inside
        return np.asarray([not any(ins[t] for t in tiles) for tiles in self.side_tiles], dtype=bool)

    @cached_property
    def on_outer(self) -> NDArray[np.bool_]:
        """Sides on the outer boundary of the tiled region."""
        return np.asarray([len(tiles) == 1 for tiles in self.side_tiles], dtype=bool)

    @cached_property
    def qprime_vertices(self) -> IntArray:
        q = self.in_qprime
        return np.asarray(
            [v for v in range(self.n_vertices) if any(q[s] for s in self.incident[v])],
            dtype=np.int64,
        )

    @cached_property
    def on_eps_boundary(self) -> NDArray[np.bool_]:
        """Q' vertices that are also corners of a Lebesgue square."""
        q = self.in_qprime
        out = np.zeros(self.n_vertices, dtype=bool)
        for v in range(self.n_vertices):
            sides = self.incident[v]
            out[v] = any(q[s] for s in sides) and any(not q[s] for s in sides)
        return out

    def ell(self, v: int) -> float:
        """Shortest side incident to vertex ``v``."""
        return float(self.lengths[list(self.incident[v])].min())

    def other(self, side: int, v: int) -> int:
        a, b = self.sides[side]
        return int(b if a == v else a)


def build_grid(tiling: Tiling) -> GridQ:
    """Vertices and minimal sides of a tiling, with hanging vertices splitting long sides."""
    k = tiling.keys
    if len(k) == 0:
        raise TilingError("Empty tiling has no grid")
    x, y, s = k[:, 0], k[:, 1], k[:, 2]
    corners = np.vstack(
        [np.column_stack([x, y]), np.column_stack([x + s, y]),
         np.column_stack([x + s, y + s]), np.column_stack([x, y + s])]
    )
    keys = np.unique(corners, axis=0)
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(keys)}
    rows: dict[int, list[int]] = {}
    cols: dict[int, list[int]] = {}
    for a, b in keys:
        rows.setdefault(int(b), []).append(int(a))
        cols.setdefault(int(a), []).append(int(b))
    for values in (*rows.values(), *cols.values()):
        values.sort()

    def on_row(yy: int, lo: int, hi: int) -> list[int]:
        xs = rows[yy]
        return xs[bisect.bisect_left(xs, lo) : bisect.bisect_right(xs, hi)]

    def on_col(xx: int, lo: int, hi: int) -> list[int]:
        ys = cols[xx]
        return ys[bisect.bisect_left(ys, lo) : bisect.bisect_right(ys, hi)]

    side_index: dict[tuple[int, int], int] = {}
    side_list: list[tuple[int, int]] = []
    side_tiles: list[list[int]] = []
    tile_sides: list[tuple[tuple[int, bool], ...]] = []
    for t, (tx, ty, ts) in enumerate(k.tolist()):
        chain = (
            [(xx, ty) for xx in on_row(ty, tx, tx + ts)]
            + [(tx + ts, yy) for yy in on_col(tx + ts, ty, ty + ts)][1:]
            + [(xx, ty + ts) for xx in reversed(on_row(ty + ts, tx, tx + ts))][1:]
            + [(tx, yy) for yy in reversed(on_col(tx, ty, ty + ts))][1:]
        )
        ring: list[tuple[int, bool]] = []
        for p0, p1 in zip(chain[:-1], chain[1:]):
            i0, i1 = index[p0], index[p1]
            a, b = (i0, i1) if i0 < i1 else (i1, i0)
            sid = side_index.get((a, b))
            if sid is None:
                sid = len(side_list)
                side_index[(a, b)] = sid
                side_list.append((a, b))
                side_tiles.append([])
            side_tiles[sid].append(t)
            ring.append((sid, i0 != a))
        tile_sides.append(tuple(ring))

    incident: list[list[int]] = [[] for _ in range(len(keys))]
    for sid, (a, b) in enumerate(side_list):
        incident[a].append(sid)
        incident[b].append(sid)
    grid = GridQ(
        tiling=tiling,
        keys=keys,
        points=tiling.to_points(keys),
        sides=np.asarray(side_list, dtype=np.int64).reshape(-1, 2),
        side_tiles=tuple(tuple(v) for v in side_tiles),
        tile_sides=tuple(tile_sides),
        incident=tuple(tuple(v) for v in incident),
    )
    logger.info("Grid: %d vertices, %d sides (%d in Q')", grid.n_vertices, grid.n_sides,
                int(grid.in_qprime.sum()))
    return grid


# ---------------------------------------------------------------------------
# Segment interpolation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SegmentInterpolation:
    """Breakpoints ``0 = t_0 < ... < t_N = 1`` of a segment with the images of ``u`` there."""

    ts: FloatArray
    points: FloatArray
    images: FloatArray
    rho: float

    @property
    def n_pieces(self) -> int:
        return len(self.ts) - 1

    def __call__(self, t: ArrayLike) -> FloatArray:
        tt = np.asarray(t, dtype=float)
        return np.column_stack(
            [np.interp(tt, self.ts, self.images[:, 0]), np.interp(tt, self.ts, self.images[:, 1])]
        )


def segment_interpolation(
    o: MapOracle, p: ArrayLike, q: ArrayLike, rho: float
) -> SegmentInterpolation:
    """Piecewise-linear interpolation of ``u`` along ``pq`` with image steps of at most ``rho``.

    Each next breakpoint is the farthest point whose image stays in the closed
    ``rho``-ball around the image of the current one: the last such sample of a
    scan whose image spacing is at most ``rho / 8``, refined by bisection toward
    the next sample down to ``BISECTION_TOL``.

    Raises
    ------
    DomainError
        If the segment leaves the domain.

    """
    if not rho > 0:
        raise ValueError(f"Invalid rho {rho}. Must be positive")
    pa = np.asarray(p, dtype=float)
    qa = np.asarray(q, dtype=float)
    length = float(np.hypot(*(qa - pa)))
    n = max(2, math.ceil(8.0 * o.L * length / rho) + 1)
    ts = np.linspace(0.0, 1.0, n)
    samples = o.eval(pa + ts[:, None] * (qa - pa))
    window = max(2, math.ceil(o.L * rho / max(length, 1e-300) * (n - 1)) + 2)

    def image(t: FloatArray) -> FloatArray:
        return o.eval(pa + t[:, None] * (qa - pa), check=False)

    breaks = [0.0]
    images = [samples[0]]
    k = 0
    while True:
        centre = images[-1]
        hi = min(n, k + window + 1)
        d = np.hypot(*(samples[k + 1 : hi] - centre).T)
        inside = np.flatnonzero(d <= rho)
        last = k + 1 + int(inside[-1]) if len(inside) else k
        if last == n - 1:
            breaks.append(1.0)
            images.append(samples[-1])
            break
        lo_t = max(float(ts[last]), breaks[-1])
        hi_t = float(ts[last + 1])
        while hi_t - lo_t > BISECTION_TOL:
            mid = 0.5 * (lo_t + hi_t)
            if np.hypot(*(image(np.array([mid]))[0] - centre)) <= rho:
                lo_t = mid
            else:
                hi_t = mid
        if lo_t <= breaks[-1]:
            lo_t = ts[last] if ts[last] > breaks[-1] else ts[last + 1]
        breaks.append(float(lo_t))
        images.append(image(np.array([lo_t]))[0])
        k = int(np.searchsorted(ts, lo_t, side="right")) - 1
    t_arr = np.asarray(breaks)
    return SegmentInterpolation(
        ts=t_arr,
        points=pa + t_arr[:, None] * (qa - pa),
        images=np.asarray(images),
        rho=rho,
    )


def _sup_error(o: MapOracle, seg: SegmentInterpolation, p: FloatArray, q: FloatArray) -> float:
    frac = np.linspace(0.0, 1.0, 10)[1:-1]
    t = (seg.ts[:-1, None] + (seg.ts[1:] - seg.ts[:-1])[:, None] * frac[None]).ravel()
    exact = o.eval(p + t[:, None] * (q - p), check=False)
    return float(np.hypot(*(exact - seg(t)).T).max(initial=0.0))


def _chords_in_image(o: MapOracle, starts: FloatArray, ends: FloatArray) -> bool:
    frac = np.array([0.25, 0.5, 0.75])
    pts = (starts[:, None, :] + frac[None, :, None] * (ends - starts)[:, None, :]).reshape(-1, 2)
    _, ok = o.try_invert(pts)
    return bool(np.all(ok))


def _internal_interpolation(
    o: MapOracle, p: FloatArray, q: FloatArray, delta: float, adaptive: bool, check_inside: bool
) -> SegmentInterpolation:
    floor = delta / math.sqrt(2.0)
    if not adaptive:
        return segment_interpolation(o, p, q, floor)
    rho = max(float(np.hypot(*(o.eval(q, check=False) - o.eval(p, check=False)))), floor)
    while True:
        seg = segment_interpolation(o, p, q, rho)
        good = _sup_error(o, seg, p, q) <= delta and (
            not check_inside or _chords_in_image(o, seg.images[:-1], seg.images[1:])
        )
        if good:
            return seg
        if rho <= floor:
            logger.warning("Interpolated side at the floor rho=%.3e still misses its checks", rho)
            return seg
        rho = max(rho / 2.0, floor)


# ---------------------------------------------------------------------------
# Crosses
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Cross:
    """Initial sub-segments of the sides at a vertex, cut where the image leaves the ``xi`` ball."""

    vertex: int
    xi: float
    sides: tuple[int, ...]
    fractions: tuple[float, ...]
    endpoints: FloatArray
    halvings: int = 0

    def fraction(self, side: int) -> float:
        return self.fractions[self.sides.index(side)]

    def endpoint(self, side: int) -> FloatArray:
        return np.asarray(self.endpoints[self.sides.index(side)])


def _last_exit(f: Callable[[FloatArray], FloatArray], radius: float, samples: int) -> float:
    ts = np.linspace(0.0, 1.0 / 3.0, samples)
    d = f(ts)
    inside = np.flatnonzero(d <= radius)
    k = int(inside[-1])
    if k == samples - 1:
        return 1.0 / 3.0
    lo, hi = float(ts[k]), float(ts[k + 1])
    while hi - lo > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        if f(np.array([mid]))[0] <= radius:
            lo = mid
        else:
            hi = mid
    return lo


def eps_boundary_map(o: MapOracle, grid: GridQ) -> GridMap:
    """Grid map on the sides touching the Lebesgue region: linear between vertex images."""
    vertex_images = o.eval(grid.points, check=False)
    pieces: list[SidePiece | None] = []
    for sid, (a, b) in enumerate(grid.sides):
        if grid.in_qprime[sid]:
            pieces.append(None)
            continue
        pieces.append(
            SidePiece(
                ts=np.array([0.0, 1.0]),
                points=grid.points[[a, b]],
                images=vertex_images[[a, b]],
            )
        )
    return GridMap(grid, tuple(pieces), o, {}, vertex_images)


def compute_cross(
    o: MapOracle,
    grid: GridQ,
    boundary_map: GridMap | None,
    alpha: int,
    samples: int = CROSS_SCAN_SAMPLES,
) -> Cross:
    """Cross at a Q' vertex.

    Parameters
    ----------
    o : MapOracle
        Input map.
    grid : GridQ
        The grid.
    boundary_map : GridMap | None
        Map on the sides touching the Lebesgue region; linear between vertex
        images when None.
    alpha : int
        Vertex index.
    samples : int
        Scan samples per side before bisection.

    Returns
    -------
    Cross
        The cross.

    Raises
    ------
    CrossError
        If the vertex is not in Q' or its chords never fit inside the image.

    """
    q = grid.in_qprime
    sides = grid.incident[alpha]
    if not any(q[s] for s in sides):
        raise CrossError(alpha, "vertex is not in Q'")
    w = grid.points[alpha]
    uw = boundary_map.vertex_images[alpha] if boundary_map is not None else o.eval(w, check=False)
    L = o.L  # noqa: N806
    ell = grid.ell(alpha)
    r = grid.tiling.r
    if grid.on_eps_boundary[alpha]:
        xi = ell / (3.0 * L)
    else:
        xi = min(ell / (3.0 * L), r / (2.0 * L) * (1.0 - 1e-6))

    def target(side: int) -> Callable[[FloatArray], FloatArray]:
        other = grid.points[grid.other(side, alpha)]
        if q[side]:
            return lambda t: o.eval(w + t[:, None] * (other - w), check=False)
        if boundary_map is not None:
            return lambda t: boundary_map.eval_side_from(side, alpha, t)
        uo = o.eval(other, check=False)
        return lambda t: uw + t[:, None] * (uo - uw)

    targets = [target(s) for s in sides]
    for halving in range(_MAX_CROSS_HALVINGS):
        fractions = []
        for f in targets:
            frac = _last_exit(lambda t, f=f: np.hypot(*(f(t) - uw).T), xi, samples)
            fractions.append(frac)
        ends = np.asarray(
            [w + fr * (grid.points[grid.other(s, alpha)] - w) for s, fr in zip(sides, fractions)]
        )
        checked = [i for i, s in enumerate(sides) if q[s] and not grid.on_outer[s]]
        if not checked:
            break
        end_images = np.asarray([targets[i](np.array([fractions[i]]))[0] for i in checked])
        if _chords_in_image(o, np.repeat(uw[None], len(checked), axis=0), end_images):
            break
        xi /= 2.0
    else:
        raise CrossError(alpha, "cross chords never fit inside the image")
    if halving:
        logger.debug("Cross at vertex %d shrunk %d times", alpha, halving)
    return Cross(alpha, xi, tuple(sides), tuple(fractions), ends, halving)


def compute_crosses(
    o: MapOracle,
    grid: GridQ,
    boundary_map: GridMap | None = None,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> dict[int, Cross]:
    """Crosses at every Q' vertex, keyed by vertex index."""
    vertices = [int(v) for v in grid.qprime_vertices]
    crosses = map_ordered(lambda v: compute_cross(o, grid, boundary_map, v), vertices, concurrency)
    return dict(zip(vertices, crosses))


# ---------------------------------------------------------------------------
# Grid map
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SidePiece:
    """Breakpoints of the grid map on one side, parameterised from its first vertex."""

    ts: FloatArray
    points: FloatArray
    images: FloatArray
    exact_span: tuple[float, float] | None = None
    rho: float | None = None


@dataclass(frozen=True, eq=False)
class GridMap:
    """A piecewise-linear map on the sides of Q.

    With ``exact`` the internal segment of every Q' side is evaluated with the
    input map itself (the adjusted map); otherwise with its interpolation.
    """

    grid: GridQ
    pieces: tuple[SidePiece | None, ...]
    oracle: MapOracle
    crosses: Mapping[int, Cross]
    vertex_images: FloatArray
    exact: bool = False

    def adjusted(self) -> GridMap:
        """The same map with internal segments evaluated exactly."""
        return replace(self, exact=True)

    def piece(self, side: int) -> SidePiece:
        pc = self.pieces[side]
        if pc is None:
            raise CrossError(int(self.grid.sides[side, 0]), f"side {side} has no grid map")
        return pc

    def eval_side(self, side: int, t: ArrayLike) -> FloatArray:
        """Images at parameters ``t`` in ``[0, 1]`` measured from the side's first vertex."""
        tt = np.asarray(t, dtype=float).reshape(-1)
        pc = self.piece(side)
        out = np.column_stack(
            [np.interp(tt, pc.ts, pc.images[:, 0]), np.interp(tt, pc.ts, pc.images[:, 1])]
        )
        if self.exact and pc.exact_span is not None:
            lo, hi = pc.exact_span
            mask = (tt > lo) & (tt < hi)
            if np.any(mask):
                a, b = self.grid.sides[side]
                wa, wb = self.grid.points[a], self.grid.points[b]
                out[mask] = self.oracle.eval(wa + tt[mask, None] * (wb - wa), check=False)
        return out

    def eval_side_from(self, side: int, vertex: int, t: ArrayLike) -> FloatArray:
        """Images at parameters measured from ``vertex``, one of the side's endpoints."""
        tt = np.asarray(t, dtype=float)
        a = int(self.grid.sides[side, 0])
        return self.eval_side(side, tt if vertex == a else 1.0 - tt)

    def eval_points(self, sides: ArrayLike, ts: ArrayLike) -> FloatArray:
        """Images of a batch of ``(side, t)`` points."""
        s = np.asarray(sides, dtype=np.int64)
        t = np.asarray(ts, dtype=float)
        out = np.empty((len(s), 2))
        for sid in np.unique(s):
            m = s == sid
            out[m] = self.eval_side(int(sid), t[m])
        return out

    def domain_points(self, sides: ArrayLike, ts: ArrayLike) -> FloatArray:
        s = np.asarray(sides, dtype=np.int64)
        t = np.asarray(ts, dtype=float)
        a, b = self.grid.sides[s, 0], self.grid.sides[s, 1]
        pa, pb = self.grid.points[a], self.grid.points[b]
        return np.asarray(pa + t[:, None] * (pb - pa))

    def cross_fractions(self) -> tuple[FloatArray, FloatArray]:
        """Per side, the cross fraction at its first and at its second vertex (0 without cross)."""
        fa = np.zeros(self.grid.n_sides)
        fb = np.zeros(self.grid.n_sides)
        for v, cross in self.crosses.items():
            for side, frac in zip(cross.sides, cross.fractions):
                if self.grid.sides[side, 0] == v:
                    fa[side] = frac
                else:
                    fb[side] = frac
        return fa, fb

    def tile_boundary(self, tile: int) -> tuple[FloatArray, FloatArray]:
        """Counterclockwise breakpoints of a tile from its south-west corner, with images."""
        pts: list[FloatArray] = []
        imgs: list[FloatArray] = []
        for side, backwards in self.grid.tile_sides[tile]:
            pc = self.piece(side)
            p, im = (pc.points[::-1], pc.images[::-1]) if backwards else (pc.points, pc.images)
            pts.append(p[:-1])
            imgs.append(im[:-1])
        return np.vstack(pts), np.vstack(imgs)


def build_grid_map(
    o: MapOracle,
    grid: GridQ,
    crosses: Mapping[int, Cross],
    v_eps_boundary: GridMap,
    *,
    adaptive_rho: bool = True,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> GridMap:
    """The map on Q: chords on crosses, interpolations on internal segments, ``v_eps`` elsewhere.

    Parameters
    ----------
    o : MapOracle
        Input map.
    grid : GridQ
        The grid.
    crosses : Mapping[int, Cross]
        Crosses of every Q' vertex.
    v_eps_boundary : GridMap
        Map on the sides touching the Lebesgue region.
    adaptive_rho : bool
        Start the interpolation radius at the segment's image length and halve
        it until the sup error is within ``delta`` and the pieces stay inside
        the image; otherwise use the floor ``delta / sqrt(2)`` directly.
    concurrency : int
        Worker threads for the sides.

    Returns
    -------
    GridMap
        The grid map.

    Raises
    ------
    CrossError
        If a Q' vertex has no cross.

    """
    L = o.L  # noqa: N806
    vertex_images = v_eps_boundary.vertex_images
    for v in grid.qprime_vertices:
        if int(v) not in crosses:
            raise CrossError(int(v), "cross missing when assembling the grid map")

    def build(sid: int) -> SidePiece:
        a, b = (int(v) for v in grid.sides[sid])
        ca, cb = crosses[a], crosses[b]
        fa, fb = ca.fraction(sid), cb.fraction(sid)
        pa, pb = ca.endpoint(sid), cb.endpoint(sid)
        delta = min(ca.xi, cb.xi) / (72.0 * L * L)
        seg = _internal_interpolation(o, pa, pb, delta, adaptive_rho, not grid.on_outer[sid])
        inner = fa + (1.0 - fa - fb) * seg.ts[1:-1]
        return SidePiece(
            ts=np.concatenate([[0.0, fa], inner, [1.0 - fb, 1.0]]),
            points=np.vstack([grid.points[a], seg.points, grid.points[b]]),
            images=np.vstack([vertex_images[a], seg.images, vertex_images[b]]),
            exact_span=(fa, 1.0 - fb),
            rho=seg.rho,
        )

    qsides = [int(s) for s in np.flatnonzero(grid.in_qprime)]
    built = dict(zip(qsides, map_ordered(build, qsides, concurrency)))
    pieces = tuple(
        built[sid] if sid in built else v_eps_boundary.pieces[sid] for sid in range(grid.n_sides)
    )
    gm = GridMap(grid, pieces, o, dict(crosses), vertex_images)
    total = sum(len(pc.ts) - 1 for pc in pieces if pc is not None)
    logger.info("Grid map: %d sides, %d linear pieces", grid.n_sides, total)
    return gm


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


CASES = ("same_cross", "outside", "mixed", "different_crosses")


@dataclass
class RatioStats:
    """Ratio range of one pair class."""

    count: int
    lower: float
    upper: float


def _sample_pairs(
    gm: GridMap, pairs: int, rng: np.random.Generator
) -> tuple[IntArray, FloatArray, IntArray, FloatArray]:
    grid = gm.grid
    lengths = grid.lengths
    prob = lengths / lengths.sum()
    n3 = max(1, pairs // 3)
    crossed = [v for v in gm.crosses if gm.crosses[v].sides]
    # same cross
    s1: list[int] = []
    t1: list[float] = []
    s2: list[int] = []
    t2: list[float] = []
    if crossed:
        picks = rng.choice(len(crossed), size=n3)
        for pick in picks:
            cross = gm.crosses[crossed[int(pick)]]
            for sl, tl in ((s1, t1), (s2, t2)):
                k = int(rng.integers(len(cross.sides)))
                side = cross.sides[k]
                f = float(rng.uniform(0.0, cross.fractions[k]))
                sl.append(side)
                tl.append(f if grid.sides[side, 0] == cross.vertex else 1.0 - f)
    # same side
    same = rng.choice(grid.n_sides, size=n3, p=prob)
    s1.extend(same.tolist())
    s2.extend(same.tolist())
    t1.extend(rng.uniform(size=n3).tolist())
    t2.extend(rng.uniform(size=n3).tolist())
    # anywhere
    rest = max(1, pairs - len(s1))
    s1.extend(rng.choice(grid.n_sides, size=rest, p=prob).tolist())
    s2.extend(rng.choice(grid.n_sides, size=rest, p=prob).tolist())
    t1.extend(rng.uniform(size=rest).tolist())
    t2.extend(rng.uniform(size=rest).tolist())
    return (
        np.asarray(s1, dtype=np.int64),
        np.asarray(t1),
        np.asarray(s2, dtype=np.int64),
        np.asarray(t2),
    )


def _cross_owner(gm: GridMap, sides: IntArray, ts: FloatArray) -> IntArray:
    fa, fb = gm.cross_fractions()
    a, b = gm.grid.sides[sides, 0], gm.grid.sides[sides, 1]
    owner = np.full(len(sides), -1, dtype=np.int64)
    in_a = (fa[sides] > 0) & (ts <= fa[sides])
    in_b = (fb[sides] > 0) & (ts >= 1.0 - fb[sides])
    owner[in_a] = a[in_a]
    owner[in_b] = b[in_b]
    return owner


def stratified_ratios(gm: GridMap, pairs: int, seed: int = 0) -> dict[str, RatioStats]:
    """Ratio ranges ``|g(z) - g(z')| / |z - z'|`` per pair class of the cross decomposition."""
    rng = np.random.default_rng(seed)
    s1, t1, s2, t2 = _sample_pairs(gm, pairs, rng)
    z1, z2 = gm.domain_points(s1, t1), gm.domain_points(s2, t2)
    dz = np.hypot(*(z1 - z2).T)
    keep = dz > 1e-12 * max(gm.grid.tiling.r, 1e-300)
    ratio = np.hypot(*(gm.eval_points(s1, t1) - gm.eval_points(s2, t2)).T)[keep] / dz[keep]
    o1, o2 = _cross_owner(gm, s1, t1)[keep], _cross_owner(gm, s2, t2)[keep]
    classes = {
        "same_cross": (o1 >= 0) & (o1 == o2),
        "outside": (o1 < 0) & (o2 < 0),
        "mixed": (o1 < 0) != (o2 < 0),
        "different_crosses": (o1 >= 0) & (o2 >= 0) & (o1 != o2),
    }
    return {
        name: RatioStats(
            int(m.sum()),
            float(ratio[m].min()) if m.any() else math.inf,
            float(ratio[m].max()) if m.any() else 0.0,
        )
        for name, m in classes.items()
    }


def verify_grid_bilip(
    gm: GridMap, L: float, pairs: int, seed: int = 0  # noqa: N803
) -> tuple[float, float]:
    """Smallest and largest sampled distance ratio of the grid map over stratified pairs."""
    if pairs < 1:
        raise ValueError(f"Invalid pairs {pairs}. Must be >= 1")
    stats = stratified_ratios(gm, pairs, seed)
    lower = min(s.lower for s in stats.values())
    upper = max(s.upper for s in stats.values())
    if lower < 1.0 / (72.0 * L) or upper > 72.0 * L:
        logger.warning("Grid map ratios [%.4g, %.4g] exceed the bounds for L=%.4g", lower, upper, L)
    return lower, upper


def grid_crossing(gm: GridMap) -> tuple[int, int] | None:
    """Indices of two image pieces of the grid map that cross, or None."""
    starts, ends = [], []
    for pc in gm.pieces:
        if pc is None:
            continue
        starts.append(pc.images[:-1])
        ends.append(pc.images[1:])
    s, e = np.vstack(starts), np.vstack(ends)
    quantum = snap_quantum(float(np.ptp(np.vstack([s, e]), axis=0).max()))
    hits = find_segment_crossings(s, e, quantum=quantum)
    return hits[0] if hits else None


def check_grid_injective(gm: GridMap) -> bool:
    """Whether no two image pieces of the grid map meet outside shared endpoints."""
    return grid_crossing(gm) is None


def crosses_disjoint(gm: GridMap) -> bool:
    """Whether crosses are pairwise disjoint and their image balls do not meet."""
    fa, fb = gm.cross_fractions()
    if np.any(fa + fb >= 1.0):
        return False
    verts = np.asarray(sorted(gm.crosses), dtype=np.int64)
    if len(verts) < 2:
        return True
    centres = gm.vertex_images[verts]
    radii = np.asarray([gm.crosses[int(v)].xi for v in verts])
    boxes = np.column_stack([centres - radii[:, None], centres + radii[:, None]])
    i, j = BucketGrid.build(boxes).overlapping_pairs()
    dist = np.hypot(*(centres[i] - centres[j]).T)
    return bool(np.all(dist > radii[i] + radii[j]))


def omega_eps_clearance(omega: Domain, omega_eps: RightPolygon) -> float:
    """Distance from the Lebesgue region to the complement of the domain."""
    a, b = omega_eps.boundary_segments()
    pts = np.vstack([a, b])
    if isinstance(omega, Disk):
        c = np.asarray(omega.center)
        return float(omega.radius - np.hypot(*(pts - c).T).max())
    if isinstance(omega, Polygon):
        corners = omega.as_array()
    elif isinstance(omega, RightPolygon):
        corners, _ = omega.boundary_segments()
    else:
        raise TypeError(f"Unsupported domain {type(omega).__name__}")
    return min(
        float(omega.boundary_distance(pts).min()),
        float(omega_eps.boundary_distance(corners).min()),
    )
