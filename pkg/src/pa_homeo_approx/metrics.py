"""Piecewise-affine maps and the error, injectivity and distortion measurements on them."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from pa_homeo_approx.exceptions import DomainError, ValidationError
from pa_homeo_approx.geometry import (
    BucketGrid,
    FloatArray,
    IntArray,
    Triangulation,
    distortion,
    find_segment_crossings,
    nonconforming_pair,
    signed_areas,
    singular_values,
    snap_quantum,
)

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from pa_homeo_approx.maps import MapOracle

logger = logging.getLogger(__name__)

# Meshes up to this size are cross-checked by the pairwise overlap test
BRUTE_FORCE_MAX_TRIANGLES = 200

_BARY_TOL = 1e-9
_CHUNK_NODES = 200_000


@dataclass(frozen=True, eq=False)
class PAMap:
    """A triangulation of the domain with one image point per vertex; affine on each triangle."""

    triangulation: Triangulation
    images: FloatArray

    def __post_init__(self) -> None:
        images = np.asarray(self.images, dtype=float).reshape(-1, 2)
        if len(images) != self.triangulation.n_vertices:
            raise ValueError(
                f"Invalid PAMap with {len(images)} images for "
                f"{self.triangulation.n_vertices} vertices"
            )
        object.__setattr__(self, "images", images)

    @classmethod
    def from_arrays(cls, vertices: ArrayLike, triangles: ArrayLike, images: ArrayLike) -> PAMap:
        return cls(Triangulation(np.asarray(vertices), np.asarray(triangles)), np.asarray(images))

    @property
    def vertices(self) -> FloatArray:
        return self.triangulation.vertices

    @property
    def triangles(self) -> IntArray:
        return self.triangulation.triangles

    @property
    def n_triangles(self) -> int:
        return self.triangulation.n_triangles

    def image_areas(self) -> FloatArray:
        return signed_areas(self.images, self.triangles)

    def domain_areas(self) -> FloatArray:
        return self.triangulation.signed_areas()

    @cached_property
    def pieces(self) -> FloatArray:
        """Linear part of the affine piece on every triangle, shape ``(m, 2, 2)``."""
        t = self.triangles
        p, q = self.vertices, self.images
        dom = np.stack([p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]]], axis=-1)
        img = np.stack([q[t[:, 1]] - q[t[:, 0]], q[t[:, 2]] - q[t[:, 0]]], axis=-1)
        det = dom[:, 0, 0] * dom[:, 1, 1] - dom[:, 0, 1] * dom[:, 1, 0]
        if np.any(det == 0):
            k = int(np.argmax(det == 0))
            raise ValidationError(f"Degenerate domain triangle {k}")
        inv = np.stack(
            [
                np.stack([dom[:, 1, 1], -dom[:, 0, 1]], axis=-1),
                np.stack([-dom[:, 1, 0], dom[:, 0, 0]], axis=-1),
            ],
            axis=-2,
        ) / det[:, None, None]
        return np.asarray(img @ inv)

    @cached_property
    def _domain_grid(self) -> BucketGrid:
        return _triangle_grid(self.vertices, self.triangles)

    @cached_property
    def _image_grid(self) -> BucketGrid:
        return _triangle_grid(self.images, self.triangles)

    def locate(self, points: ArrayLike, image: bool = False) -> tuple[IntArray, FloatArray]:
        """Containing triangle (``-1`` when none) and barycentric coordinates of each point.

        Parameters
        ----------
        points : ArrayLike
            Query points, shape ``(n, 2)``.
        image : bool
            Locate in the image triangulation instead of the domain one.

        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        coords = self.images if image else self.vertices
        grid = self._image_grid if image else self._domain_grid
        pidx, tidx = grid.query_points(pts)
        tri = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        if len(pidx) == 0:
            return tri, bary
        lam = barycentric(pts[pidx], coords[self.triangles[tidx]])
        score = lam.min(axis=1)
        order = np.lexsort((-score, pidx))
        first = order[np.unique(pidx[order], return_index=True)[1]]
        good = score[first] >= -_BARY_TOL
        chosen = first[good]
        tri[pidx[chosen]] = tidx[chosen]
        bary[pidx[chosen]] = lam[chosen]
        return tri, bary


def _triangle_grid(coords: FloatArray, triangles: IntArray) -> BucketGrid:
    corners = coords[triangles]
    pad = 1e-12 * max(float(np.ptp(coords, axis=0).max(initial=0.0)), 1.0)
    boxes = np.column_stack([corners.min(axis=1) - pad, corners.max(axis=1) + pad])
    return BucketGrid.build(boxes)


def barycentric(points: FloatArray, corners: FloatArray) -> FloatArray:
    """Barycentric coordinates of ``points`` (n, 2) in triangles ``corners`` (n, 3, 2)."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    v0, v1, v2 = b - a, c - a, points - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def pa_eval(m: PAMap, z: ArrayLike) -> FloatArray:
    """Evaluate the piecewise-affine map.

    Raises
    ------
    DomainError
        If some point lies in no triangle.

    """
    arr = np.asarray(z, dtype=float)
    tri, bary = m.locate(arr)
    if np.any(tri < 0):
        raise DomainError("point(s)", int(np.count_nonzero(tri < 0)))
    out = np.einsum("nk,nkd->nd", bary, m.images[m.triangles[tri]])
    return out[0] if arr.ndim == 1 else out


def pa_invert(m: PAMap, w: ArrayLike) -> FloatArray:
    """Invert a homeomorphic piecewise-affine map by point location among image triangles.

    Raises
    ------
    DomainError
        If some point lies outside the image.

    """
    arr = np.asarray(w, dtype=float)
    tri, bary = m.locate(arr, image=True)
    if np.any(tri < 0):
        raise DomainError("image point(s)", int(np.count_nonzero(tri < 0)))
    out = np.einsum("nk,nkd->nd", bary, m.vertices[m.triangles[tri]])
    return out[0] if arr.ndim == 1 else out


@dataclass
class InjectivityResult:
    """Outcome of the injectivity certificate."""

    injective: bool
    witness: str | None = None
    flipped: list[int] = field(default_factory=list)
    crossing: tuple[int, int] | None = None

    @property
    def orientation_ok(self) -> bool:
        return not self.flipped


def overlapping_image_pair(m: PAMap) -> tuple[int, int] | None:
    """First pair of image triangles that meet in more than a shared vertex or side."""
    image = Triangulation(m.images, m.triangles)
    return nonconforming_pair(image, snap_quantum(float(np.ptp(m.images, axis=0).max())))


def check_injective(m: PAMap) -> InjectivityResult:
    """Certify injectivity: positive image areas and a simple image boundary.

    On orientation-preserving meshes with at most ``BRUTE_FORCE_MAX_TRIANGLES``
    triangles a pairwise overlap test of the image triangles runs as well and
    must agree in both directions.

    Raises
    ------
    ValidationError
        If the certificate and the pairwise test disagree.

    """
    areas = m.image_areas()
    flipped = np.flatnonzero(areas <= 0)
    result: InjectivityResult
    if len(flipped):
        k = int(flipped[0])
        result = InjectivityResult(
            injective=False,
            witness=f"triangle {k} has image signed area {areas[k]:.6g}",
            flipped=[int(i) for i in flipped],
        )
    else:
        edges = m.triangulation.boundary_edges()
        quantum = snap_quantum(float(np.ptp(m.images, axis=0).max()))
        hits = find_segment_crossings(m.images[edges[:, 0]], m.images[edges[:, 1]], quantum=quantum)
        if hits:
            i, j = hits[0]
            result = InjectivityResult(
                injective=False,
                witness=f"boundary edges {tuple(edges[i])} and {tuple(edges[j])} cross",
                crossing=(i, j),
            )
        else:
            result = InjectivityResult(injective=True)
    if m.n_triangles <= BRUTE_FORCE_MAX_TRIANGLES and result.orientation_ok:
        pair = overlapping_image_pair(m)
        if result.injective and pair is not None:
            raise ValidationError(
                f"Injectivity certificate passed but image triangles {pair} overlap"
            )
        if not result.injective and pair is None:
            raise ValidationError(
                f"Injectivity certificate failed ({result.witness}) but no image triangles overlap"
            )
    return result


def pa_bilip(m: PAMap) -> float:
    """Largest ``max(sigma_max, 1/sigma_min)`` over the affine pieces.

    On a convex domain this is the global bi-Lipschitz constant; otherwise it
    bounds the local one.

    Raises
    ------
    ValidationError
        If some triangle is degenerate.

    """
    return float(distortion(m.pieces).max(initial=1.0))


def interior_lattice(samples: int) -> FloatArray:
    """At least ``samples`` strictly interior barycentric points on a regular lattice."""
    order = 3
    while (order - 1) * (order - 2) // 2 < samples:
        order += 1
    pts = [
        (i / order, j / order, (order - i - j) / order)
        for i in range(1, order)
        for j in range(1, order - i)
    ]
    return np.asarray(pts, dtype=float)


def _linf_samples(m: PAMap, samples: int) -> tuple[FloatArray, FloatArray]:
    """Stratified domain samples and their images: vertices, edge midpoints, interior points."""
    t = m.triangles
    all_edges = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.unique(np.sort(all_edges, axis=1), axis=0)
    lat = interior_lattice(samples)
    dom = [
        m.vertices,
        0.5 * (m.vertices[edges[:, 0]] + m.vertices[edges[:, 1]]),
        np.einsum("sk,mkd->msd", lat, m.vertices[t]).reshape(-1, 2),
    ]
    img = [
        m.images,
        0.5 * (m.images[edges[:, 0]] + m.images[edges[:, 1]]),
        np.einsum("sk,mkd->msd", lat, m.images[t]).reshape(-1, 2),
    ]
    return np.vstack(dom), np.vstack(img)


def linf_sample_spacing(m: PAMap, samples: int) -> float:
    """Largest distance from a triangle point to the nearest sample (upper estimate)."""
    corners = m.vertices[m.triangles]
    longest = np.max(
        [np.hypot(*(corners[:, a] - corners[:, b]).T) for a, b in ((0, 1), (1, 2), (2, 0))], axis=0
    )
    order = 3
    while (order - 1) * (order - 2) // 2 < samples:
        order += 1
    return float(longest.max(initial=0.0)) / order


def linf_error(
    o: MapOracle,
    m: PAMap,
    samples: int,
    inverse: bool = False,
    mask: NDArray[np.bool_] | None = None,
) -> float:
    """Sup-norm distance between the oracle and the mesh (or between their inverses).

    Parameters
    ----------
    o : MapOracle
        The exact map ``u``.
    m : PAMap
        The approximation ``v``.
    samples : int
        Minimum number of interior samples per triangle.
    inverse : bool
        Measure ``|u^-1(w) - v^-1(w)|`` at ``w = v(z)`` instead of ``|u(z) - v(z)|``.
    mask : NDArray[np.bool_] | None
        Restrict to the triangles where the mask is true.

    Returns
    -------
    float
        The sampled sup-norm error.

    Raises
    ------
    InversionError
        If ``inverse`` and the oracle cannot invert some image sample.

    """
    if samples < 1:
        raise ValueError(f"Invalid samples {samples}. Must be >= 1")
    sub = m if mask is None else _restrict(m, mask)
    if sub.n_triangles == 0:
        return 0.0
    dom, img = _linf_samples(sub, samples)
    if not inverse:
        return float(np.hypot(*(o.eval(dom, check=False) - img).T).max())
    pre = _extended_preimages(o, img, "sup")
    return float(np.hypot(*(pre - dom).T).max())


def _extended_preimages(o: MapOracle, w: FloatArray, what: str) -> FloatArray:
    pre = o.invert_extended(w)
    outside = np.count_nonzero(~o.domain.contains(pre, tol=1e-9 * o.domain.diameter))
    if outside:
        logger.debug("Inverse %s error measures %d points past the domain boundary", what, outside)
    return pre


def _restrict(m: PAMap, mask: NDArray[np.bool_]) -> PAMap:
    tri = m.triangles[mask]
    used, inverse = np.unique(tri, return_inverse=True)
    return PAMap(Triangulation(m.vertices[used], inverse.reshape(-1, 3)), m.images[used])


def quadrature_rule(quad_n: int) -> FloatArray:
    """Centroids of the ``quad_n**2`` congruent subtriangles, as barycentric coordinates."""
    n = quad_n
    pts: list[tuple[float, float]] = []
    for i in range(n):
        for j in range(n - i):
            pts.append(((i + 1.0 / 3.0) / n, (j + 1.0 / 3.0) / n))
            if i + j <= n - 2:
                pts.append(((i + 2.0 / 3.0) / n, (j + 2.0 / 3.0) / n))
    st = np.asarray(pts, dtype=float)
    return np.column_stack([1.0 - st[:, 0] - st[:, 1], st[:, 0], st[:, 1]])


def w1p_error(
    o: MapOracle,
    m: PAMap,
    p: float,
    quad_n: int,
    inverse: bool = False,
    mask: NDArray[np.bool_] | None = None,
) -> float:
    """``L^p`` norm of the Jacobian difference (operator norm), or of the inverse Jacobians.

    The inverse term is integrated over the domain by change of variables:
    ``sum_T int_T |Du(u^-1(v(z)))^-1 - Dv_T^-1|^p |det Dv_T| dz``.

    Parameters
    ----------
    o : MapOracle
        The exact map ``u``.
    m : PAMap
        The approximation ``v``.
    p : float
        Exponent, ``1 <= p < inf``.
    quad_n : int
        Subdivision order of the per-triangle midpoint rule.
    inverse : bool
        Integrate the inverse Jacobian difference.
    mask : NDArray[np.bool_] | None
        Restrict to the triangles where the mask is true.

    Returns
    -------
    float
        The quadrature value of the norm.

    Raises
    ------
    InversionError
        If ``inverse`` and the oracle cannot invert some quadrature node image.

    """
    if not (math.isfinite(p) and p >= 1):
        raise ValueError(f"Invalid p {p}. Must be a finite number >= 1")
    if quad_n < 1:
        raise ValueError(f"Invalid quad_n {quad_n}. Must be >= 1")
    rule = quadrature_rule(quad_n)
    weight = 1.0 / len(rule)
    index = np.arange(m.n_triangles) if mask is None else np.flatnonzero(mask)
    areas = np.abs(m.domain_areas())
    pieces = m.pieces
    per_chunk = max(1, _CHUNK_NODES // len(rule))
    total = 0.0
    for k in range(0, len(index), per_chunk):
        tri = index[k : k + per_chunk]
        corners = m.vertices[m.triangles[tri]]
        nodes = np.einsum("sk,mkd->msd", rule, corners).reshape(-1, 2)
        piece = np.repeat(pieces[tri], len(rule), axis=0)
        w = np.repeat(areas[tri] * weight, len(rule))
        if inverse:
            image_nodes = np.einsum("sk,mkd->msd", rule, m.images[m.triangles[tri]]).reshape(-1, 2)
            pre = _extended_preimages(o, image_nodes, "Sobolev")
            du_inv = np.linalg.inv(o.diff(pre, check=False))
            dv_inv = np.linalg.inv(piece)
            jac = np.abs(np.linalg.det(piece))
            smax, _ = singular_values(du_inv - dv_inv)
            total += float(np.sum(w * jac * smax**p))
        else:
            smax, _ = singular_values(o.diff(nodes, check=False) - piece)
            total += float(np.sum(w * smax**p))
    return total ** (1.0 / p)


def image_area(o: MapOracle, m: PAMap, quad_n: int) -> float:
    """Area of ``u`` over the mesh support, as the integral of ``det Du``."""
    rule = quadrature_rule(quad_n)
    areas = np.abs(m.domain_areas())
    corners = m.vertices[m.triangles]
    nodes = np.einsum("sk,mkd->msd", rule, corners).reshape(-1, 2)
    det = np.linalg.det(o.diff(nodes, check=False)).reshape(m.n_triangles, len(rule))
    return float(np.sum(areas * det.mean(axis=1)))


def triangle_quality(
    m: PAMap, region: ArrayLike | None = None, square_id: ArrayLike | None = None
) -> pd.DataFrame:
    """Per-triangle table: singular values, distortion and signed areas."""
    smax, smin = singular_values(m.pieces)
    df = pd.DataFrame(
        {
            "triangle": np.arange(m.n_triangles),
            "sigma_max": smax,
            "sigma_min": smin,
            "distortion": distortion(m.pieces),
            "domain_area": m.domain_areas(),
            "image_area": m.image_areas(),
        }
    )
    if region is not None:
        df.insert(1, "region", np.asarray(region))
    if square_id is not None:
        df.insert(2 if region is not None else 1, "square_id", np.asarray(square_id))
    return df


@dataclass
class ApproxReport:
    """All measured quantities of a run.

    The four headline terms (``linf_map``, ``linf_inv``, ``w1p_map``,
    ``w1p_inv``) are measured on the whole covered domain; the ``*_eps``
    variants are restricted to the Lebesgue region.
    """

    linf_map: float
    linf_inv: float
    w1p_map: float
    w1p_inv: float
    bilip_v: float
    area_deficit: float
    injective: bool
    orientation_ok: bool
    r: float
    eta: float
    delta: float
    eps_target: float
    p: float = 2.0
    eps_internal: float = 0.0
    linf_map_eps: float = 0.0
    linf_inv_eps: float = 0.0
    w1p_map_eps: float = 0.0
    w1p_inv_eps: float = 0.0
    uncovered_area: float = 0.0
    extension_constant_max: float = 0.0
    L: float = 1.0  # noqa: N815
    n_triangles: int = 0
    linf_sample_spacing: float = 0.0
    domain_convex: bool = True
    premap_constant: float | None = None
    image_area_deficit: float = 0.0
    grid_ratio_lower: float | None = None
    grid_ratio_upper: float | None = None
    grid_injective: bool | None = None
    witness: str | None = None
    errors: list[dict[str, str]] = field(default_factory=list)

    @property
    def terms_ok(self) -> bool:
        """Whether all four error terms are within the target."""
        terms = (self.linf_map, self.linf_inv, self.w1p_map, self.w1p_inv)
        return all(t <= self.eps_target for t in terms)

    @property
    def passed(self) -> bool:
        return self.injective and self.orientation_ok and self.terms_ok and not self.errors

    def as_dict(self) -> dict[str, object]:
        return asdict(self)


def format_report(report: ApproxReport) -> str:
    """Format a report as a human-readable summary.

    Parameters
    ----------
    report : ApproxReport
        Report to format.

    Returns
    -------
    str
        Formatted report string.

    """
    lines = []
    status = "PASSED" if report.passed else "FAILED"
    lines.append(f"Approximation: {status}")
    lines.append(f"Injective: {report.injective}  orientation preserving: {report.orientation_ok}")
    lines.append(f"L-inf map / inverse: {report.linf_map:.3e} / {report.linf_inv:.3e}")
    lines.append(f"W1,{report.p:g} map / inverse: {report.w1p_map:.3e} / {report.w1p_inv:.3e}")
    lines.append(f"Bi-Lipschitz (per triangle): {report.bilip_v:.4g} (input L = {report.L:.4g})")
    lines.append(f"Triangles: {report.n_triangles:,}")

    if report.uncovered_area > 0:
        lines.append(f"Uncovered boundary sliver: {report.uncovered_area:.3e}")
    if not report.domain_convex:
        lines.append("Domain is not convex: bi-Lipschitz value is a local bound")
    if report.witness:
        lines.append(f"Witness: {report.witness}")

    if report.errors:
        lines.append("Errors:")
        for error in report.errors[:5]:
            lines.append(f"  - square {error['square_id']}: {error['reason']}")
        if len(report.errors) > 5:
            lines.append(f"  ... and {len(report.errors) - 5} more")

    return "\n".join(lines)
