"""End-to-end approximation: classify, interpolate, build the grid map, extend, glue, measure."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from pa_homeo_approx.config import C1, PipelineConfig
from pa_homeo_approx.exceptions import ClassificationError, ExtensionError, ValidationError
from pa_homeo_approx.extension import BoundaryMap, ExtensionMesh, extend_square, measured_bilip
from pa_homeo_approx.figures import draw_mesh
from pa_homeo_approx.formats import (
    CLASSIFICATION_FILE,
    FIGURE_FILE,
    GRID_FILE,
    MESH_FILE,
    NAIVE_FIGURE_FILE,
    NAIVE_MESH_FILE,
    QUALITY_STEM,
    REPORT_FILE,
    get_output_path,
    save_dataframe,
    write_classification,
    write_grid_map,
    write_pamesh,
    write_report,
)
from pa_homeo_approx.geometry import FloatArray, IntArray, Point2, domain_from_spec
from pa_homeo_approx.gridapprox import (
    GridMap,
    Tiling,
    build_grid,
    build_grid_map,
    build_tiling,
    check_grid_injective,
    compute_crosses,
    eps_boundary_map,
    verify_grid_bilip,
)
from pa_homeo_approx.lebesgue import (
    InterpolationMesh,
    LebesgueClassification,
    classify,
    delta_of_eta,
    eta_budget,
    interpolate,
    interpolate_cells,
)
from pa_homeo_approx.maps import MapOracle, map_from_spec
from pa_homeo_approx.metrics import (
    ApproxReport,
    PAMap,
    check_injective,
    image_area,
    linf_error,
    linf_sample_spacing,
    pa_bilip,
    triangle_quality,
    w1p_error,
)
from pa_homeo_approx.workers import map_ordered

logger = logging.getLogger(__name__)

Progress = Callable[[str], None]

_EPS_BISECTIONS = 200
_GLUE_TOL = 1e-12


@dataclass
class RunArtifacts:
    """Everything a run produced, including partial results when some squares failed."""

    config: PipelineConfig
    oracle: MapOracle
    mesh: PAMap
    classification: LebesgueClassification
    report: ApproxReport
    region: NDArray[np.str_]
    square_id: IntArray
    eps_mesh: InterpolationMesh | None = None
    tiling: Tiling | None = None
    grid_map: GridMap | None = None
    extensions: list[ExtensionMesh] = field(default_factory=list)
    errors: list[dict[str, str]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    naive: PAMap | None = None

    @property
    def eps_mask(self) -> NDArray[np.bool_]:
        return np.asarray(self.region == "eps")

    @property
    def exit_code(self) -> int:
        return 0 if self.report.passed else 1


def total_error_bound(eps: float, p: float, L: float, outside: float) -> float:  # noqa: N803
    """Sum of the four error terms guaranteed for an internal accuracy ``eps``.

    ``outside`` is the bi-Lipschitz constant of the extensions.
    """
    k = L + outside
    return eps + 2.0 * k * eps ** (1.0 / p) + 2.0 * (k * math.sqrt(eps / math.pi) + eps)


def internal_eps(
    eps_target: float, p: float, L: float, outside: float | None = None  # noqa: N803
) -> float:
    """Largest internal accuracy whose guaranteed total stays within ``eps_target``.

    ``outside`` defaults to the ceiling ``C1 * L**4``. The total is increasing,
    so a bisection on a logarithmic scale finds the threshold.
    """
    k = C1 * L**4 if outside is None else outside
    lo, hi = math.log(1e-300), math.log(eps_target)
    for _ in range(_EPS_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if total_error_bound(math.exp(mid), p, L, k) <= eps_target:
            lo = mid
        else:
            hi = mid
    return math.exp(lo)


def naive_interpolation(o: MapOracle, r: float) -> PAMap:
    """Interpolation of ``u`` over every r-cell of the domain, no Lebesgue test."""
    x0, y0, x1, y1 = o.domain.bbox
    nx = math.ceil((x1 - x0) / r - 1e-9)
    ny = math.ceil((y1 - y0) / r - 1e-9)
    t = 1e-6 * r
    cells = [
        (i, j)
        for j in range(ny)
        for i in range(nx)
        if o.domain.square_inside((x0 + i * r + t, y0 + j * r + t), r - 2.0 * t)
    ]
    if not cells:
        raise ClassificationError(f"No square of side {r} fits in the domain")
    mesh = interpolate_cells(o, np.asarray(cells, dtype=np.int64), r, Point2(x0, y0)).mesh
    flipped = int(np.count_nonzero(mesh.image_areas() <= 0))
    logger.info(
        "Naive interpolation at r=%g: %d triangles, %d flipped", r, mesh.n_triangles, flipped
    )
    return mesh


def choose_classification(
    o: MapOracle,
    cfg: PipelineConfig,
    eps: float,
    progress: Progress | None = None,
) -> tuple[LebesgueClassification, float]:
    """Classify at ``r0``, halving ``r`` until the area deficit is at most ``eps``.

    Stops early at the halving cap or when a halving adds no accepted area.

    Returns
    -------
    tuple[LebesgueClassification, float]
        The chosen classification and its ``eta``.

    """
    L = o.L  # noqa: N806
    r = cfg.r0
    chosen: tuple[LebesgueClassification, float] | None = None
    for halving in range(cfg.max_halvings + 1):
        eta = eta_budget(L, eps, cfg.p, r, o.domain.area)
        delta = delta_of_eta(eta, L)
        if progress:
            progress(f"classifying r={r:g}")
        try:
            cls = classify(o, r, delta, cfg.quad_n, cfg.concurrency)
        except ClassificationError:
            if chosen is None:
                raise
            break
        if chosen is not None and cls.accepted_area <= chosen[0].accepted_area:
            logger.info("Halving to r=%g added no accepted area; keeping r=%g", r, chosen[0].r)
            break
        chosen = (cls, eta)
        if cls.area_deficit <= eps:
            break
        if halving == cfg.max_halvings:
            logger.warning(
                "Halving cap reached at r=%g with area deficit %.3e > eps=%.3e",
                r,
                cls.area_deficit,
                eps,
            )
        r /= 2.0
    assert chosen is not None
    return chosen


def extend_outside(
    o: MapOracle, gm: GridMap, concurrency: int
) -> tuple[list[ExtensionMesh], list[dict[str, str]]]:
    """Extend the grid map into every tile outside the Lebesgue region.

    Failures are recorded per square and the rest still extended.
    """
    tiling = gm.grid.tiling
    tiles = [int(t) for t in tiling.outside_tiles]
    squares = tiling.squares
    guide = lambda z: o.eval(z, check=False)  # noqa: E731

    def extend(tile: int) -> ExtensionMesh | ExtensionError:
        points, images = gm.tile_boundary(tile)
        try:
            return extend_square(BoundaryMap(squares[tile], points, images, square_id=tile), guide)
        except ExtensionError as e:
            return e

    results = map_ordered(extend, tiles, concurrency)
    meshes = [m for m in results if isinstance(m, ExtensionMesh)]
    errors = [
        {"square_id": str(e.square_id), "reason": e.reason}
        for e in results
        if isinstance(e, ExtensionError)
    ]
    for error in errors:
        logger.error("Square %s not extended: %s", error["square_id"], error["reason"])
    logger.info("Extended %d squares (%d failed)", len(meshes), len(errors))
    return meshes, errors


def glue(parts: Sequence[PAMap]) -> tuple[PAMap, IntArray]:
    """Merge meshes along vertices with identical coordinates.

    Returns
    -------
    tuple[PAMap, IntArray]
        The glued mesh and, per triangle, the index of the part it came from.

    Raises
    ------
    ValidationError
        If two parts give a shared vertex images further apart than a
        relative ``1e-12``.

    """
    if not parts:
        raise ValueError("Nothing to glue")
    vertices = np.vstack([m.vertices for m in parts])
    images = np.vstack([m.images for m in parts])
    offsets = np.cumsum([0] + [len(m.vertices) for m in parts])
    triangles = np.vstack([m.triangles + off for m, off in zip(parts, offsets)])
    keys, first, inverse = np.unique(vertices, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    tol = _GLUE_TOL * max(1.0, float(np.abs(images).max(initial=0.0)))
    gap = np.abs(images - images[first][inverse]).max(axis=1)
    clash = np.flatnonzero(gap > tol)
    if len(clash):
        k = int(clash[0])
        x, y = (float(c) for c in vertices[k])
        raise ValidationError(
            f"Glued parts disagree at vertex ({x!r}, {y!r}): "
            f"images {images[first[inverse[k]]].tolist()} and {images[k].tolist()}"
        )
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    merged = PAMap.from_arrays(keys[order], rank[inverse][triangles], images[first[order]])
    part = np.repeat(np.arange(len(parts)), [m.n_triangles for m in parts])
    return merged, part


@contextmanager
def _timed(timings: dict[str, float], stage: str) -> Iterator[None]:
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[stage] = time.perf_counter() - start


def measure(
    o: MapOracle,
    cfg: PipelineConfig,
    mesh: PAMap,
    eps_mask: NDArray[np.bool_],
    cls: LebesgueClassification,
    eta: float,
    eps: float,
    gm: GridMap | None,
    extensions: Sequence[ExtensionMesh],
    errors: list[dict[str, str]],
) -> ApproxReport:
    """Compute every report field for a glued mesh, and check the grid map it was built from."""
    tiling = gm.grid.tiling if gm is not None else None
    ratios: tuple[float | None, float | None] = (None, None)
    grid_ok: bool | None = None
    if gm is not None:
        ratios = verify_grid_bilip(gm, o.L, cfg.pairs, cfg.seed)
        grid_ok = check_grid_injective(gm)
        if not grid_ok:
            logger.error("Grid map image pieces cross")
    injectivity = check_injective(mesh)
    q, s = cfg.metric_quad_n, cfg.linf_samples
    has_eps = bool(eps_mask.any())
    eps_image = float(mesh.image_areas()[eps_mask].sum()) if has_eps else 0.0
    return ApproxReport(
        linf_map=linf_error(o, mesh, s),
        linf_inv=linf_error(o, mesh, s, inverse=True),
        w1p_map=w1p_error(o, mesh, cfg.p, q),
        w1p_inv=w1p_error(o, mesh, cfg.p, q, inverse=True),
        bilip_v=pa_bilip(mesh),
        area_deficit=cls.area_deficit,
        injective=injectivity.injective,
        orientation_ok=injectivity.orientation_ok,
        r=cls.r,
        eta=eta,
        delta=cls.delta,
        eps_target=cfg.eps_target,
        p=cfg.p,
        eps_internal=eps,
        linf_map_eps=linf_error(o, mesh, s, mask=eps_mask) if has_eps else 0.0,
        linf_inv_eps=linf_error(o, mesh, s, inverse=True, mask=eps_mask) if has_eps else 0.0,
        w1p_map_eps=w1p_error(o, mesh, cfg.p, q, mask=eps_mask) if has_eps else 0.0,
        w1p_inv_eps=w1p_error(o, mesh, cfg.p, q, inverse=True, mask=eps_mask) if has_eps else 0.0,
        uncovered_area=tiling.uncovered_area if tiling is not None else 0.0,
        extension_constant_max=max((measured_bilip(e) for e in extensions), default=0.0),
        L=o.L,
        n_triangles=mesh.n_triangles,
        linf_sample_spacing=linf_sample_spacing(mesh, s),
        domain_convex=o.domain.is_convex,
        premap_constant=None,
        image_area_deficit=max(0.0, image_area(o, mesh, q) - eps_image),
        grid_ratio_lower=ratios[0],
        grid_ratio_upper=ratios[1],
        grid_injective=grid_ok,
        witness=injectivity.witness,
        errors=list(errors),
    )


def run(cfg: PipelineConfig, progress: Progress | None = None) -> RunArtifacts:
    """Run the whole approximation for a configuration.

    Parameters
    ----------
    cfg : PipelineConfig
        Run configuration.
    progress : Progress | None
        Optional callback receiving a short stage description.

    Returns
    -------
    RunArtifacts
        Glued mesh, intermediate structures and the report. Squares whose
        extension failed are listed in ``errors`` and left out of the mesh.

    Raises
    ------
    PAApproxError
        If a stage before the extensions fails.

    """
    timings: dict[str, float] = {}
    o = map_from_spec(cfg.map_spec, domain_from_spec(cfg.domain_spec))
    domain = o.domain
    L = o.L  # noqa: N806
    eps = internal_eps(cfg.eps_target, cfg.p, L, cfg.outside_constant)
    logger.info("Map %s with L=%.6g; internal eps=%.3e", o.name, L, eps)

    with _timed(timings, "classify"):
        cls, eta = choose_classification(o, cfg, eps, progress)
    omega_eps = cls.omega_eps
    eps_mesh = interpolate(o, cls) if omega_eps is not None else None

    if progress:
        progress("building the grid map")
    with _timed(timings, "grid"):
        tiling = build_tiling(domain, omega_eps, cfg.max_depth, r=cls.r, origin=cls.origin)
        grid = build_grid(tiling)
        boundary = eps_boundary_map(o, grid)
        crosses = compute_crosses(o, grid, boundary, cfg.concurrency)
        gm = build_grid_map(
            o, grid, crosses, boundary, adaptive_rho=cfg.adaptive_rho, concurrency=cfg.concurrency
        )

    if progress:
        progress(f"extending {len(tiling.outside_tiles)} squares")
    with _timed(timings, "extend"):
        extensions, errors = extend_outside(o, gm, cfg.concurrency)

    parts: list[PAMap] = [e.mesh for e in extensions]
    if eps_mesh is not None:
        parts.append(eps_mesh.mesh)
    if not parts:
        raise ExtensionError(-1, "no square could be extended and no Lebesgue square was accepted")
    mesh, part = glue(parts)
    n_ext = len(extensions)
    region = np.where(part < n_ext, "outside", "eps")
    square_id = np.empty(mesh.n_triangles, dtype=np.int64)
    ext_tiles = np.asarray([e.square_id for e in extensions], dtype=np.int64)
    outside = part < n_ext
    square_id[outside] = ext_tiles[part[outside]]
    if eps_mesh is not None:
        square_id[~outside] = eps_mesh.cell_of_triangle

    if progress:
        progress("measuring")
    with _timed(timings, "measure"):
        report = measure(o, cfg, mesh, region == "eps", cls, eta, eps, gm, extensions, errors)

    naive = naive_interpolation(o, cfg.r0) if cfg.naive else None
    artifacts = RunArtifacts(
        config=cfg,
        oracle=o,
        mesh=mesh,
        classification=cls,
        report=report,
        region=region,
        square_id=square_id,
        eps_mesh=eps_mesh,
        tiling=tiling,
        grid_map=gm,
        extensions=extensions,
        errors=errors,
        timings=timings,
        naive=naive,
    )
    if cfg.out_dir is not None:
        write_outputs(artifacts, cfg.out_dir)
    return artifacts


def cross_endpoints(ra: RunArtifacts) -> FloatArray:
    if ra.grid_map is None or not ra.grid_map.crosses:
        return np.zeros((0, 2))
    return np.vstack([c.endpoints for c in ra.grid_map.crosses.values()])


def emit_svg(ra: RunArtifacts, path: Path) -> Path:
    """Domain and image triangulations, Lebesgue squares shaded and crosses marked."""
    return draw_mesh(
        ra.mesh,
        path,
        eps_mask=ra.eps_mask,
        cross_points=cross_endpoints(ra),
        title=f"{ra.oracle.name}, r={ra.classification.r:g}",
    )


def emit_report(ra: RunArtifacts, path: Path) -> Path:
    """Key-value report with the config echo, errors and (when enabled) stage timings."""
    timings = ra.timings if ra.config.timings else None
    return write_report(ra.report, path, ra.config.echo(), timings)


def write_outputs(ra: RunArtifacts, out_dir: Path) -> None:
    """Write mesh, dumps, report, triangle table and, when configured, the figures."""
    cfg = ra.config
    write_pamesh(ra.mesh, out_dir / MESH_FILE)
    write_classification(ra.classification, out_dir / CLASSIFICATION_FILE)
    if ra.grid_map is not None:
        write_grid_map(ra.grid_map, out_dir / GRID_FILE)
    quality = triangle_quality(ra.mesh, region=ra.region, square_id=ra.square_id)
    quality_path = get_output_path(out_dir, QUALITY_STEM, cfg.output_format)
    save_dataframe(quality, quality_path, cfg.output_format)
    if cfg.svg:
        emit_svg(ra, out_dir / FIGURE_FILE)
    if ra.naive is not None:
        write_pamesh(ra.naive, out_dir / NAIVE_MESH_FILE)
        if cfg.svg:
            draw_mesh(ra.naive, out_dir / NAIVE_FIGURE_FILE, title=f"naive r={cfg.r0:g}")
    emit_report(ra, out_dir / REPORT_FILE)
    logger.info("Wrote run outputs to %s", out_dir)
