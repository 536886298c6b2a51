"""Piecewise-affine approximation of planar bi-Lipschitz homeomorphisms.

Example usage:

    from pa_homeo_approx import approximate, list_maps

    # Approximate a builtin map on the unit square
    ra = approximate("shear_sine:a=0.1,k=1", eps=0.1)
    print(ra.report.passed, ra.mesh.n_triangles)

    # Other domains and exponents, writing meshes, report and figure
    ra = approximate("polar_twist", domain="disk:0.5,0.5,0.5", p=1, out_dir="./run", svg=True)

    # Builtin maps with their constants
    df = list_maps()

    # Certify a mesh written earlier
    from pa_homeo_approx import check_injective, read_pamesh
    result = check_injective(read_pamesh(Path("./run/mesh.pamesh")))

"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

from pa_homeo_approx.config import (
    DEFAULT_CONCURRENCY,
    DEFAULT_DOMAIN,
    DEFAULT_EPS,
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_HALVINGS,
    DEFAULT_OUTPUT_FORMAT,
    DEFAULT_P,
    DEFAULT_PAIRS,
    DEFAULT_QUAD_N,
    DEFAULT_R0,
    DEFAULT_SEED,
    OutputFormat,
    PipelineConfig,
    validate_output_format,
)
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
from pa_homeo_approx.formats import read_pamesh, read_report, write_pamesh, write_sampled_map
from pa_homeo_approx.maps import MapOracle, builtin_catalogue, map_from_spec
from pa_homeo_approx.metrics import ApproxReport, PAMap, check_injective, format_report, pa_bilip
from pa_homeo_approx.pipeline import RunArtifacts, naive_interpolation, run

if TYPE_CHECKING:
    import pandas as pd

    from pa_homeo_approx.pipeline import Progress

logger = logging.getLogger(__name__)

__version__ = "0.1.0"
__all__ = [
    "approximate",
    "list_maps",
    "run",
    "naive_interpolation",
    "map_from_spec",
    "check_injective",
    "pa_bilip",
    "format_report",
    "read_pamesh",
    "write_pamesh",
    "read_report",
    "write_sampled_map",
    "PipelineConfig",
    "RunArtifacts",
    "ApproxReport",
    "PAMap",
    "MapOracle",
    "PAApproxError",
    "DomainError",
    "InversionError",
    "ClassificationError",
    "TilingError",
    "CrossError",
    "ExtensionError",
    "MeshFormatError",
    "ValidationError",
    "__version__",
]


def approximate(
    map_spec: str,
    *,
    domain: str = DEFAULT_DOMAIN,
    eps: float = DEFAULT_EPS,
    p: float = DEFAULT_P,
    r0: float = DEFAULT_R0,
    max_halvings: int = DEFAULT_MAX_HALVINGS,
    quad_n: int = DEFAULT_QUAD_N,
    max_depth: int = DEFAULT_MAX_DEPTH,
    pairs: int = DEFAULT_PAIRS,
    seed: int = DEFAULT_SEED,
    out_dir: str | Path | None = None,
    svg: bool = False,
    naive: bool = False,
    format: OutputFormat = DEFAULT_OUTPUT_FORMAT,
    concurrency: int = DEFAULT_CONCURRENCY,
    outside_constant: float | None = None,
    timings: bool = False,
    progress: Progress | None = None,
) -> RunArtifacts:
    """Approximate a bi-Lipschitz homeomorphism by a piecewise-affine one.

    Parameters
    ----------
    map_spec : str
        Builtin name with optional parameters (``shear_sine:a=0.1,k=1``) or
        ``file:<path>`` of a SAMPLEDMAP file.
    domain : str
        Domain spec (``unit_square``, ``rect:x0,y0,x1,y1``, ``lshape``,
        ``polygon:x,y;x,y;...``, ``disk:cx,cy,R``).
    eps : float
        Target accuracy of the four reported error terms.
    p : float
        Sobolev exponent, at least 1.
    r0 : float
        Initial side of the Lebesgue squares.
    max_halvings : int
        How often ``r`` may be halved.
    quad_n : int
        Quadrature nodes per axis in the Lebesgue test.
    max_depth : int
        Quadtree halvings below ``r`` on non-right domains.
    pairs : int
        Sampled pairs in the grid map bi-Lipschitz check.
    seed : int
        Random seed of the sampled checks.
    out_dir : str | Path | None
        Directory for mesh, dumps and report. Nothing is written when None.
    svg : bool
        Also draw the figure(s).
    naive : bool
        Also build the unclassified interpolation at ``r0``.
    format : OutputFormat
        Table format (parquet or csv).
    concurrency : int
        Worker threads per stage.
    outside_constant : float | None
        Bi-Lipschitz constant assumed for the extensions when choosing the
        internal accuracy; the worst-case ceiling when None.
    timings : bool
        Include stage timings in the report.
    progress : Progress | None
        Callback receiving stage descriptions.

    Returns
    -------
    RunArtifacts
        Mesh, intermediate structures and report.

    Raises
    ------
    ValueError
        If a parameter is invalid.
    PAApproxError
        If a stage fails before the extensions.

    """
    cfg = PipelineConfig(
        map_spec=map_spec,
        domain_spec=domain,
        eps_target=eps,
        p=p,
        r0=r0,
        max_halvings=max_halvings,
        quad_n=quad_n,
        max_depth=max_depth,
        pairs=pairs,
        seed=seed,
        out_dir=Path(out_dir) if out_dir is not None else None,
        svg=svg,
        naive=naive,
        output_format=validate_output_format(format),
        concurrency=concurrency,
        outside_constant=outside_constant,
        timings=timings,
    )
    logger.info("Approximating %s on %s with eps=%g, p=%g", map_spec, domain, eps, p)
    return run(cfg, progress)


def list_maps() -> pd.DataFrame:
    """Builtin maps with their default parameters and bi-Lipschitz constants."""
    return builtin_catalogue()
