"""Text file formats of meshes, sampled maps, dumps and reports, and tabular exports."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from pa_homeo_approx.config import OutputFormat
from pa_homeo_approx.exceptions import MeshFormatError
from pa_homeo_approx.geometry import FloatArray
from pa_homeo_approx.metrics import ApproxReport, PAMap

if TYPE_CHECKING:
    from pa_homeo_approx.gridapprox import GridMap
    from pa_homeo_approx.lebesgue import LebesgueClassification
    from pa_homeo_approx.maps import MapOracle

logger = logging.getLogger(__name__)

# Output file names inside a run directory
MESH_FILE = "mesh.pamesh"
NAIVE_MESH_FILE = "naive.pamesh"
REPORT_FILE = "report.txt"
CLASSIFICATION_FILE = "classification.txt"
GRID_FILE = "grid.txt"
FIGURE_FILE = "figure.svg"
NAIVE_FIGURE_FILE = "naive.svg"
QUALITY_STEM = "triangles"


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# PAMESH
# ---------------------------------------------------------------------------


def write_pamesh(m: PAMap, path: Path) -> Path:
    """Write ``PAMESH nv nt``, then ``v x y u_x u_y`` and ``t i j k`` lines.

    Floats are written with ``repr`` so a read gives back the same doubles.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"PAMESH {len(m.vertices)} {m.n_triangles}"]
    for (x, y), (ux, uy) in zip(m.vertices, m.images):
        lines.append(f"v {_fmt(x)} {_fmt(y)} {_fmt(ux)} {_fmt(uy)}")
    for i, j, k in m.triangles:
        lines.append(f"t {i} {j} {k}")
    path.write_text("\n".join(lines) + "\n")
    logger.debug("Wrote %s (%d triangles)", path, m.n_triangles)
    return path


def read_pamesh(path: Path) -> PAMap:
    """Read a PAMESH file.

    Raises
    ------
    MeshFormatError
        If the header, a record or an index is malformed.

    """
    name = str(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise MeshFormatError(name, 1, "empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "PAMESH":
        raise MeshFormatError(name, 1, "expected header 'PAMESH nv nt'")
    try:
        nv, nt = int(head[1]), int(head[2])
    except ValueError as e:
        raise MeshFormatError(name, 1, f"bad counts: {e}") from e
    body = lines[1:]
    if len(body) < nv + nt:
        raise MeshFormatError(name, len(lines), f"expected {nv} vertices and {nt} triangles")
    coords = np.empty((nv, 4))
    for k in range(nv):
        parts = body[k].split()
        if len(parts) != 5 or parts[0] != "v":
            raise MeshFormatError(name, k + 2, "expected 'v x y u_x u_y'")
        try:
            coords[k] = [float(v) for v in parts[1:]]
        except ValueError as e:
            raise MeshFormatError(name, k + 2, str(e)) from e
    tris = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        line_number = nv + k + 2
        parts = body[nv + k].split()
        if len(parts) != 4 or parts[0] != "t":
            raise MeshFormatError(name, line_number, "expected 't i j k'")
        try:
            tris[k] = [int(v) for v in parts[1:]]
        except ValueError as e:
            raise MeshFormatError(name, line_number, str(e)) from e
        if tris[k].min() < 0 or tris[k].max() >= nv:
            raise MeshFormatError(name, line_number, "vertex index out of range")
    return PAMap.from_arrays(coords[:, :2], tris, coords[:, 2:])


# ---------------------------------------------------------------------------
# SAMPLEDMAP
# ---------------------------------------------------------------------------


def write_sampled_map(o: MapOracle, path: Path, n_rows: int, n_cols: int) -> Path:
    """Sample ``o`` on a regular ``n_rows x n_cols`` grid over its domain bbox.

    Writes ``SAMPLEDMAP n_rows n_cols L`` and then ``z_x z_y u_x u_y`` lines,
    row by row from the bottom.
    """
    if n_rows < 2 or n_cols < 2:
        raise ValueError(f"Invalid sample grid {n_rows}x{n_cols}. Must be at least 2x2")
    x0, y0, x1, y1 = o.domain.bbox
    xs = np.linspace(x0, x1, n_cols)
    ys = np.linspace(y0, y1, n_rows)
    gx, gy = np.meshgrid(xs, ys)
    z = np.column_stack([gx.ravel(), gy.ravel()])
    u = o.eval(z, check=False)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"SAMPLEDMAP {n_rows} {n_cols} {_fmt(o.L)}"]
    lines.extend(
        f"{_fmt(a)} {_fmt(b)} {_fmt(c)} {_fmt(d)}" for (a, b), (c, d) in zip(z, u)
    )
    path.write_text("\n".join(lines) + "\n")
    logger.info("Wrote %dx%d samples of %s to %s", n_rows, n_cols, o.name, path)
    return path


def read_sampled_map(path: Path) -> tuple[FloatArray, FloatArray, FloatArray, float]:
    """Read a SAMPLEDMAP file into grid axes, ``(n_rows, n_cols, 2)`` values and ``L``.

    Raises
    ------
    MeshFormatError
        If the header or the sample grid is malformed.

    """
    name = str(path)
    with path.open() as fh:
        head = fh.readline().split()
    if len(head) != 4 or head[0] != "SAMPLEDMAP":
        raise MeshFormatError(name, 1, "expected header 'SAMPLEDMAP n_rows n_cols L'")
    try:
        n_rows, n_cols, lip = int(head[1]), int(head[2]), float(head[3])
    except ValueError as e:
        raise MeshFormatError(name, 1, f"bad header values: {e}") from e
    if not lip >= 1:
        raise MeshFormatError(name, 1, f"L must be >= 1, got {lip}")
    try:
        df = pd.read_csv(path, sep=r"\s+", skiprows=1, header=None, names=["zx", "zy", "ux", "uy"])
    except (ValueError, pd.errors.ParserError) as e:
        raise MeshFormatError(name, 2, str(e)) from e
    if len(df) != n_rows * n_cols:
        raise MeshFormatError(
            name, len(df) + 1, f"expected {n_rows * n_cols} samples, got {len(df)}"
        )
    if df.isna().any().any():
        bad = int(np.flatnonzero(df.isna().any(axis=1).to_numpy())[0])
        raise MeshFormatError(name, bad + 2, "sample line needs four numbers")
    z = df[["zx", "zy"]].to_numpy(dtype=float).reshape(n_rows, n_cols, 2)
    xs, ys = z[0, :, 0], z[:, 0, 1]
    if not (np.allclose(z[:, :, 0], xs[None, :]) and np.allclose(z[:, :, 1], ys[:, None])):
        raise MeshFormatError(name, 2, "samples do not lie on a regular grid")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise MeshFormatError(name, 2, "grid axes must increase")
    values = df[["ux", "uy"]].to_numpy(dtype=float).reshape(n_rows, n_cols, 2)
    return xs, ys, values, lip


# ---------------------------------------------------------------------------
# Dumps
# ---------------------------------------------------------------------------


def write_classification(cls: LebesgueClassification, path: Path) -> Path:
    """One ``cell i j accepted|rejected m11 m12 m21 m22 deviation`` line per eligible square."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for (i, j), ok, m, dev in zip(cls.cells, cls.accepted, cls.matrices, cls.deviations):
        status = "accepted" if ok else "rejected"
        entries = " ".join(_fmt(v) for v in np.asarray(m).ravel())
        lines.append(f"cell {i} {j} {status} {entries} {_fmt(dev)}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def write_grid_map(gm: GridMap, path: Path) -> Path:
    """One ``side a b : t0 x0 y0 t1 x1 y1 ...`` line per side with its image breakpoints."""
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for sid, (a, b) in enumerate(gm.grid.sides):
        pc = gm.pieces[sid]
        if pc is None:
            continue
        body = " ".join(
            f"{_fmt(t)} {_fmt(x)} {_fmt(y)}" for t, (x, y) in zip(pc.ts, pc.images)
        )
        lines.append(f"side {a} {b} : {body}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def _value(v: object) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def format_key_values(
    report: ApproxReport,
    config: Mapping[str, str] | None = None,
    timings: Mapping[str, float] | None = None,
) -> str:
    """Sections of ``key = value`` lines: report, config, errors and optional timings."""
    lines = ["[report]"]
    fields = report.as_dict()
    fields.pop("errors")
    errors = report.errors
    for key, value in fields.items():
        lines.append(f"{key} = {_value(value)}")
    lines.append(f"passed = {_value(report.passed)}")
    if config:
        lines.append("")
        lines.append("[config]")
        lines.extend(f"{k} = {v}" for k, v in config.items())
    if errors:
        lines.append("")
        lines.append("[errors]")
        for error in errors:
            lines.append(f"square {error['square_id']} = {error['reason']}")
    if timings:
        lines.append("")
        lines.append("[timings]")
        lines.extend(f"{k} = {v:.6f}" for k, v in timings.items())
    return "\n".join(lines) + "\n"


def write_report(
    report: ApproxReport,
    path: Path,
    config: Mapping[str, str] | None = None,
    timings: Mapping[str, float] | None = None,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_key_values(report, config, timings))
    return path


def read_report(path: Path) -> dict[str, dict[str, str]]:
    """Parse a report file back into ``{section: {key: value}}``."""
    sections: dict[str, dict[str, str]] = {}
    current: dict[str, str] | None = None
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        if current is None:
            continue
        key, _, value = line.partition(" = ")
        current[key] = value
    return sections


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------


def get_output_path(out_dir: Path, stem: str, output_format: OutputFormat) -> Path:
    """Path of a tabular export inside a run directory."""
    ext = "parquet" if output_format == "parquet" else "csv"
    return out_dir / f"{stem}.{ext}"


def save_dataframe(
    df: pd.DataFrame,
    output_path: Path,
    output_format: OutputFormat,
) -> None:
    """Save DataFrame to file.

    Parameters
    ----------
    df : pd.DataFrame
        DataFrame to save.
    output_path : Path
        Path to save to.
    output_format : OutputFormat
        Output format (parquet or csv).

    """
    output_path.parent.mkdir(parents=True, exist_ok=True)

    if output_format == "parquet":
        df.to_parquet(output_path, index=False)
    else:  # csv
        df.to_csv(output_path, index=False)
