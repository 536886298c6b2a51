"""SVG drawings of a mesh and its image."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.collections import PolyCollection
from matplotlib.figure import Figure
from numpy.typing import NDArray

from pa_homeo_approx.geometry import FloatArray
from pa_homeo_approx.metrics import PAMap

logger = logging.getLogger(__name__)

_EPS_FACE = "#c6dbef"
_OUTSIDE_FACE = "#ffffff"
_FLIPPED_FACE = "#e6550d"
_EDGE = "#3a3a3a"


def _panel(
    fig: Figure,
    position: int,
    n_panels: int,
    coords: FloatArray,
    triangles: NDArray[np.int64],
    faces: list[str],
    title: str,
) -> None:
    ax = fig.add_subplot(1, n_panels, position)
    polys = coords[triangles]
    ax.add_collection(PolyCollection(polys, facecolors=faces, edgecolors=_EDGE, linewidths=0.3))
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    pad = 0.03 * float(max(hi - lo))
    ax.set_xlim(lo[0] - pad, hi[0] + pad)
    ax.set_ylim(lo[1] - pad, hi[1] + pad)
    ax.set_aspect("equal", "box")
    ax.set_title(title)


def draw_mesh(
    m: PAMap,
    path: Path,
    *,
    eps_mask: NDArray[np.bool_] | None = None,
    cross_points: FloatArray | None = None,
    title: str = "",
) -> Path:
    """Write a domain panel and, when some triangle lies outside the shaded region, an image panel.

    Parameters
    ----------
    m : PAMap
        Mesh to draw.
    path : Path
        Output SVG path.
    eps_mask : NDArray[np.bool_] | None
        Triangles to shade as the Lebesgue region; all when None.
    cross_points : FloatArray | None
        Cross endpoints to mark on the domain panel.
    title : str
        Figure title.

    Returns
    -------
    Path
        The written file.

    """
    inside = np.ones(m.n_triangles, dtype=bool) if eps_mask is None else np.asarray(eps_mask)
    flipped = m.image_areas() <= 0
    dom_faces = [_EPS_FACE if k else _OUTSIDE_FACE for k in inside]
    img_faces = [
        _FLIPPED_FACE if f else (_EPS_FACE if k else _OUTSIDE_FACE) for k, f in zip(inside, flipped)
    ]
    two = not bool(inside.all()) or bool(flipped.any())
    n_panels = 2 if two else 1
    with mpl.rc_context({"svg.hashsalt": "pa-homeo-approx", "svg.fonttype": "none"}):
        fig = Figure(figsize=(5.0 * n_panels, 5.0))
        _panel(fig, 1, n_panels, m.vertices, m.triangles, dom_faces, "domain")
        if cross_points is not None and len(cross_points):
            fig.axes[0].plot(cross_points[:, 0], cross_points[:, 1], "o", ms=1.5, color="#31a354")
        if two:
            _panel(fig, 2, n_panels, m.images, m.triangles, img_faces, "image")
        if title:
            fig.suptitle(title)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("Wrote %s (%d triangles, %d flipped)", path, m.n_triangles, int(flipped.sum()))
    return path
