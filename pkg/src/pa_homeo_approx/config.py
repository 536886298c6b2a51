"""Configuration constants and types for pa-homeo-approx."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Literal


class BuiltinMap(str, Enum):
    """Built-in bi-Lipschitz test maps."""

    IDENTITY = "identity"
    AFFINE = "affine"
    SHEAR_SINE = "shear_sine"
    POLAR_TWIST = "polar_twist"
    FOLD_CANDIDATE = "fold_candidate"


class DomainKind(str, Enum):
    """Supported domain shapes."""

    UNIT_SQUARE = "unit_square"
    RECT = "rect"
    LSHAPE = "lshape"
    RIGHT = "right"
    POLYGON = "polygon"
    DISK = "disk"


# Default parameters per builtin; spec strings override them key by key
BUILTIN_DEFAULTS: dict[BuiltinMap, dict[str, float]] = {
    BuiltinMap.IDENTITY: {},
    BuiltinMap.AFFINE: {"a11": 2.0, "a12": 0.0, "a21": 0.0, "a22": 0.5, "b1": 0.0, "b2": 0.0},
    BuiltinMap.SHEAR_SINE: {"a": 0.1, "k": 1.0},
    BuiltinMap.POLAR_TWIST: {"tau": 1.0},
    BuiltinMap.FOLD_CANDIDATE: {"s": 1.2},
}

# Valid output formats for tabular exports
OutputFormat = Literal["parquet", "csv"]
VALID_OUTPUT_FORMATS: tuple[OutputFormat, ...] = ("parquet", "csv")

# Default settings
DEFAULT_MAP = "shear_sine"
DEFAULT_DOMAIN = "unit_square"
DEFAULT_EPS = 0.1
DEFAULT_P = 2.0
DEFAULT_R0 = 1.0 / 8.0
DEFAULT_QUAD_N = 16
DEFAULT_MAX_HALVINGS = 6
DEFAULT_MAX_DEPTH = 8
DEFAULT_PAIRS = 100_000
DEFAULT_SEED = 0
DEFAULT_OUTPUT_FORMAT: OutputFormat = "parquet"
DEFAULT_CONCURRENCY = 4
DEFAULT_METRIC_QUAD_N = 3
DEFAULT_LINF_SAMPLES = 3

# Numerics
DEFAULT_SNAP_EXPONENT = 40
DEFAULT_FD_STEP = 1e-6  # relative to the domain diameter
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
CROSS_SCAN_SAMPLES = 1001
BISECTION_TOL = 1e-10
UNTANGLE_MAX_SWEEPS = 10_000
RING_MAX_INNER = 16

# Extension constant ceiling
C3 = 636_000
C1 = 72**4 * C3


def split_spec(spec: str) -> tuple[str, dict[str, str]]:
    """Split ``name:key=value,key=value`` into the name and its raw parameters.

    Parameters
    ----------
    spec : str
        Spec string, e.g. ``"shear_sine:a=0.1,k=1"``.

    Returns
    -------
    tuple[str, dict[str, str]]
        Name and raw parameter values.

    Raises
    ------
    ValueError
        If a parameter is not of the form ``key=value``.

    """
    name, _, rest = spec.strip().partition(":")
    params: dict[str, str] = {}
    if rest:
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"Invalid parameter '{item}' in '{spec}'. Must be key=value")
            params[key.strip()] = value.strip()
    return name.strip(), params


def validate_builtin(name: str) -> BuiltinMap:
    """Validate and return a builtin map name.

    Raises
    ------
    ValueError
        If name is not a builtin.

    """
    valid = [m.value for m in BuiltinMap]
    if name not in valid:
        raise ValueError(f"Invalid map '{name}'. Must be one of: {', '.join(valid)}, file")
    return BuiltinMap(name)


def validate_eps(eps: float) -> float:
    """Validate and return the target accuracy.

    Raises
    ------
    ValueError
        If eps is not a positive finite number.

    """
    if not (math.isfinite(eps) and eps > 0):
        raise ValueError(f"Invalid eps {eps}. Must be positive")
    return eps


def validate_p(p: float) -> float:
    """Validate and return the Sobolev exponent.

    Raises
    ------
    ValueError
        If p is not in [1, inf).

    """
    if not (math.isfinite(p) and p >= 1):
        raise ValueError(f"Invalid p {p}. Must be a finite number >= 1")
    return p


def validate_r(r: float) -> float:
    """Validate and return a tile side length.

    Raises
    ------
    ValueError
        If r is not a positive finite number.

    """
    if not (math.isfinite(r) and r > 0):
        raise ValueError(f"Invalid r {r}. Must be positive")
    return r


def validate_output_format(format: str) -> OutputFormat:
    """Validate and return output format.

    Parameters
    ----------
    format : str
        Output format to validate.

    Returns
    -------
    OutputFormat
        Validated output format.

    Raises
    ------
    ValueError
        If format is not valid.

    """
    if format not in VALID_OUTPUT_FORMATS:
        raise ValueError(
            f"Invalid format '{format}'. Must be one of: {', '.join(VALID_OUTPUT_FORMATS)}"
        )
    return format  # type: ignore[return-value]


def _validate_positive_int(name: str, value: int, minimum: int = 1) -> None:
    if value < minimum:
        raise ValueError(f"Invalid {name} {value}. Must be >= {minimum}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run depends on.

    Map and domain are given as spec strings (``shear_sine:a=0.1,k=1``,
    ``rect:0,0,2,1``); see :func:`pa_homeo_approx.maps.map_from_spec` and
    :func:`pa_homeo_approx.geometry.domain_from_spec`.
    """

    map_spec: str = DEFAULT_MAP
    domain_spec: str = DEFAULT_DOMAIN
    eps_target: float = DEFAULT_EPS
    p: float = DEFAULT_P
    r0: float = DEFAULT_R0
    max_halvings: int = DEFAULT_MAX_HALVINGS
    quad_n: int = DEFAULT_QUAD_N
    max_depth: int = DEFAULT_MAX_DEPTH
    pairs: int = DEFAULT_PAIRS
    seed: int = DEFAULT_SEED
    out_dir: Path | None = None
    svg: bool = False
    naive: bool = False
    output_format: OutputFormat = DEFAULT_OUTPUT_FORMAT
    concurrency: int = DEFAULT_CONCURRENCY
    adaptive_rho: bool = True
    outside_constant: float | None = None
    metric_quad_n: int = DEFAULT_METRIC_QUAD_N
    linf_samples: int = DEFAULT_LINF_SAMPLES
    timings: bool = False

    def __post_init__(self) -> None:
        validate_eps(self.eps_target)
        validate_p(self.p)
        validate_r(self.r0)
        validate_output_format(self.output_format)
        _validate_positive_int("max_halvings", self.max_halvings, minimum=0)
        _validate_positive_int("quad_n", self.quad_n, minimum=2)
        _validate_positive_int("max_depth", self.max_depth, minimum=0)
        _validate_positive_int("pairs", self.pairs)
        _validate_positive_int("concurrency", self.concurrency)
        _validate_positive_int("metric_quad_n", self.metric_quad_n)
        _validate_positive_int("linf_samples", self.linf_samples)
        if self.outside_constant is not None and not self.outside_constant >= 1:
            raise ValueError(f"Invalid outside constant {self.outside_constant}. Must be >= 1")

    def echo(self) -> dict[str, str]:
        """Flat string view for report headers."""
        return {
            "map": self.map_spec,
            "domain": self.domain_spec,
            "eps_target": repr(self.eps_target),
            "p": repr(self.p),
            "r0": repr(self.r0),
            "max_halvings": str(self.max_halvings),
            "quad_n": str(self.quad_n),
            "max_depth": str(self.max_depth),
            "pairs": str(self.pairs),
            "seed": str(self.seed),
            "naive": str(self.naive).lower(),
            "adaptive_rho": str(self.adaptive_rho).lower(),
            "outside_constant": (
                "none" if self.outside_constant is None else repr(self.outside_constant)
            ),
            "metric_quad_n": str(self.metric_quad_n),
            "linf_samples": str(self.linf_samples),
        }
