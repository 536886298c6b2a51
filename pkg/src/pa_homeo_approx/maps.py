"""Input maps: the oracle interface and the built-in bi-Lipschitz test maps."""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from pa_homeo_approx.config import (
    BUILTIN_DEFAULTS,
    DEFAULT_FD_STEP,
    NEWTON_MAX_ITER,
    NEWTON_TOL,
    BuiltinMap,
    split_spec,
    validate_builtin,
)
from pa_homeo_approx.exceptions import DomainError, InversionError
from pa_homeo_approx.geometry import (
    Domain,
    FloatArray,
    Point2,
    RightPolygon,
    distortion,
    rect_domain,
    singular_values,
)

if TYPE_CHECKING:
    from numpy.typing import NDArray

logger = logging.getLogger(__name__)

_SEED_GRID = 64
_CENTER = Point2(0.5, 0.5)


def _as_points(z: ArrayLike) -> tuple[FloatArray, bool]:
    arr = np.asarray(z, dtype=float)
    single = arr.ndim == 1
    return arr.reshape(-1, 2), single


def _shear_constant(s: float) -> float:
    """Largest distortion of the shear ``[[1, s], [0, 1]]`` and its inverse."""
    return (abs(s) + math.sqrt(s * s + 4.0)) / 2.0


def _rotation(theta: FloatArray) -> FloatArray:
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)


class MapOracle(ABC):
    """A bi-Lipschitz orientation-preserving map ``u`` on a domain, with derivative and inverse.

    ``eval``, ``diff`` and ``invert`` accept a single point ``(2,)`` or a batch
    ``(n, 2)`` and return matching shapes.
    """

    name: str = "map"

    def __init__(self, domain: Domain, L: float):  # noqa: N803
        if not L >= 1:
            raise ValueError(f"Invalid constant L={L}. Must be >= 1")
        self.domain = domain
        self.L = float(L)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, L={self.L:.6g})"

    @property
    def params(self) -> dict[str, float]:
        return {}

    # -- evaluation -----------------------------------------------------------

    @abstractmethod
    def _eval(self, p: FloatArray) -> FloatArray: ...

    def _diff(self, p: FloatArray) -> FloatArray:
        return self.fd_diff(p, check=False)

    def _solve(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        return self.newton_invert(w)

    def _invert(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        z, converged = self._solve(w)
        return z, converged & self._inside(z)

    def _inside(self, z: FloatArray) -> NDArray[np.bool_]:
        return self.domain.contains(z, tol=1e-9 * self.domain.diameter)

    def _check(self, p: FloatArray, what: str) -> None:
        inside = self.domain.contains(p, tol=1e-9 * self.domain.diameter)
        if not np.all(inside):
            raise DomainError(what, int(np.count_nonzero(~inside)))

    def eval(self, z: ArrayLike, check: bool = True) -> FloatArray:
        """Image ``u(z)``.

        Raises
        ------
        DomainError
            If ``check`` and some point lies outside the closed domain.

        """
        p, single = _as_points(z)
        if check:
            self._check(p, "point(s)")
        out = self._eval(p)
        return out[0] if single else out

    def diff(self, z: ArrayLike, check: bool = True) -> FloatArray:
        """Jacobian ``Du(z)`` of shape ``(2, 2)`` or ``(n, 2, 2)``."""
        p, single = _as_points(z)
        if check:
            self._check(p, "point(s)")
        out = self._diff(p)
        return out[0] if single else out

    def invert(self, w: ArrayLike) -> FloatArray:
        """Preimage ``u^-1(w)``.

        Raises
        ------
        InversionError
            If some point cannot be inverted inside the domain.

        """
        q, single = _as_points(w)
        out, ok = self._invert(q)
        if not np.all(ok):
            residual = np.hypot(*(self._eval(out[~ok]) - q[~ok]).T)
            raise InversionError(int(np.count_nonzero(~ok)), float(residual.max()))
        return out[0] if single else out

    def try_invert(self, w: ArrayLike) -> tuple[FloatArray, NDArray[np.bool_]]:
        """Preimages of a batch with a mask of the points that were inverted inside the domain."""
        q, _ = _as_points(w)
        return self._invert(q)

    def invert_extended(self, w: ArrayLike) -> FloatArray:
        """Preimages under the extension of ``u`` past the domain boundary.

        Image points of a mesh with curved-boundary data can fall just outside
        ``u(domain)``; their preimages then lie just outside the domain.

        Raises
        ------
        InversionError
            If some point cannot be inverted at all.

        """
        q, single = _as_points(w)
        out, converged = self._solve(q)
        if not np.all(converged):
            residual = np.hypot(*(self._eval(out[~converged]) - q[~converged]).T)
            raise InversionError(int(np.count_nonzero(~converged)), float(residual.max()))
        return out[0] if single else out

    def fd_diff(self, z: ArrayLike, check: bool = True) -> FloatArray:
        """Central-difference Jacobian with step ``1e-6`` of the domain diameter."""
        p, single = _as_points(z)
        h = DEFAULT_FD_STEP * self.domain.diameter
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        if check:
            self._check(np.vstack([p + ex, p - ex, p + ey, p - ey]), "stencil point(s)")
        dx = (self._eval(p + ex) - self._eval(p - ex)) / (2 * h)
        dy = (self._eval(p + ey) - self._eval(p - ey)) / (2 * h)
        out = np.stack([dx, dy], axis=-1)
        return out[0] if single else out

    # -- inversion ------------------------------------------------------------

    @cached_property
    def _seed_table(self) -> tuple[FloatArray, FloatArray]:
        x0, y0, x1, y1 = self.domain.bbox
        gx, gy = np.meshgrid(
            np.linspace(x0, x1, _SEED_GRID), np.linspace(y0, y1, _SEED_GRID), indexing="xy"
        )
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        pts = pts[self.domain.contains(pts, tol=1e-9 * self.domain.diameter)]
        return pts, self._eval(pts)

    def _seeds(self, w: FloatArray) -> FloatArray:
        pts, images = self._seed_table
        out = np.empty_like(w)
        for k in range(0, len(w), 256):
            chunk = w[k : k + 256]
            d = ((chunk[:, None, :] - images[None]) ** 2).sum(axis=2)
            out[k : k + 256] = pts[np.argmin(d, axis=1)]
        return out

    def newton_invert(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        """Damped Newton seeded from a coarse image grid; returns points and a convergence mask."""
        z = self._seeds(w)
        res = self._eval(z) - w
        norm = np.hypot(res[:, 0], res[:, 1])
        tol = NEWTON_TOL * max(1.0, float(np.abs(w).max(initial=0.0)))
        for _ in range(NEWTON_MAX_ITER):
            active = norm > tol
            if not np.any(active):
                break
            za, ra = z[active], res[active]
            jac = self._diff(za)
            step = np.linalg.solve(jac, ra[..., None])[..., 0]
            lam = np.ones(len(za))
            best = norm[active].copy()
            new_z = za.copy()
            for _ in range(20):
                trial = za - lam[:, None] * step
                trial_norm = np.hypot(*(self._eval(trial) - w[active]).T)
                ok = trial_norm < best
                new_z[ok] = trial[ok]
                best[ok] = trial_norm[ok]
                lam = np.where(ok, 0.0, lam / 2.0)
                if not np.any(lam > 0):
                    break
            z[active] = new_z
            res[active] = self._eval(new_z) - w[active]
            norm[active] = np.hypot(res[active, 0], res[active, 1])
        ok = norm <= tol
        if not np.all(ok):
            logger.debug(
                "Newton inversion did not converge for %d of %d points",
                np.count_nonzero(~ok),
                len(w),
            )
        return z, ok


class IdentityMap(MapOracle):
    """``u(z) = z``."""

    name = BuiltinMap.IDENTITY.value

    def __init__(self, domain: Domain):
        super().__init__(domain, 1.0)

    def _eval(self, p: FloatArray) -> FloatArray:
        return p.copy()

    def _diff(self, p: FloatArray) -> FloatArray:
        return np.broadcast_to(np.eye(2), (len(p), 2, 2)).copy()

    def _solve(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        return w.copy(), np.ones(len(w), dtype=bool)


class AffineMap(MapOracle):
    """``u(z) = M z + b`` with ``det M > 0``."""

    name = BuiltinMap.AFFINE.value

    def __init__(self, domain: Domain, matrix: ArrayLike, offset: ArrayLike = (0.0, 0.0)):
        m = np.asarray(matrix, dtype=float).reshape(2, 2)
        if not np.linalg.det(m) > 0:
            raise ValueError("Invalid affine map. Matrix must have positive determinant")
        self.matrix = m
        self.offset = np.asarray(offset, dtype=float).reshape(2)
        self._inverse = np.linalg.inv(m)
        super().__init__(domain, float(distortion(m)))

    @property
    def params(self) -> dict[str, float]:
        (a11, a12), (a21, a22) = self.matrix
        b1, b2 = self.offset
        return {"a11": a11, "a12": a12, "a21": a21, "a22": a22, "b1": b1, "b2": b2}

    def _eval(self, p: FloatArray) -> FloatArray:
        return np.asarray(p @ self.matrix.T + self.offset)

    def _diff(self, p: FloatArray) -> FloatArray:
        return np.broadcast_to(self.matrix, (len(p), 2, 2)).copy()

    def _solve(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        z = np.asarray((w - self.offset) @ self._inverse.T)
        return z, np.ones(len(w), dtype=bool)


class ShearSineMap(MapOracle):
    """Horizontal sinusoidal shear ``(x + a sin(2 pi k y), y)``."""

    name = BuiltinMap.SHEAR_SINE.value

    def __init__(self, domain: Domain, a: float = 0.1, k: float = 1.0):
        self.a = float(a)
        self.k = float(k)
        super().__init__(domain, _shear_constant(2.0 * math.pi * self.k * self.a))

    @property
    def params(self) -> dict[str, float]:
        return {"a": self.a, "k": self.k}

    def _eval(self, p: FloatArray) -> FloatArray:
        x = p[:, 0] + self.a * np.sin(2.0 * math.pi * self.k * p[:, 1])
        return np.column_stack([x, p[:, 1]])

    def _diff(self, p: FloatArray) -> FloatArray:
        out = np.zeros((len(p), 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        out[:, 0, 1] = 2.0 * math.pi * self.k * self.a * np.cos(2.0 * math.pi * self.k * p[:, 1])
        return out

    def _solve(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        z = np.column_stack([w[:, 0] - self.a * np.sin(2.0 * math.pi * self.k * w[:, 1]), w[:, 1]])
        return z, np.ones(len(w), dtype=bool)


class _RadialRotationMap(MapOracle):
    """Rotation about ``center`` by an angle depending only on the radius."""

    def __init__(self, domain: Domain, center: Point2, L: float):  # noqa: N803
        self.center = np.asarray(center, dtype=float)
        super().__init__(domain, L)

    @abstractmethod
    def angle(self, rho: FloatArray) -> FloatArray: ...

    @abstractmethod
    def angle_slope(self, rho: FloatArray) -> FloatArray: ...

    def _eval(self, p: FloatArray) -> FloatArray:
        d = p - self.center
        rho = np.hypot(d[:, 0], d[:, 1])
        rot = _rotation(self.angle(rho))
        return np.asarray(self.center + np.einsum("nij,nj->ni", rot, d))

    def _diff(self, p: FloatArray) -> FloatArray:
        d = p - self.center
        rho = np.hypot(d[:, 0], d[:, 1])
        rot = _rotation(self.angle(rho))
        rd = np.einsum("nij,nj->ni", rot, d)
        turned = np.column_stack([-rd[:, 1], rd[:, 0]])
        safe = np.where(rho > 0, rho, 1.0)
        grad = np.where(rho[:, None] > 0, d / safe[:, None], 0.0) * self.angle_slope(rho)[:, None]
        return np.asarray(rot + turned[:, :, None] * grad[:, None, :])

    def _solve(self, w: FloatArray) -> tuple[FloatArray, NDArray[np.bool_]]:
        d = w - self.center
        rho = np.hypot(d[:, 0], d[:, 1])
        rot = _rotation(-self.angle(rho))
        z = np.asarray(self.center + np.einsum("nij,nj->ni", rot, d))
        return z, np.ones(len(w), dtype=bool)


def _max_radius(domain: Domain, center: FloatArray) -> float:
    x0, y0, x1, y1 = domain.bbox
    corners = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]) - center
    return float(np.hypot(corners[:, 0], corners[:, 1]).max())


class PolarTwistMap(_RadialRotationMap):
    """Rotation about ``(0.5, 0.5)`` by ``tau`` times the radius."""

    name = BuiltinMap.POLAR_TWIST.value

    def __init__(self, domain: Domain, tau: float = 1.0, center: Point2 = _CENTER):
        self.tau = float(tau)
        s = abs(self.tau) * _max_radius(domain, np.asarray(center, dtype=float))
        super().__init__(domain, center, _shear_constant(s))

    @property
    def params(self) -> dict[str, float]:
        return {"tau": self.tau}

    def angle(self, rho: FloatArray) -> FloatArray:
        return self.tau * rho

    def angle_slope(self, rho: FloatArray) -> FloatArray:
        return np.full_like(rho, self.tau)


class FoldCandidateMap(_RadialRotationMap):
    """Rotation about ``(0.5, 0.5)`` by ``s`` times a smoothstep ramp across a thin annulus.

    Inside the inner radius nothing moves; outside the outer radius the plane
    turns rigidly by ``s`` radians. The map is bi-Lipschitz with unit Jacobian
    determinant, yet its naive interpolation on the quarter grid turns the
    triangle ``(0.5, 0.5), (0.75, 0.75), (0.5, 0.75)`` inside out.
    """

    name = BuiltinMap.FOLD_CANDIDATE.value
    inner = 0.25
    outer = 0.36

    def __init__(self, domain: Domain, s: float = 1.2, center: Point2 = _CENTER):
        self.s = float(s)
        rho = np.linspace(self.inner, self.outer, 20001)
        shear = float(np.max(np.abs(rho * self._ramp_slope(rho)))) * abs(self.s)
        super().__init__(domain, center, _shear_constant(shear) * (1.0 + 1e-9))

    @property
    def params(self) -> dict[str, float]:
        return {"s": self.s}

    def _t(self, rho: FloatArray) -> FloatArray:
        return np.clip((rho - self.inner) / (self.outer - self.inner), 0.0, 1.0)

    def _ramp_slope(self, rho: FloatArray) -> FloatArray:
        t = self._t(rho)
        return 6.0 * t * (1.0 - t) / (self.outer - self.inner)

    def angle(self, rho: FloatArray) -> FloatArray:
        t = self._t(rho)
        return self.s * t * t * (3.0 - 2.0 * t)

    def angle_slope(self, rho: FloatArray) -> FloatArray:
        return self.s * self._ramp_slope(rho)


class SampledMap(MapOracle):
    """Bilinear interpolation of map samples on a regular grid."""

    name = "sampled"

    def __init__(self, xs: ArrayLike, ys: ArrayLike, values: ArrayLike, L: float):  # noqa: N803
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (len(self.ys), len(self.xs), 2):
            raise ValueError(
                f"Invalid samples of shape {self.values.shape}. "
                f"Must be ({len(self.ys)}, {len(self.xs)}, 2)"
            )
        if len(self.xs) < 2 or len(self.ys) < 2:
            raise ValueError("Invalid sample grid. Must have at least 2 rows and 2 columns")
        domain = rect_domain(self.xs[0], self.ys[0], self.xs[-1], self.ys[-1], "sampled grid")
        super().__init__(domain, L)

    @classmethod
    def from_file(cls, path: Path | str) -> SampledMap:
        """Load a SAMPLEDMAP file."""
        from pa_homeo_approx.formats import read_sampled_map

        xs, ys, values, L = read_sampled_map(Path(path))  # noqa: N806
        return cls(xs, ys, values, L)

    def _locate(
        self, p: FloatArray
    ) -> tuple[NDArray[np.int64], NDArray[np.int64], FloatArray, FloatArray]:
        i = np.clip(np.searchsorted(self.xs, p[:, 0], side="right") - 1, 0, len(self.xs) - 2)
        j = np.clip(np.searchsorted(self.ys, p[:, 1], side="right") - 1, 0, len(self.ys) - 2)
        hx = self.xs[i + 1] - self.xs[i]
        hy = self.ys[j + 1] - self.ys[j]
        return i, j, (p[:, 0] - self.xs[i]) / hx, (p[:, 1] - self.ys[j]) / hy

    def _eval(self, p: FloatArray) -> FloatArray:
        i, j, tx, ty = self._locate(p)
        v = self.values
        tx, ty = tx[:, None], ty[:, None]
        return np.asarray(
            (1 - tx) * (1 - ty) * v[j, i]
            + tx * (1 - ty) * v[j, i + 1]
            + (1 - tx) * ty * v[j + 1, i]
            + tx * ty * v[j + 1, i + 1]
        )

    def _diff(self, p: FloatArray) -> FloatArray:
        i, j, tx, ty = self._locate(p)
        v = self.values
        hx = (self.xs[i + 1] - self.xs[i])[:, None]
        hy = (self.ys[j + 1] - self.ys[j])[:, None]
        tx, ty = tx[:, None], ty[:, None]
        ddx = ((1 - ty) * (v[j, i + 1] - v[j, i]) + ty * (v[j + 1, i + 1] - v[j + 1, i])) / hx
        ddy = ((1 - tx) * (v[j + 1, i] - v[j, i]) + tx * (v[j + 1, i + 1] - v[j, i + 1])) / hy
        return np.stack([ddx, ddy], axis=-1)


def make_builtin(
    name: str | BuiltinMap, domain: Domain | None = None, **params: float
) -> MapOracle:
    """Instantiate a builtin map with defaults overridden by ``params``.

    Raises
    ------
    ValueError
        If the name or a parameter is unknown.

    """
    builtin = validate_builtin(name.value if isinstance(name, BuiltinMap) else name)
    dom = domain if domain is not None else RightPolygon.rectangle(0.0, 0.0, 1, 1, 1.0)
    merged = dict(BUILTIN_DEFAULTS[builtin])
    unknown = set(params) - set(merged)
    if unknown:
        raise ValueError(
            f"Invalid parameter(s) {', '.join(sorted(unknown))} for '{builtin.value}'. "
            f"Must be one of: {', '.join(merged) or 'none'}"
        )
    merged.update(params)
    if builtin is BuiltinMap.IDENTITY:
        return IdentityMap(dom)
    if builtin is BuiltinMap.AFFINE:
        return AffineMap(
            dom,
            [[merged["a11"], merged["a12"]], [merged["a21"], merged["a22"]]],
            [merged["b1"], merged["b2"]],
        )
    if builtin is BuiltinMap.SHEAR_SINE:
        return ShearSineMap(dom, merged["a"], merged["k"])
    if builtin is BuiltinMap.POLAR_TWIST:
        return PolarTwistMap(dom, merged["tau"])
    return FoldCandidateMap(dom, merged["s"])


def map_from_spec(spec: str, domain: Domain | None = None) -> MapOracle:
    """Build a map from ``name:key=value,...`` or ``file:<path>``.

    Raises
    ------
    ValueError
        If the spec cannot be parsed.

    """
    if spec.startswith("file:"):
        return SampledMap.from_file(spec[len("file:") :])
    name, raw = split_spec(spec)
    try:
        params = {k: float(v) for k, v in raw.items()}
    except ValueError:
        raise ValueError(f"Invalid map '{spec}'. Parameter values must be numbers") from None
    return make_builtin(name, domain, **params)


def estimate_L(o: MapOracle, samples: int, seed: int = 0) -> float:  # noqa: N802
    """Largest observed bi-Lipschitz ratio over random points and their Jacobians.

    Parameters
    ----------
    o : MapOracle
        Map to measure.
    samples : int
        Number of random points (at least 2); consecutive points form the pairs.
    seed : int
        Seed of the point sampler.

    Returns
    -------
    float
        ``max(|Du|, |Du^-1|, |du|/|dz|, |dz|/|du|)`` over the samples.

    """
    if samples < 2:
        raise ValueError(f"Invalid samples {samples}. Must be >= 2")
    pts = sample_domain(o.domain, samples, seed)
    worst = float(distortion(o.diff(pts)).max())
    images = o.eval(pts)
    dz = np.hypot(*(pts[1:] - pts[:-1]).T)
    du = np.hypot(*(images[1:] - images[:-1]).T)
    keep = dz > 0
    if np.any(keep):
        ratio = du[keep] / dz[keep]
        worst = max(worst, float(ratio.max()), float((1.0 / ratio).max()))
    if worst > o.L * (1.0 + 1e-9):
        logger.warning("Declared L=%.6g of %s is below observed %.6g", o.L, o.name, worst)
    return worst


def sample_domain(domain: Domain, n: int, seed: int = 0) -> FloatArray:
    """``n`` uniform random points of the domain closure (rejection from its bbox)."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = domain.bbox
    out: list[FloatArray] = []
    have = 0
    while have < n:
        batch = rng.uniform((x0, y0), (x1, y1), size=(max(2 * (n - have), 64), 2))
        batch = batch[domain.contains(batch)]
        out.append(batch)
        have += len(batch)
    return np.vstack(out)[:n]


def builtin_catalogue() -> pd.DataFrame:
    """Table of the builtin maps on the unit square with their default parameters and constants."""
    rows = []
    for builtin in BuiltinMap:
        oracle = make_builtin(builtin)
        params = ",".join(f"{k}={v:g}" for k, v in BUILTIN_DEFAULTS[builtin].items())
        smax, smin = singular_values(oracle.diff(np.array([0.5, 0.5])))
        rows.append(
            {
                "name": builtin.value,
                "params": params or "-",
                "L": oracle.L,
                "sigma_max_center": float(smax),
                "sigma_min_center": float(smin),
            }
        )
    return pd.DataFrame(rows)
