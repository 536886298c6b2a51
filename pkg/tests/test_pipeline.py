"""Tests for pipeline module."""

from pathlib import Path

import numpy as np
import pytest

from pa_homeo_approx import approximate
from pa_homeo_approx.config import PipelineConfig
from pa_homeo_approx.exceptions import ClassificationError, ValidationError
from pa_homeo_approx.formats import read_pamesh, read_report
from pa_homeo_approx.geometry import domain_from_spec
from pa_homeo_approx.maps import FoldCandidateMap, IdentityMap, ShearSineMap
from pa_homeo_approx.metrics import PAMap, linf_error, pa_eval, pa_invert, w1p_error
from pa_homeo_approx.pipeline import (
    choose_classification,
    glue,
    internal_eps,
    naive_interpolation,
    run,
    total_error_bound,
)

UNIT = domain_from_spec("unit_square")


def _small(**overrides: object) -> PipelineConfig:
    values: dict[str, object] = {
        "map_spec": "identity",
        "eps_target": 0.5,
        "r0": 0.125,
        "max_halvings": 0,
        "quad_n": 2,
        "pairs": 200,
        "concurrency": 1,
        "outside_constant": 1.0,
        "metric_quad_n": 2,
        "linf_samples": 3,
    }
    values.update(overrides)
    return PipelineConfig(**values)  # type: ignore[arg-type]


class TestInternalEps:
    """Tests for the internal accuracy."""

    def test_bound_met(self) -> None:
        """Test that the chosen accuracy keeps the total within the target."""
        eps = internal_eps(0.1, 2.0, 1.5, outside=3.0)
        assert total_error_bound(eps, 2.0, 1.5, 3.0) <= 0.1
        assert total_error_bound(eps * 1.001, 2.0, 1.5, 3.0) > 0.1

    def test_default_outside_constant(self) -> None:
        """Test that the ceiling constant gives a much smaller accuracy."""
        tight = internal_eps(0.1, 2.0, 1.5)
        assert 0.0 < tight < internal_eps(0.1, 2.0, 1.5, outside=3.0)

    def test_bound_increasing(self) -> None:
        """Test that the guaranteed total grows with eps."""
        values = [total_error_bound(e, 1.0, 2.0, 5.0) for e in (1e-6, 1e-4, 1e-2)]
        assert values == sorted(values)


class TestGlue:
    """Tests for glue."""

    def test_shared_vertices_merge(self) -> None:
        """Test that two squares sharing a side merge their common vertices."""
        tris = [[0, 1, 2], [0, 2, 3]]
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        shifted = square + [1.0, 0.0]
        left = PAMap.from_arrays(square, tris, square)
        right = PAMap.from_arrays(shifted, tris, shifted)
        mesh, part = glue([left, right])
        assert len(mesh.vertices) == 6
        assert mesh.n_triangles == 4
        assert part.tolist() == [0, 0, 1, 1]
        np.testing.assert_array_equal(mesh.vertices[:4], left.vertices)
        np.testing.assert_array_equal(mesh.images, mesh.vertices)
        assert (mesh.domain_areas() > 0).all()

    def test_disagreeing_images_rejected(self) -> None:
        """Test error when two parts map a shared vertex to different points."""
        tris = [[0, 1, 2], [0, 2, 3]]
        square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        shifted = square + [1.0, 0.0]
        left = PAMap.from_arrays(square, tris, square)
        right = PAMap.from_arrays(shifted, tris, np.vstack([[9.0, 9.0], shifted[1:]]))
        with pytest.raises(ValidationError, match=r"disagree at vertex \(1\.0, 0\.0\)"):
            glue([left, right])

    def test_nothing_to_glue(self) -> None:
        """Test error for an empty part list."""
        with pytest.raises(ValueError, match="Nothing to glue"):
            glue([])


class TestNaive:
    """Tests for the unclassified interpolation."""

    def test_fold_candidate_flips(self) -> None:
        """Test that the fold candidate at r = 1/4 has flipped triangles."""
        mesh = naive_interpolation(FoldCandidateMap(UNIT, 1.2), 0.25)
        assert mesh.n_triangles == 32
        assert (mesh.image_areas() <= 0).any()

    def test_identity_has_none(self) -> None:
        """Test that the identity interpolates without flips."""
        mesh = naive_interpolation(IdentityMap(UNIT), 0.125)
        assert mesh.n_triangles == 128
        assert (mesh.image_areas() > 0).all()

    def test_side_too_large(self) -> None:
        """Test error when no cell fits."""
        with pytest.raises(ClassificationError, match="No square of side"):
            naive_interpolation(IdentityMap(UNIT), 2.0)

    def test_errors_shrink_with_r(self) -> None:
        """Test that halving r never increases the forward errors."""
        o = ShearSineMap(UNIT, 0.1, 1.0)
        meshes = [naive_interpolation(o, 0.125 / 2**k) for k in range(4)]
        linf = [linf_error(o, m, 3) for m in meshes]
        w1p = [w1p_error(o, m, 2.0, 2) for m in meshes]
        for errors in (linf, w1p):
            assert all(b <= a + 1e-9 for a, b in zip(errors[:-1], errors[1:]))
        assert linf[-1] < linf[0]


class TestChooseClassification:
    """Tests for the halving rule."""

    def test_halves_until_cells_fit(self) -> None:
        """Test that a side without eligible cells is halved."""
        cfg = _small(r0=0.25, max_halvings=1)
        cls, eta = choose_classification(IdentityMap(UNIT), cfg, 0.01)
        assert cls.r == 0.125
        assert cls.accepted.all()
        assert eta > 0

    def test_stops_without_gain(self) -> None:
        """Test that halving stops when it adds no accepted area."""
        messages: list[str] = []
        cfg = _small(r0=0.125, max_halvings=3)
        cls, _ = choose_classification(ShearSineMap(UNIT), cfg, 1e-12, messages.append)
        assert cls.r == 0.125
        assert cls.omega_eps is None
        assert messages == ["classifying r=0.125", "classifying r=0.0625"]


class TestRun:
    """Tests for full runs."""

    def test_identity_run(self) -> None:
        """Test that the identity is approximated exactly."""
        ra = run(_small())
        report = ra.report
        assert report.passed
        assert ra.exit_code == 0
        assert report.injective
        assert report.grid_injective
        assert report.linf_map == pytest.approx(0.0, abs=1e-12)
        assert report.w1p_map == pytest.approx(0.0, abs=1e-9)
        assert report.bilip_v == pytest.approx(1.0, rel=1e-6)
        assert report.area_deficit == pytest.approx(0.75)
        assert int(ra.eps_mask.sum()) == 32
        assert len(ra.extensions) == 48
        assert not ra.errors
        assert float(np.abs(ra.mesh.domain_areas()).sum()) == pytest.approx(1.0)
        assert set(ra.square_id[ra.eps_mask].tolist()) == set(range(16))

    def test_shear_sine_outside_only(self) -> None:
        """Test a run where every square is extended."""
        progress: list[str] = []
        ra = run(_small(map_spec="shear_sine", r0=0.25, eps_target=1.0), progress.append)
        report = ra.report
        assert ra.eps_mesh is None
        assert not ra.eps_mask.any()
        assert report.injective
        assert report.orientation_ok
        assert report.grid_injective
        assert not report.errors
        assert report.w1p_map_eps == 0.0
        assert report.n_triangles == ra.mesh.n_triangles
        assert 0.0 < report.linf_map < 0.6
        assert 0.0 < report.linf_inv < 0.6
        assert float(np.abs(ra.mesh.domain_areas()).sum()) == pytest.approx(1.0)
        assert progress[-1] == "measuring"

    def test_mesh_inverse_round_trip(self) -> None:
        """Test that the glued mesh inverts its own images."""
        ra = run(_small(map_spec="shear_sine", r0=0.25, eps_target=1.0))
        grid = np.linspace(0.03, 0.97, 25)
        pts = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
        w = pa_eval(ra.mesh, pts)
        np.testing.assert_allclose(pa_invert(ra.mesh, w), pts, atol=1e-9)
        np.testing.assert_allclose(pa_eval(ra.mesh, pa_invert(ra.mesh, w)), w, atol=1e-9)

    def test_default_outside_constant_run(self) -> None:
        """Test a run with the extension constant ceiling."""
        ra = run(_small(outside_constant=None))
        report = ra.report
        ceiling = internal_eps(0.5, report.p, report.L)
        assert report.eps_internal == pytest.approx(ceiling)
        assert report.eps_internal < internal_eps(0.5, report.p, report.L, outside=1.0)
        assert report.eta > 0
        assert report.passed
        assert int(ra.eps_mask.sum()) == 32

    def test_outputs(self, tmp_path: Path) -> None:
        """Test the files written for a run directory."""
        out = tmp_path / "run"
        ra = approximate(
            "identity",
            eps=0.5,
            r0=0.125,
            max_halvings=0,
            quad_n=2,
            pairs=100,
            concurrency=2,
            outside_constant=1.0,
            out_dir=out,
            svg=True,
            naive=True,
            format="csv",
            timings=True,
        )
        for name in (
            "mesh.pamesh",
            "report.txt",
            "classification.txt",
            "grid.txt",
            "triangles.csv",
            "figure.svg",
            "naive.pamesh",
            "naive.svg",
        ):
            assert (out / name).exists(), name
        assert read_pamesh(out / "mesh.pamesh").n_triangles == ra.mesh.n_triangles
        sections = read_report(out / "report.txt")
        assert sections["report"]["passed"] == "true"
        assert sections["config"]["map"] == "identity"
        assert set(sections["timings"]) == {"classify", "grid", "extend", "measure"}

    def test_affine_exact_inside(self) -> None:
        """Test that an affine map is reproduced exactly on the accepted region."""
        ra = run(_small(map_spec="affine"))
        report = ra.report
        grid = np.linspace(0.26, 0.74, 100)
        pts = np.stack(np.meshgrid(grid, grid), axis=-1).reshape(-1, 2)
        np.testing.assert_allclose(pa_eval(ra.mesh, pts), ra.oracle.eval(pts), atol=1e-12)
        assert report.linf_map_eps <= 1e-10
        assert report.linf_inv_eps <= 1e-10
        assert report.w1p_map_eps <= 1e-10
        assert report.w1p_inv_eps <= 1e-10

    def test_outputs_deterministic(self, tmp_path: Path) -> None:
        """Test that identical runs write identical mesh and report files."""
        for name in ("a", "b"):
            approximate(
                "shear_sine",
                eps=1.0,
                r0=0.25,
                max_halvings=0,
                quad_n=2,
                pairs=100,
                concurrency=2,
                outside_constant=1.0,
                out_dir=tmp_path / name,
                format="csv",
            )
        for name in ("mesh.pamesh", "report.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
