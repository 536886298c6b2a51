"""Tests for formats module."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from pa_homeo_approx.exceptions import MeshFormatError
from pa_homeo_approx.formats import (
    format_key_values,
    get_output_path,
    read_pamesh,
    read_report,
    read_sampled_map,
    save_dataframe,
    write_classification,
    write_pamesh,
    write_report,
    write_sampled_map,
)
from pa_homeo_approx.geometry import domain_from_spec
from pa_homeo_approx.lebesgue import classify
from pa_homeo_approx.maps import IdentityMap, ShearSineMap, map_from_spec
from pa_homeo_approx.metrics import ApproxReport, PAMap

UNIT = domain_from_spec("unit_square")


def _mesh() -> PAMap:
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    images = vertices + np.array([0.1, 1.0 / 3.0])
    return PAMap.from_arrays(vertices, [[0, 1, 2], [0, 2, 3]], images)


def _report() -> ApproxReport:
    return ApproxReport(
        linf_map=0.01,
        linf_inv=0.02,
        w1p_map=0.03,
        w1p_inv=0.04,
        bilip_v=1.25,
        area_deficit=0.5,
        injective=True,
        orientation_ok=True,
        r=0.125,
        eta=1e-3,
        delta=1e-9,
        eps_target=0.1,
        errors=[{"square_id": "7", "reason": "untangling did not converge"}],
    )


class TestPAMesh:
    """Tests for PAMESH files."""

    def test_exact_doubles(self, tmp_path: Path) -> None:
        """Test that coordinates are read back bit for bit."""
        m = _mesh()
        path = write_pamesh(m, tmp_path / "mesh.pamesh")
        assert path.read_text().startswith("PAMESH 4 2\n")
        back = read_pamesh(path)
        np.testing.assert_array_equal(back.vertices, m.vertices)
        np.testing.assert_array_equal(back.images, m.images)
        np.testing.assert_array_equal(back.triangles, m.triangles)

    def test_bad_header(self, tmp_path: Path) -> None:
        """Test error for a wrong header."""
        path = tmp_path / "bad.pamesh"
        path.write_text("MESH 1 0\n")
        with pytest.raises(MeshFormatError, match="expected header"):
            read_pamesh(path)

    def test_empty_file(self, tmp_path: Path) -> None:
        """Test error for an empty file."""
        path = tmp_path / "empty.pamesh"
        path.write_text("")
        with pytest.raises(MeshFormatError, match="empty file"):
            read_pamesh(path)

    def test_index_out_of_range(self, tmp_path: Path) -> None:
        """Test error and line number for a bad vertex index."""
        path = tmp_path / "range.pamesh"
        path.write_text("PAMESH 3 1\nv 0 0 0 0\nv 1 0 1 0\nv 0 1 0 1\nt 0 1 3\n")
        with pytest.raises(MeshFormatError, match="out of range") as exc:
            read_pamesh(path)
        assert exc.value.line_number == 5

    def test_bad_vertex_record(self, tmp_path: Path) -> None:
        """Test error for a short vertex line."""
        path = tmp_path / "short.pamesh"
        path.write_text("PAMESH 3 1\nv 0 0 0\nv 1 0 1 0\nv 0 1 0 1\nt 0 1 2\n")
        with pytest.raises(MeshFormatError, match="v x y u_x u_y"):
            read_pamesh(path)


class TestSampledMap:
    """Tests for SAMPLEDMAP files."""

    def test_write_and_load(self, tmp_path: Path) -> None:
        """Test that a written sample file loads as a map agreeing at the nodes."""
        exact = ShearSineMap(UNIT, 0.1, 1.0)
        path = write_sampled_map(exact, tmp_path / "shear.txt", 9, 5)
        xs, ys, values, lip = read_sampled_map(path)
        assert xs.shape == (5,)
        assert ys.shape == (9,)
        assert values.shape == (9, 5, 2)
        assert lip == exact.L
        o = map_from_spec(f"file:{path}")
        z = np.array([[0.25, 0.5], [1.0, 0.0]])
        np.testing.assert_allclose(o.eval(z), exact.eval(z), atol=1e-15)

    def test_grid_too_small(self, tmp_path: Path) -> None:
        """Test error for a single row."""
        with pytest.raises(ValueError, match="Invalid sample grid"):
            write_sampled_map(IdentityMap(UNIT), tmp_path / "x.txt", 1, 4)

    def test_bad_constant(self, tmp_path: Path) -> None:
        """Test error for a constant below one."""
        path = tmp_path / "bad.txt"
        path.write_text("SAMPLEDMAP 2 2 0.5\n0 0 0 0\n1 0 1 0\n0 1 0 1\n1 1 1 1\n")
        with pytest.raises(MeshFormatError, match="L must be >= 1"):
            read_sampled_map(path)

    def test_sample_count(self, tmp_path: Path) -> None:
        """Test error for a missing sample line."""
        path = tmp_path / "short.txt"
        path.write_text("SAMPLEDMAP 2 2 1.0\n0 0 0 0\n1 0 1 0\n0 1 0 1\n")
        with pytest.raises(MeshFormatError, match="expected 4 samples, got 3"):
            read_sampled_map(path)

    def test_irregular_grid(self, tmp_path: Path) -> None:
        """Test error for samples off a tensor grid."""
        path = tmp_path / "irregular.txt"
        path.write_text("SAMPLEDMAP 2 2 1.0\n0 0 0 0\n1 0 1 0\n0.5 1 0 1\n1 1 1 1\n")
        with pytest.raises(MeshFormatError, match="regular grid"):
            read_sampled_map(path)


class TestDumps:
    """Tests for the classification dump and the report."""

    def test_classification_lines(self, tmp_path: Path) -> None:
        """Test one line per eligible square."""
        cls = classify(IdentityMap(UNIT), 0.125, 1e-6, quad_n=2, concurrency=1)
        path = write_classification(cls, tmp_path / "classification.txt")
        lines = path.read_text().splitlines()
        assert len(lines) == 16
        assert lines[0].split()[:4] == ["cell", "2", "2", "accepted"]
        assert len(lines[0].split()) == 9

    def test_report_sections(self, tmp_path: Path) -> None:
        """Test that a written report parses back into its sections."""
        path = write_report(
            _report(), tmp_path / "report.txt", {"map_spec": "identity"}, {"classify": 0.5}
        )
        sections = read_report(path)
        assert set(sections) == {"report", "config", "errors", "timings"}
        assert sections["report"]["injective"] == "true"
        assert sections["report"]["premap_constant"] == "none"
        assert sections["report"]["passed"] == "false"
        assert float(sections["report"]["linf_inv"]) == 0.02
        assert sections["config"]["map_spec"] == "identity"
        assert sections["errors"]["square 7"] == "untangling did not converge"

    def test_report_without_optional_sections(self) -> None:
        """Test that empty config, errors and timings are omitted."""
        report = _report()
        report.errors = []
        text = format_key_values(report)
        assert "[config]" not in text
        assert "[errors]" not in text
        assert "[timings]" not in text
        assert "passed = true" in text


class TestTables:
    """Tests for table exports."""

    def test_output_path(self, tmp_path: Path) -> None:
        """Test the table file extension per format."""
        assert get_output_path(tmp_path, "triangles", "parquet").name == "triangles.parquet"
        assert get_output_path(tmp_path, "triangles", "csv").name == "triangles.csv"

    def test_save_parquet(self, tmp_path: Path) -> None:
        """Test saving a table as parquet."""
        df = pd.DataFrame({"triangle": [0, 1], "distortion": [1.0, 2.5]})
        path = get_output_path(tmp_path / "run", "triangles", "parquet")
        save_dataframe(df, path, "parquet")
        pd.testing.assert_frame_equal(pd.read_parquet(path), df)

    def test_save_csv(self, tmp_path: Path) -> None:
        """Test saving a table as csv."""
        df = pd.DataFrame({"triangle": [0, 1], "distortion": [1.0, 2.5]})
        path = get_output_path(tmp_path, "triangles", "csv")
        save_dataframe(df, path, "csv")
        pd.testing.assert_frame_equal(pd.read_csv(path), df)
