"""Tests for CLI module."""

from pathlib import Path

import numpy as np
from typer.testing import CliRunner

from pa_homeo_approx import __version__
from pa_homeo_approx.cli import app
from pa_homeo_approx.formats import write_pamesh
from pa_homeo_approx.metrics import PAMap

runner = CliRunner()

SMALL_RUN = [
    "run",
    "--map",
    "identity",
    "--r0",
    "0.125",
    "--max-halvings",
    "0",
    "--quad-n",
    "2",
    "--pairs",
    "100",
    "--concurrency",
    "1",
    "--outside-constant",
    "1",
]


class TestVersion:
    """Tests for the version option."""

    def test_version(self) -> None:
        """Test printing the version."""
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert f"pa-homeo-approx {__version__}" in result.stdout


class TestMapsCommand:
    """Tests for the maps command."""

    def test_table(self) -> None:
        """Test the builtin table."""
        result = runner.invoke(app, ["maps"])
        assert result.exit_code == 0
        assert "shear_sine" in result.stdout
        assert "Total: 5 maps" in result.stdout

    def test_plain(self) -> None:
        """Test plain names, one per line."""
        result = runner.invoke(app, ["maps", "--format", "plain"])
        assert result.exit_code == 0
        assert result.stdout.split() == [
            "identity",
            "affine",
            "shear_sine",
            "polar_twist",
            "fold_candidate",
        ]

    def test_invalid_format(self) -> None:
        """Test error for an unknown format."""
        result = runner.invoke(app, ["maps", "--format", "json"])
        assert result.exit_code == 1
        assert "Invalid format" in result.stdout


class TestRunCommand:
    """Tests for the run command."""

    def test_identity_passes(self, tmp_path: Path) -> None:
        """Test a passing run with outputs."""
        out = tmp_path / "run"
        result = runner.invoke(app, [*SMALL_RUN, "--out", str(out), "--format", "csv"])
        assert result.exit_code == 0
        assert "PASSED" in result.stdout
        assert "Saved to" in result.stdout
        assert (out / "mesh.pamesh").exists()
        assert (out / "triangles.csv").exists()
        assert not (out / "figure.svg").exists()

    def test_quiet(self) -> None:
        """Test that quiet runs print nothing but keep the exit code."""
        result = runner.invoke(app, [*SMALL_RUN, "--quiet"])
        assert result.exit_code == 0
        assert "PASSED" not in result.stdout

    def test_naive(self) -> None:
        """Test the naive interpolation summary."""
        result = runner.invoke(app, [*SMALL_RUN, "--naive"])
        assert result.exit_code == 0
        assert "0 flipped" in result.stdout

    def test_invalid_format(self) -> None:
        """Test error for an unknown table format."""
        result = runner.invoke(app, [*SMALL_RUN, "--format", "json"])
        assert result.exit_code == 1
        assert "Invalid format" in result.stdout

    def test_svg_needs_out(self) -> None:
        """Test that figures require an output directory."""
        result = runner.invoke(app, [*SMALL_RUN, "--svg"])
        assert result.exit_code == 1
        assert "--svg needs --out" in result.stdout

    def test_invalid_map(self) -> None:
        """Test error for an unknown map."""
        result = runner.invoke(app, ["run", "--map", "swirl"])
        assert result.exit_code == 1
        assert "Invalid map" in result.stdout

    def test_invalid_eps(self) -> None:
        """Test error for a non-positive accuracy."""
        result = runner.invoke(app, [*SMALL_RUN, "--eps", "0"])
        assert result.exit_code == 1
        assert "Invalid eps" in result.stdout


class TestCheckCommand:
    """Tests for the check command."""

    def test_injective_mesh(self, tmp_path: Path) -> None:
        """Test a mesh that passes the certificate."""
        square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        path = write_pamesh(
            PAMap.from_arrays(square, [[0, 1, 2], [0, 2, 3]], square * 2.0), tmp_path / "ok.pamesh"
        )
        result = runner.invoke(app, ["check", str(path)])
        assert result.exit_code == 0
        assert "Triangles: 2" in result.stdout
        assert "Bi-Lipschitz: 2" in result.stdout
        assert "Injective" in result.stdout

    def test_flipped_mesh(self, tmp_path: Path) -> None:
        """Test a mesh with a flipped triangle."""
        square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        images = square.copy()
        images[1] = [0.2, 1.5]
        path = write_pamesh(
            PAMap.from_arrays(square, [[0, 1, 2], [0, 2, 3]], images), tmp_path / "bad.pamesh"
        )
        result = runner.invoke(app, ["check", str(path)])
        assert result.exit_code == 1
        assert "Not injective" in result.stdout

    def test_missing_file(self, tmp_path: Path) -> None:
        """Test error for a missing mesh file."""
        result = runner.invoke(app, ["check", str(tmp_path / "missing.pamesh")])
        assert result.exit_code == 1
        assert "Error" in result.stdout


class TestSampleCommand:
    """Tests for the sample command."""

    def test_sample_and_run(self, tmp_path: Path) -> None:
        """Test writing samples and approximating the sampled map."""
        path = tmp_path / "identity.txt"
        result = runner.invoke(
            app, ["sample", str(path), "--map", "identity", "--rows", "9", "--cols", "9"]
        )
        assert result.exit_code == 0
        assert "Saved 9x9 samples" in result.stdout
        assert path.read_text().startswith("SAMPLEDMAP 9 9 1.0\n")

        args = [*SMALL_RUN]
        args[2] = f"file:{path}"
        result = runner.invoke(app, args)
        assert result.exit_code == 0
        assert "PASSED" in result.stdout

    def test_invalid_grid(self, tmp_path: Path) -> None:
        """Test error for a single-row grid."""
        result = runner.invoke(app, ["sample", str(tmp_path / "x.txt"), "--rows", "1"])
        assert result.exit_code == 1
        assert "Invalid sample grid" in result.stdout
