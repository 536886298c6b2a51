"""CLI interface using typer."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Annotated

import typer
from rich.console import Console
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from pa_homeo_approx import __version__, approximate, list_maps
from pa_homeo_approx.config import (
    DEFAULT_CONCURRENCY,
    DEFAULT_DOMAIN,
    DEFAULT_EPS,
    DEFAULT_MAP,
    DEFAULT_MAX_DEPTH,
    DEFAULT_MAX_HALVINGS,
    DEFAULT_OUTPUT_FORMAT,
    DEFAULT_P,
    DEFAULT_PAIRS,
    DEFAULT_QUAD_N,
    DEFAULT_R0,
    DEFAULT_SEED,
    VALID_OUTPUT_FORMATS,
)
from pa_homeo_approx.exceptions import PAApproxError
from pa_homeo_approx.formats import read_pamesh, write_sampled_map
from pa_homeo_approx.geometry import domain_from_spec
from pa_homeo_approx.maps import map_from_spec
from pa_homeo_approx.metrics import ApproxReport, check_injective, pa_bilip

app = typer.Typer(
    name="pa-homeo-approx",
    help="Approximate planar bi-Lipschitz homeomorphisms by piecewise-affine ones.",
    add_completion=False,
)
console = Console()


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        console.print(f"pa-homeo-approx {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: Annotated[
        bool,
        typer.Option(
            "--version",
            "-V",
            help="Show version and exit.",
            callback=version_callback,
            is_eager=True,
        ),
    ] = False,
) -> None:
    """Approximate planar bi-Lipschitz homeomorphisms by piecewise-affine ones."""
    pass


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@app.command("run")
def run_cmd(
    map_spec: Annotated[
        str,
        typer.Option("--map", "-m", help="Builtin map (name:key=value,...) or file:<path>"),
    ] = DEFAULT_MAP,
    domain: Annotated[
        str,
        typer.Option(
            "--domain",
            "-d",
            help="unit_square, rect:x0,y0,x1,y1, lshape, polygon:x,y;..., disk:cx,cy,R",
        ),
    ] = DEFAULT_DOMAIN,
    eps: Annotated[
        float,
        typer.Option("--eps", "-e", help="Target accuracy of the four error terms"),
    ] = DEFAULT_EPS,
    p: Annotated[
        float,
        typer.Option("--p", help="Sobolev exponent (>= 1)"),
    ] = DEFAULT_P,
    r0: Annotated[
        float,
        typer.Option("--r0", help="Initial Lebesgue square side"),
    ] = DEFAULT_R0,
    max_halvings: Annotated[
        int,
        typer.Option("--max-halvings", help="Maximum halvings of r"),
    ] = DEFAULT_MAX_HALVINGS,
    quad_n: Annotated[
        int,
        typer.Option("--quad-n", help="Quadrature nodes per axis in the Lebesgue test"),
    ] = DEFAULT_QUAD_N,
    max_depth: Annotated[
        int,
        typer.Option("--max-depth", help="Quadtree depth below r on non-right domains"),
    ] = DEFAULT_MAX_DEPTH,
    pairs: Annotated[
        int,
        typer.Option("--pairs", help="Sampled pairs in the grid map check"),
    ] = DEFAULT_PAIRS,
    seed: Annotated[
        int,
        typer.Option("--seed", help="Random seed"),
    ] = DEFAULT_SEED,
    out: Annotated[
        Path | None,
        typer.Option("--out", "-o", help="Output directory"),
    ] = None,
    svg: Annotated[
        bool,
        typer.Option("--svg", help="Write SVG figures (needs --out)"),
    ] = False,
    naive: Annotated[
        bool,
        typer.Option("--naive", help="Also build the unclassified interpolation at r0"),
    ] = False,
    output_format: Annotated[
        str,
        typer.Option(
            "--format",
            "-f",
            help=f"Table format. Choices: {', '.join(VALID_OUTPUT_FORMATS)}",
        ),
    ] = DEFAULT_OUTPUT_FORMAT,
    concurrency: Annotated[
        int,
        typer.Option("--concurrency", "-c", help="Worker threads per stage"),
    ] = DEFAULT_CONCURRENCY,
    outside_constant: Annotated[
        float | None,
        typer.Option(
            "--outside-constant",
            help="Assumed extension constant for the internal eps (default: worst case)",
        ),
    ] = None,
    timings: Annotated[
        bool,
        typer.Option("--timings", help="Include stage timings in the report"),
    ] = False,
    quiet: Annotated[
        bool,
        typer.Option("--quiet", "-q", help="Minimal output"),
    ] = False,
    verbose: Annotated[
        bool,
        typer.Option("--verbose", "-v", help="Verbose output"),
    ] = False,
) -> None:
    """Approximate a map and report the error terms; exits 1 unless all checks pass."""
    _setup_logging(verbose)

    if output_format not in VALID_OUTPUT_FORMATS:
        console.print(f"[red]Error: Invalid format '{output_format}'[/red]")
        console.print(f"Valid options: {', '.join(VALID_OUTPUT_FORMATS)}")
        raise typer.Exit(1)

    if svg and out is None:
        console.print("[red]Error: --svg needs --out[/red]")
        raise typer.Exit(1)

    try:
        with Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            console=console,
            disable=quiet,
        ) as progress:
            task = progress.add_task("Starting...", total=None)
            ra = approximate(
                map_spec,
                domain=domain,
                eps=eps,
                p=p,
                r0=r0,
                max_halvings=max_halvings,
                quad_n=quad_n,
                max_depth=max_depth,
                pairs=pairs,
                seed=seed,
                out_dir=out,
                svg=svg,
                naive=naive,
                format=output_format,  # type: ignore[arg-type]
                concurrency=concurrency,
                outside_constant=outside_constant,
                timings=timings,
                progress=lambda stage: progress.update(task, description=stage.capitalize()),
            )
    except (PAApproxError, ValueError) as e:
        console.print(f"[red]Error: {e}[/red]")
        if verbose:
            console.print_exception()
        raise typer.Exit(1) from None

    if not quiet:
        _render_report(ra.report)
        if ra.naive is not None:
            flipped = int((ra.naive.image_areas() <= 0).sum())
            console.print(
                f"Naive interpolation: {ra.naive.n_triangles:,} triangles, {flipped} flipped"
            )
        if out is not None:
            console.print(f"[green]Saved to {out}[/green]")
    raise typer.Exit(ra.exit_code)


def _render_report(report: ApproxReport) -> None:
    """Render the headline report fields as a table."""
    table = Table(title="Approximation report")
    table.add_column("Quantity", style="cyan")
    table.add_column("Value", justify="right")
    table.add_column("Bound", justify="right", style="yellow")

    eps = f"{report.eps_target:g}"
    table.add_row("L-inf map", f"{report.linf_map:.3e}", eps)
    table.add_row("L-inf inverse", f"{report.linf_inv:.3e}", eps)
    table.add_row(f"W1,{report.p:g} map", f"{report.w1p_map:.3e}", eps)
    table.add_row(f"W1,{report.p:g} inverse", f"{report.w1p_inv:.3e}", eps)
    table.add_row("Bi-Lipschitz", f"{report.bilip_v:.4g}", f"L = {report.L:.4g}")
    table.add_row("Injective", str(report.injective).lower(), "")
    table.add_row("Orientation preserving", str(report.orientation_ok).lower(), "")
    table.add_row("r", f"{report.r:g}", "")
    table.add_row("Lebesgue area deficit", f"{report.area_deficit:.3e}", "")
    table.add_row("Triangles", f"{report.n_triangles:,}", "")
    if report.uncovered_area > 0:
        table.add_row("Uncovered sliver", f"{report.uncovered_area:.3e}", "")
    console.print(table)

    if report.witness:
        console.print(f"[yellow]Witness: {report.witness}[/yellow]")
    for error in report.errors:
        console.print(f"[red]Square {error['square_id']}: {error['reason']}[/red]")
    status = "[green]PASSED[/green]" if report.passed else "[red]FAILED[/red]"
    console.print(f"\n[bold]{status}[/bold]")


@app.command("maps")
def maps_cmd(
    format: Annotated[
        str,
        typer.Option("--format", "-f", help="Output format: table, plain"),
    ] = "table",
) -> None:
    """List builtin maps with their default parameters and constants."""
    valid_formats = ["table", "plain"]
    if format not in valid_formats:
        console.print(f"[red]Error: Invalid format '{format}'[/red]")
        console.print(f"Valid options: {', '.join(valid_formats)}")
        raise typer.Exit(1)

    df = list_maps()
    if format == "plain":
        for name in df["name"]:
            console.print(name)
        return

    table = Table(title="Builtin maps")
    table.add_column("Name", style="cyan")
    table.add_column("Parameters", style="green")
    table.add_column("L", justify="right", style="yellow")
    for row in df.itertuples(index=False):
        table.add_row(str(row.name), str(row.params), f"{row.L:.4g}")
    console.print(table)
    console.print(f"\n[bold]Total: {len(df)} maps[/bold]")


@app.command("check")
def check_cmd(
    mesh: Annotated[Path, typer.Argument(help="PAMESH file")],
) -> None:
    """Certify injectivity of a PAMESH file; exits 1 when it is not injective."""
    try:
        m = read_pamesh(mesh)
        result = check_injective(m)
        bilip = pa_bilip(m) if result.orientation_ok else float("inf")
    except (PAApproxError, OSError, ValueError) as e:
        console.print(f"[red]Error: {e}[/red]")
        raise typer.Exit(1) from None

    console.print(f"Triangles: {m.n_triangles:,}")
    console.print(f"Bi-Lipschitz: {bilip:.4g}")
    if result.injective:
        console.print("[green]Injective[/green]")
        return
    console.print(f"[red]Not injective: {result.witness}[/red]")
    raise typer.Exit(1)


@app.command("sample")
def sample_cmd(
    output: Annotated[Path, typer.Argument(help="SAMPLEDMAP file to write")],
    map_spec: Annotated[
        str,
        typer.Option("--map", "-m", help="Builtin map (name:key=value,...)"),
    ] = DEFAULT_MAP,
    domain: Annotated[
        str,
        typer.Option("--domain", "-d", help="Domain spec; the samples cover its bounding box"),
    ] = DEFAULT_DOMAIN,
    rows: Annotated[int, typer.Option("--rows", help="Sample rows")] = 65,
    cols: Annotated[int, typer.Option("--cols", help="Sample columns")] = 65,
) -> None:
    """Sample a builtin map on a regular grid into a SAMPLEDMAP file."""
    try:
        o = map_from_spec(map_spec, domain_from_spec(domain))
        write_sampled_map(o, output, rows, cols)
    except (PAApproxError, OSError, ValueError) as e:
        console.print(f"[red]Error: {e}[/red]")
        raise typer.Exit(1) from None
    console.print(f"[green]Saved {rows}x{cols} samples to {output}[/green]")


if __name__ == "__main__":
    app()
