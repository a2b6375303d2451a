"""Command-line entry point: closed-loop runs, offline planning, conversion and benchmarks."""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np
import typer

from . import __version__
from .config import load_scenario
from .constants import (
    EXIT_BAD_INPUT,
    EXIT_FAILED,
    EXIT_IO,
    EXIT_OK,
    PGM_UNKNOWN,
    resolve_preset,
)
from .costmap import CostmapConfig, WorldCostmap, load_costmap, render_costmap, traversability_to_costs
from .engine import OUTCOME_ARRIVED, OUTCOME_RECOMMENDATION
from .geobench import (
    allan_deviation,
    cloud_to_mesh_stats,
    delaunay_2_5d,
    load_series,
    load_xyz,
    loglog_slope,
    noise_parameters,
)
from .logger import log, set_quiet
from .planner import PlannerConfig, cost_bands, path_metrics, plan as plan_path, planner_preset
from .simworld import run_loop
from .stores import read_ascii_grid, render_layer, sha256_file, write_csv, write_json, write_pgm, write_run_report

OUTPUT_FORMATS = ("table", "json")

app = typer.Typer(help="Traversability-aware navigation: simulate, plan, convert, benchmark.")


def _guard(action: Callable[[], int]) -> None:
    """Run a command body and map exceptions onto the stable exit codes."""
    try:
        code = action()
    except OSError as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_IO)
    except ValueError as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(EXIT_BAD_INPUT)
    raise typer.Exit(code)


def resolve_point(text: str, name: str) -> Tuple[float, float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    try:
        if len(parts) != 2:
            raise ValueError
        return (float(parts[0]), float(parts[1]))
    except ValueError:
        raise ValueError(f"Invalid {name}={text!r}; expected 'x,y' in metres.") from None


def _endpoints(
    start: Optional[str], goal: Optional[str], scenario: Optional[Path]
) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Flag values win over the scenario file."""
    run = load_scenario(scenario).run if scenario is not None else None
    if start is not None:
        s = resolve_point(start, "start")
    elif run is not None:
        s = (float(run.start[0]), float(run.start[1]))
    else:
        raise ValueError("plan needs --start or --scenario")
    if goal is not None:
        g = resolve_point(goal, "goal")
    elif run is not None:
        g = (float(run.goal[0]), float(run.goal[1]))
    else:
        raise ValueError("plan needs --goal or --scenario")
    return s, g


def _pct(new: float, old: float) -> float:
    if old == 0:
        return 0.0
    return 100.0 * (new - old) / old


@app.command("simulate")
def simulate(
    scenario: Optional[Path] = typer.Option(None, "--scenario", help="Scenario TOML file."),
    out: Path = typer.Option(Path("run"), "--out", help="Report directory."),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the scenario seed."),
    time_budget: Optional[float] = typer.Option(None, "--time-budget", help="Simulated seconds."),
    expect_recommendation: bool = typer.Option(
        False, "--expect-recommendation", help="Treat an aerial recommendation as success."
    ),
    timings: bool = typer.Option(False, "--timings", help="Also write wall-clock stage timings."),
    quiet: bool = typer.Option(False, "--quiet", help="Silence stage logging."),
) -> None:
    set_quiet(quiet)

    def action() -> int:
        config = load_scenario(scenario).with_overrides(seed=seed, time_budget=time_budget)
        report = run_loop(config)
        inputs = [scenario] if scenario else []
        write_run_report(out, report, include_timings=timings, inputs=inputs, version=__version__)
        typer.echo(
            f"{report.outcome}: t={report.final_time:.2f}s, distance to goal "
            f"{report.final_distance:.3f} m, {len(report.events)} decision event(s)"
        )
        if report.outcome == OUTCOME_ARRIVED:
            return EXIT_OK
        if report.outcome == OUTCOME_RECOMMENDATION and expect_recommendation:
            return EXIT_OK
        cause = report.events[-1].cause if report.events else report.outcome
        typer.echo(f"run did not reach the goal (cause: {cause})", err=True)
        return EXIT_FAILED

    _guard(action)


@app.command("plan")
def plan(
    costmap: Path = typer.Option(..., "--costmap", help="P2 costmap with its JSON sidecar."),
    start: Optional[str] = typer.Option(None, "--start", help="Start 'x,y' in metres."),
    goal: Optional[str] = typer.Option(None, "--goal", help="Goal 'x,y' in metres."),
    scenario: Optional[Path] = typer.Option(
        None, "--scenario", help="Take start and goal from a scenario file."
    ),
    preset: str = typer.Option("thesis", "--preset", help="thesis (alias onboard) | offline"),
    wt: Optional[float] = typer.Option(None, "--wt", help="Override the terrain weight."),
    compare: bool = typer.Option(False, "--compare", help="Also plan the w_t = 0 baseline."),
    out: Path = typer.Option(Path("plan"), "--out", help="Output directory."),
    fmt: str = typer.Option("table", "--format", help="table | json"),
    quiet: bool = typer.Option(False, "--quiet"),
) -> None:
    set_quiet(quiet)

    def action() -> int:
        if fmt not in OUTPUT_FORMATS:
            raise ValueError(f"Invalid format={fmt!r}; expected table or json.")
        world = load_costmap(costmap)
        s, g = _endpoints(start, goal, scenario)
        preset_name = resolve_preset(preset)
        cfg, energy = planner_preset(preset_name)
        if wt is not None:
            cfg = replace(cfg, w_t=wt)
        runs: List[Tuple[str, PlannerConfig]] = [("aware", cfg)]
        if compare:
            runs.insert(0, ("baseline", replace(cfg, w_t=0.0)))

        rows = []
        reference: Optional[Tuple[float, float]] = None
        for label, run_cfg in runs:
            result = plan_path(world, s, g, run_cfg, energy)
            if not result.ok:
                typer.echo(f"{label}: no path ({result.cause})", err=True)
                return EXIT_FAILED
            distance, terrain, max_cost = path_metrics(result, world, cfg)
            bands = cost_bands(result, world)
            write_csv(out / f"path_{label}.csv", ("x", "y"), result.waypoints)
            if reference is None:
                reference = (distance, terrain)
            rows.append(
                (
                    label,
                    run_cfg.w_t,
                    distance,
                    terrain,
                    max_cost,
                    _pct(distance, reference[0]),
                    _pct(terrain, reference[1]),
                    bands["free"],
                    bands["transition"],
                    bands["hazard"],
                    bands["lethal"],
                    bands["unknown"],
                    result.expansions,
                    result.wall_time,
                )
            )
            log(f"[planner] {label}: {distance:.3f} m, terrain {terrain:.3f}, {result.expansions} expansions")
        header = (
            "label", "w_t", "distance", "terrain_cost", "max_cost",
            "distance_delta_pct", "terrain_delta_pct", "free", "transition", "hazard", "lethal", "unknown",
            "expansions", "wall_time",
        )
        write_csv(out / "comparison.csv", header, rows)
        write_json(
            out / "manifest.json",
            {"version": __version__, "inputs": {str(costmap): sha256_file(costmap)}, "preset": preset_name},
        )
        if fmt == "json":
            typer.echo(json.dumps([dict(zip(header, row)) for row in rows], indent=2))
            return EXIT_OK
        for row in rows:
            typer.echo(
                f"{row[0]:>8}  w_t={row[1]:g}  distance={row[2]:.3f} m ({row[5]:+.1f}%)  "
                f"terrain={row[3]:.3f} ({row[6]:+.1f}%)"
            )
        return EXIT_OK

    _guard(action)


@app.command("convert")
def convert(
    source: Path = typer.Option(..., "--input", help="ASCII traversability layer."),
    out: Path = typer.Option(..., "--out", help="Output P2 costmap (sidecar written alongside)."),
    t_high: float = typer.Option(CostmapConfig.t_high, "--t-high"),
    t_crit: float = typer.Option(CostmapConfig.t_crit, "--t-crit"),
) -> None:
    def action() -> int:
        grid = read_ascii_grid(source)
        cfg = CostmapConfig(t_high=t_high, t_crit=t_crit)
        world = WorldCostmap(
            traversability_to_costs(grid.values, cfg),
            origin=(grid.xllcorner, grid.yllcorner),
            resolution=grid.cellsize,
        )
        render_costmap(world, out)
        unknown = int(np.count_nonzero(world.data < 0))
        typer.echo(f"wrote {out} ({world.cols}x{world.rows}, {unknown} unknown -> {PGM_UNKNOWN})")
        return EXIT_OK

    _guard(action)


@app.command("render")
def render(
    source: Path = typer.Option(..., "--input", help="ASCII grid layer."),
    out: Path = typer.Option(..., "--out", help="Output P2 graymap."),
) -> None:
    def action() -> int:
        grid = read_ascii_grid(source)
        write_pgm(out, render_layer(grid.values), comment=source.name)
        typer.echo(f"wrote {out}")
        return EXIT_OK

    _guard(action)


@app.command("geobench")
def geobench(
    mode: str = typer.Argument(..., help="c2c | allan"),
    reference: Optional[Path] = typer.Option(None, "--reference", help="Reference x y z cloud (c2c)."),
    cloud: Optional[Path] = typer.Option(None, "--cloud", help="Compared x y z cloud (c2c)."),
    series: Optional[Path] = typer.Option(None, "--series", help="Uniform time series (allan)."),
    rate: float = typer.Option(100.0, "--rate", help="Sample rate in Hz (allan)."),
    bucket: float = typer.Option(1.0, "--bucket", help="Histogram bucket width in cm (c2c)."),
    out: Path = typer.Option(Path("geobench"), "--out", help="Output directory."),
    quiet: bool = typer.Option(False, "--quiet"),
) -> None:
    set_quiet(quiet)

    def action() -> int:
        if mode == "c2c":
            if reference is None or cloud is None:
                raise ValueError("c2c needs --reference and --cloud")
            mesh = delaunay_2_5d(load_xyz(reference))
            stats = cloud_to_mesh_stats(load_xyz(cloud), mesh, bucket)
            write_csv(
                out / "deviation.csv",
                ("count", "mean_cm", "std_dev_cm", "max_cm"),
                [(stats.count, stats.mean, stats.std_dev, stats.max)],
            )
            write_csv(out / "histogram.csv", ("lo_cm", "hi_cm", "count"), stats.buckets())
            typer.echo(
                f"points={stats.count} mean={stats.mean:.3f} cm std={stats.std_dev:.3f} cm "
                f"max={stats.max:.3f} cm (mesh: {len(mesh)} triangles)"
            )
            return EXIT_OK
        if mode == "allan":
            if series is None:
                raise ValueError("allan needs --series")
            curve = allan_deviation(load_series(series), rate)
            if not curve:
                raise ValueError(f"{series}: series too short for any averaging time")
            write_csv(out / "allan.csv", ("tau", "deviation"), curve)
            params = noise_parameters(curve)
            write_json(out / "noise.json", params)
            slope = loglog_slope(curve[: max(len(curve) // 2, 2)])
            typer.echo(
                f"taus={len(curve)} short-tau slope={slope:+.3f} "
                + " ".join(f"{k}={'n/a' if v is None else format(v, '.6g')}" for k, v in params.items())
            )
            return EXIT_OK
        raise ValueError(f"Invalid mode={mode!r}; expected 'c2c' or 'allan'.")

    _guard(action)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
