"""On-disk formats: ASCII grids, P2 graymaps, JSON sidecars, CSV tables and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .constants import GRID_NODATA, LAYER_ELEVATION, LAYER_TRAVERSABILITY
from .grid import GridMap, Pose2D

if TYPE_CHECKING:
    from .engine import RunReport

ASCII_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{float(value):.6f}"
    if value is None:
        return ""
    return str(value)


def _ensure_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"Unable to create directory {path.parent}: {exc}") from exc


def _write_text(path: Path, text: str) -> None:
    _ensure_parent(path)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Unable to write {path}: {exc}") from exc


def read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Unable to read {path}: {exc}") from exc


# --- JSON / CSV -------------------------------------------------------------------


def write_json(path: Path, data: Dict[str, Any]) -> None:
    _write_text(Path(path), json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    raw = read_text(path)
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path = Path(path)
    _ensure_parent(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(value) for value in row])
    except OSError as exc:
        raise OSError(f"Unable to write {path}: {exc}") from exc


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    try:
        with Path(path).open("rb") as handle:
            for chunk in iter(lambda: handle.read(65536), b""):
                digest.update(chunk)
    except OSError as exc:
        raise OSError(f"Unable to hash {path}: {exc}") from exc
    return digest.hexdigest()


# --- ASCII grids ----------------------------------------------------------------


@dataclass
class AsciiGrid:
    """Values stored south row first (row follows +y), NaN for nodata."""

    values: np.ndarray
    xllcorner: float
    yllcorner: float
    cellsize: float

    def to_grid(self, layer: str) -> GridMap:
        rows, cols = self.values.shape
        grid = GridMap(
            size_x=cols * self.cellsize,
            size_y=rows * self.cellsize,
            resolution=self.cellsize,
            origin=Pose2D(self.xllcorner, self.yllcorner),
            layers=(),
        )
        grid.set_layer(layer, self.values)
        return grid


def write_ascii_grid(
    path: Path,
    values: np.ndarray,
    *,
    xllcorner: float,
    yllcorner: float,
    cellsize: float,
    nodata: float = GRID_NODATA,
) -> None:
    data = np.asarray(values, dtype=np.float64)
    rows, cols = data.shape
    lines = [
        f"ncols {cols}",
        f"nrows {rows}",
        f"xllcorner {xllcorner:.6f}",
        f"yllcorner {yllcorner:.6f}",
        f"cellsize {cellsize:.6f}",
        f"nodata_value {nodata:g}",
    ]
    # North row first.
    for row in np.flipud(np.where(np.isfinite(data), data, nodata)):
        lines.append(" ".join(f"{value:.6f}" for value in row))
    _write_text(Path(path), "\n".join(lines) + "\n")


def write_grid_layer(path: Path, grid: GridMap, layer: str) -> None:
    write_ascii_grid(
        path,
        grid.layer(layer),
        xllcorner=grid.origin.x,
        yllcorner=grid.origin.y,
        cellsize=grid.resolution,
    )


def read_ascii_grid(path: Path) -> AsciiGrid:
    lines = read_text(path).splitlines()
    header: Dict[str, float] = {}
    body_start = 0
    for index, line in enumerate(lines):
        parts = line.split()
        if len(parts) == 2 and parts[0].lower() in ASCII_HEADER_KEYS:
            try:
                header[parts[0].lower()] = float(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}: bad header value {line!r}") from exc
            body_start = index + 1
            continue
        break
    missing = [key for key in ASCII_HEADER_KEYS[:5] if key not in header]
    if missing:
        raise ValueError(f"{path}: ASCII grid header is missing {', '.join(missing)}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    try:
        flat = np.array(" ".join(lines[body_start:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric grid values") from exc
    if flat.size != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {flat.size}")
    values = np.flipud(flat.reshape(nrows, ncols)).copy()
    nodata = header.get("nodata_value")
    if nodata is not None:
        values[values == nodata] = np.nan
    return AsciiGrid(values, header["xllcorner"], header["yllcorner"], header["cellsize"])


# --- P2 graymaps --------------------------------------------------------------


def write_pgm(path: Path, pixels: np.ndarray, maxval: int = 255, comment: Optional[str] = None) -> None:
    """Write ``pixels`` as plain P2; the first array row becomes the top image row."""
    data = np.asarray(pixels, dtype=np.int64)
    if data.min(initial=0) < 0 or data.max(initial=0) > maxval:
        raise ValueError(f"Pixel values must lie in 0..{maxval}")
    rows, cols = data.shape
    lines: List[str] = ["P2"]
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"{cols} {rows}")
    lines.append(str(maxval))
    for row in data:
        lines.append(" ".join(str(int(value)) for value in row))
    _write_text(Path(path), "\n".join(lines) + "\n")


def read_pgm(path: Path) -> np.ndarray:
    tokens: List[str] = []
    for line in read_text(path).splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain (P2) graymap")
    try:
        cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        pixels = np.array(tokens[4:], dtype=np.int64)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed P2 header or body") from exc
    if pixels.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} pixels, found {pixels.size}")
    if pixels.size and (pixels.min() < 0 or pixels.max() > maxval):
        raise ValueError(f"{path}: pixel values outside 0..{maxval}")
    return pixels.reshape(rows, cols)


def render_layer(values: np.ndarray) -> np.ndarray:
    """Scale a float layer linearly onto 0..254 (top row = highest y); NaN maps to 255."""
    data = np.asarray(values, dtype=np.float64)
    known = np.isfinite(data)
    pixels = np.full(data.shape, 255, dtype=np.int64)
    if known.any():
        lo = float(data[known].min())
        hi = float(data[known].max())
        span = hi - lo if hi > lo else 1.0
        pixels[known] = np.round((data[known] - lo) / span * 254.0).astype(np.int64)
    return np.flipud(pixels)


# --- Run reports ----------------------------------------------------------------

TRAJECTORY_HEADER = (
    "time", "true_x", "true_y", "true_theta", "odom_x", "odom_y", "odom_theta",
    "est_x", "est_y", "est_theta", "v", "omega", "cmd_v", "cmd_omega", "mode",
)
PLAN_HEADER = (
    "time", "start_x", "start_y", "ok", "cause", "waypoints", "distance", "terrain_cost",
    "max_cost", "g_total", "expansions", "ground_cost",
)
EVENT_HEADER = ("time", "cause", "c_ground", "c_aerial", "mode_before", "mode_after")
DRIVE_HEADER = (
    "time", "cmd_v", "cmd_omega", "applied_v", "applied_omega", "v_left", "v_right",
    "rpm_left", "rpm_right", "timed_out",
)


def write_run_report(
    out_dir: Path,
    report: "RunReport",
    *,
    include_timings: bool = False,
    inputs: Sequence[Path] = (),
    version: str = "",
) -> List[Path]:
    """Write CSV tables, rendered maps, ``summary.json`` and a hashed ``manifest.json``."""
    from .costmap import render_costmap

    out = Path(out_dir)
    written: List[Path] = []

    path = out / "trajectory.csv"
    write_csv(
        path,
        TRAJECTORY_HEADER,
        (
            (
                s.time, s.true_pose.x, s.true_pose.y, s.true_pose.theta,
                s.odom_pose.x, s.odom_pose.y, s.odom_pose.theta,
                s.estimate.x, s.estimate.y, s.estimate.theta,
                s.twist.v, s.twist.omega, s.command.v, s.command.omega, s.mode,
            )
            for s in report.trajectory
        ),
    )
    written.append(path)

    path = out / "plans.csv"
    write_csv(
        path,
        PLAN_HEADER,
        (
            (
                p.time, p.start[0], p.start[1], p.ok, p.cause, p.waypoints, p.distance,
                p.terrain_cost, p.max_cost, p.g_total, p.expansions, p.ground_cost,
            )
            for p in report.plans
        ),
    )
    written.append(path)

    path = out / "events.csv"
    write_csv(
        path,
        EVENT_HEADER,
        ((e.time, e.cause, e.c_ground, e.c_aerial, e.mode_before, e.mode_after) for e in report.events),
    )
    written.append(path)

    path = out / "drive.csv"
    write_csv(
        path,
        DRIVE_HEADER,
        (
            (
                d.time, d.command.v, d.command.omega, d.applied.v, d.applied.omega,
                d.v_left, d.v_right, d.rpm_left, d.rpm_right, d.timed_out,
            )
            for d in report.drive_records
        ),
    )
    written.append(path)

    if report.costmap is not None:
        path = out / "costmap.pgm"
        written.append(path)
        written.append(render_costmap(report.costmap, path))
    if report.elevation is not None:
        for layer in (LAYER_ELEVATION, LAYER_TRAVERSABILITY):
            path = out / f"{layer}.asc"
            write_grid_layer(path, report.elevation, layer)
            written.append(path)
        path = out / "elevation.pgm"
        write_pgm(path, render_layer(report.elevation.layer(LAYER_ELEVATION)), comment="elevation")
        written.append(path)

    if include_timings:
        path = out / "timings.csv"
        write_csv(path, ("stage", "seconds"), sorted(report.timings.items()))
        written.append(path)

    path = out / "summary.json"
    write_json(path, report.summary())
    written.append(path)

    manifest = {
        "version": version,
        "seed": report.scenario.get("seed"),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {p.name: sha256_file(p) for p in written},
    }
    path = out / "manifest.json"
    write_json(path, manifest)
    written.append(path)
    return written
