"""Traversability-to-cost conversion and the persistent world costmap."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .constants import (
    CELL_EPSILON,
    COST_UNKNOWN,
    DEFAULT_CROP_EXTENT,
    DEFAULT_EDGE_BUFFER,
    DEFAULT_INIT_COST,
    DEFAULT_PUBLISH_RATE,
    DEFAULT_T_CRIT,
    DEFAULT_T_HIGH,
    DEFAULT_WARMUP_MESSAGES,
    DEFAULT_WORLD_ORIGIN,
    DEFAULT_WORLD_RESOLUTION,
    DEFAULT_WORLD_SIZE,
    LAYER_TRAVERSABILITY,
    PGM_UNKNOWN,
)
from .grid import CellIndex, GridMap, Pose2D, cells_for
from .logger import log
from .stores import read_json, read_pgm, write_json, write_pgm


@dataclass(frozen=True)
class CostmapConfig:
    t_high: float = DEFAULT_T_HIGH
    t_crit: float = DEFAULT_T_CRIT
    size_x: float = DEFAULT_WORLD_SIZE
    size_y: float = DEFAULT_WORLD_SIZE
    resolution: float = DEFAULT_WORLD_RESOLUTION
    origin: Tuple[float, float] = DEFAULT_WORLD_ORIGIN
    init_cost: int = DEFAULT_INIT_COST
    crop_extent: float = DEFAULT_CROP_EXTENT
    edge_buffer: float = DEFAULT_EDGE_BUFFER
    warmup_messages: int = DEFAULT_WARMUP_MESSAGES
    publish_rate: float = DEFAULT_PUBLISH_RATE

    def __post_init__(self) -> None:
        if not (0.0 < self.t_crit < self.t_high <= 1.0):
            raise ValueError(
                f"Invalid thresholds t_crit={self.t_crit!r}, t_high={self.t_high!r}; "
                "expected 0 < t_crit < t_high <= 1."
            )
        if self.resolution <= 0:
            raise ValueError(f"Invalid costmap resolution={self.resolution!r}; expected > 0.")
        if not (COST_UNKNOWN <= self.init_cost <= 100):
            raise ValueError(f"Invalid init_cost={self.init_cost!r}; expected -1..100.")
        if self.warmup_messages < 0:
            raise ValueError(f"Invalid warmup_messages={self.warmup_messages!r}; expected >= 0.")


def traversability_to_cost(t: Optional[float], cfg: CostmapConfig) -> int:
    if t is None or not math.isfinite(t) or t < 0:
        return COST_UNKNOWN
    if t >= cfg.t_high:
        return 0
    if t >= cfg.t_crit:
        return int(math.floor(20.0 * (cfg.t_high - t) / (cfg.t_high - cfg.t_crit)))
    return int(math.floor(100.0 - 80.0 * t / cfg.t_crit))


def traversability_to_costs(values: np.ndarray, cfg: CostmapConfig) -> np.ndarray:
    """Vectorised ``traversability_to_cost``; returns an int16 array."""
    t = np.asarray(values, dtype=np.float64)
    unknown = ~np.isfinite(t) | (t < 0)
    safe = np.where(unknown, 0.0, t)
    mid = np.floor(20.0 * (cfg.t_high - safe) / (cfg.t_high - cfg.t_crit))
    low = np.floor(100.0 - 80.0 * safe / cfg.t_crit)
    cost = np.where(safe >= cfg.t_high, 0.0, np.where(safe >= cfg.t_crit, mid, low))
    cost = np.where(unknown, COST_UNKNOWN, cost)
    return cost.astype(np.int16)


class WorldCostmap:
    """Fixed-origin cost grid; row follows +y, col follows +x, -1 marks unknown."""

    def __init__(
        self,
        data: np.ndarray,
        *,
        origin: Tuple[float, float] = DEFAULT_WORLD_ORIGIN,
        resolution: float = DEFAULT_WORLD_RESOLUTION,
        updates: int = 0,
    ) -> None:
        grid = np.asarray(data)
        if grid.ndim != 2:
            raise ValueError(f"Costmap data must be 2D; got shape {grid.shape}.")
        if grid.size and (grid.min() < COST_UNKNOWN or grid.max() > 100):
            raise ValueError("Costmap values must lie in {-1} or 0..100.")
        self.data = grid.astype(np.int16)
        self.origin = (float(origin[0]), float(origin[1]))
        self.resolution = float(resolution)
        self.updates = updates

    @classmethod
    def from_config(cls, cfg: CostmapConfig) -> "WorldCostmap":
        rows = cells_for(cfg.size_y, cfg.resolution)
        cols = cells_for(cfg.size_x, cfg.resolution)
        data = np.full((rows, cols), cfg.init_cost, dtype=np.int16)
        return cls(data, origin=cfg.origin, resolution=cfg.resolution)

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def cols(self) -> int:
        return int(self.data.shape[1])

    def world_to_cell(self, x: float, y: float) -> Optional[CellIndex]:
        if not (math.isfinite(x) and math.isfinite(y)):
            return None
        col = math.floor((x - self.origin[0]) / self.resolution + CELL_EPSILON)
        row = math.floor((y - self.origin[1]) / self.resolution + CELL_EPSILON)
        if 0 <= row < self.rows and 0 <= col < self.cols:
            return CellIndex(row, col)
        return None

    def cell_center(self, cell: CellIndex) -> Tuple[float, float]:
        return (
            self.origin[0] + (cell.col + 0.5) * self.resolution,
            self.origin[1] + (cell.row + 0.5) * self.resolution,
        )

    def cost_at(self, x: float, y: float) -> Optional[int]:
        cell = self.world_to_cell(x, y)
        if cell is None:
            return None
        return int(self.data[cell.row, cell.col])

    def snapshot(self) -> "WorldCostmap":
        return WorldCostmap(
            self.data.copy(), origin=self.origin, resolution=self.resolution, updates=self.updates
        )

    def __repr__(self) -> str:
        return (
            f"WorldCostmap({self.rows}x{self.cols} @ {self.resolution:g} m, "
            f"origin={self.origin}, updates={self.updates})"
        )


@dataclass
class CostmapUpdateStats:
    cells_updated: int = 0
    warmup: bool = False
    outside_world: bool = False


def crop_window(
    local: GridMap, robot_pose: Pose2D, cfg: CostmapConfig
) -> Tuple[float, float, float, float]:
    """Crop square about the robot, clamped to the local map and shrunk by the edge buffer."""
    half = cfg.crop_extent / 2.0
    x0 = max(robot_pose.x - half, local.origin.x)
    x1 = min(robot_pose.x + half, local.origin.x + local.cols * local.resolution)
    y0 = max(robot_pose.y - half, local.origin.y)
    y1 = min(robot_pose.y + half, local.origin.y + local.rows * local.resolution)
    return (x0 + cfg.edge_buffer, x1 - cfg.edge_buffer, y0 + cfg.edge_buffer, y1 - cfg.edge_buffer)


def apply_update(
    world: WorldCostmap, local: GridMap, robot_pose: Pose2D, cfg: CostmapConfig
) -> CostmapUpdateStats:
    stats = CostmapUpdateStats()
    world.updates += 1
    if world.updates <= cfg.warmup_messages:
        stats.warmup = True
        return stats

    x0, x1, y0, y1 = crop_window(local, robot_pose, cfg)
    if x1 < x0 or y1 < y0:
        return stats
    res = local.resolution
    xs = local.origin.x + (np.arange(local.cols) + 0.5) * res
    ys = local.origin.y + (np.arange(local.rows) + 0.5) * res
    col_sel = np.nonzero((xs >= x0) & (xs <= x1))[0]
    row_sel = np.nonzero((ys >= y0) & (ys <= y1))[0]
    if col_sel.size == 0 or row_sel.size == 0:
        return stats

    trav = local.layer(LAYER_TRAVERSABILITY)[np.ix_(row_sel, col_sel)]
    costs = traversability_to_costs(trav, cfg).reshape(-1)
    cx, cy = np.meshgrid(xs[col_sel], ys[row_sel])
    wc = np.floor((cx.reshape(-1) - world.origin[0]) / world.resolution + CELL_EPSILON)
    wr = np.floor((cy.reshape(-1) - world.origin[1]) / world.resolution + CELL_EPSILON)
    inside = (wr >= 0) & (wr < world.rows) & (wc >= 0) & (wc < world.cols)
    if not inside.any():
        stats.outside_world = True
        log(f"[costmap] local map at ({local.origin.x:.2f}, {local.origin.y:.2f}) lies outside the world")
        return stats

    known = inside & (costs >= 0)
    flat = (wr[known] * world.cols + wc[known]).astype(np.int64)
    values = costs[known]
    if flat.size == 0:
        return stats
    order = np.lexsort((values, flat))
    flat = flat[order]
    values = values[order]
    # Several local cells can land in one world cell; the highest cost wins.
    last = np.r_[flat[1:] != flat[:-1], True]
    world.data.reshape(-1)[flat[last]] = values[last]
    stats.cells_updated = int(np.count_nonzero(last))
    return stats


def sidecar_path(path: Path) -> Path:
    return Path(path).with_suffix(".json")


def render_costmap(world: WorldCostmap, path: Path) -> Path:
    """Write a P2 graymap (top row = highest y, unknown = 255) plus a JSON sidecar."""
    pixels = np.where(world.data < 0, PGM_UNKNOWN, world.data).astype(np.int64)
    write_pgm(Path(path), np.flipud(pixels))
    sidecar = sidecar_path(path)
    write_json(
        sidecar,
        {
            "image": Path(path).name,
            "origin": [world.origin[0], world.origin[1]],
            "resolution": world.resolution,
            "width": world.cols,
            "height": world.rows,
            "unknown": PGM_UNKNOWN,
            "updates": world.updates,
        },
    )
    return sidecar


def load_costmap(path: Path) -> WorldCostmap:
    pixels = np.flipud(read_pgm(Path(path)))
    meta = read_json(sidecar_path(path))
    try:
        origin = (float(meta["origin"][0]), float(meta["origin"][1]))
        resolution = float(meta["resolution"])
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ValueError(f"{sidecar_path(path)}: missing origin/resolution metadata") from exc
    data = np.where(pixels == PGM_UNKNOWN, COST_UNKNOWN, pixels)
    if data.max(initial=0) > 100:
        raise ValueError(f"{path}: pixel values above 100 are not costs")
    return WorldCostmap(data, origin=origin, resolution=resolution, updates=int(meta.get("updates", 0)))
