"""Energy-aware A* over the world costmap, line-of-sight pruning and path metrics."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .constants import (
    CELL_EPSILON,
    COST_LETHAL,
    COST_UNKNOWN,
    DEFAULT_P_DRIVE,
    DEFAULT_PLAN_TIMEOUT,
    DEFAULT_REPLAN_RATE,
    DEFAULT_TERRAIN_WEIGHT,
    DEFAULT_UNKNOWN_COST,
    DEFAULT_V_DRIVE,
    IMPASSABLE_COST,
    OFFLINE_TERRAIN_WEIGHT,
    resolve_preset,
)
from .costmap import WorldCostmap
from .grid import CellIndex

Point = Tuple[float, float]

CAUSE_START_LETHAL = "start_lethal"
CAUSE_GOAL_LETHAL = "goal_lethal"
CAUSE_NO_PATH = "no_path"
CAUSE_TIMEOUT = "timeout"
CAUSE_EXPANSION_LIMIT = "expansion_limit"
CAUSE_OUT_OF_BOUNDS = "out_of_bounds"

SQRT2 = math.sqrt(2.0)
# (d_row, d_col, length in cells)
NEIGHBORS = (
    (0, 1, 1.0),
    (1, 0, 1.0),
    (0, -1, 1.0),
    (-1, 0, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
)


@dataclass(frozen=True)
class EnergyModel:
    p_drive: float = DEFAULT_P_DRIVE
    v_drive: float = DEFAULT_V_DRIVE

    def __post_init__(self) -> None:
        if self.v_drive <= 0:
            raise ValueError(f"Invalid v_drive={self.v_drive!r}; expected > 0.")
        if self.p_drive < 0:
            raise ValueError(f"Invalid p_drive={self.p_drive!r}; expected >= 0.")

    @property
    def c_d(self) -> float:
        """Drive energy per metre (J/m)."""
        return self.p_drive / self.v_drive


@dataclass(frozen=True)
class PlannerConfig:
    w_t: float = DEFAULT_TERRAIN_WEIGHT
    lethal_threshold: int = IMPASSABLE_COST
    connectivity: int = 8
    replan_rate: float = DEFAULT_REPLAN_RATE
    timeout: float = DEFAULT_PLAN_TIMEOUT
    unknown_cost_value: int = DEFAULT_UNKNOWN_COST
    unknown_blocked: bool = False
    max_expansions: Optional[int] = None
    search_margin: Optional[float] = None

    def __post_init__(self) -> None:
        if self.w_t < 0:
            raise ValueError(f"Invalid w_t={self.w_t!r}; expected >= 0.")
        if self.connectivity != 8:
            raise ValueError(f"Invalid connectivity={self.connectivity!r}; only 8 is supported.")
        if self.timeout <= 0:
            raise ValueError(f"Invalid timeout={self.timeout!r}; expected > 0.")
        if not (0 <= self.unknown_cost_value <= COST_LETHAL):
            raise ValueError(
                f"Invalid unknown_cost_value={self.unknown_cost_value!r}; expected 0..100."
            )


def planner_preset(name: Optional[str]) -> Tuple[PlannerConfig, EnergyModel]:
    """``thesis`` (alias ``onboard``): w_t = 20 with drive energy; ``offline``: w_t = 8 without the energy term."""
    preset = resolve_preset(name)
    if preset == "offline":
        return PlannerConfig(w_t=OFFLINE_TERRAIN_WEIGHT), EnergyModel(p_drive=0.0)
    return PlannerConfig(w_t=DEFAULT_TERRAIN_WEIGHT), EnergyModel()


@dataclass
class PlanResult:
    waypoints: List[Point] = field(default_factory=list)
    g_total: float = 0.0
    distance_total: float = 0.0
    terrain_cost_total: float = 0.0
    pruned: bool = False
    expansions: int = 0
    cause: Optional[str] = None
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.cause is None

    @classmethod
    def failure(cls, cause: str, expansions: int = 0, wall_time: float = 0.0) -> "PlanResult":
        return cls(g_total=math.inf, cause=cause, expansions=expansions, wall_time=wall_time)


def edge_cost(d: float, cell_cost: float, cfg: PlannerConfig, energy: EnergyModel) -> float:
    return d * (1.0 + cfg.w_t * (cell_cost / 100.0) + energy.c_d)


def effective_costs(world: WorldCostmap, cfg: PlannerConfig) -> np.ndarray:
    """Float cost per cell with unknown resolved and blocked cells set to +inf."""
    costs = world.data.astype(np.float64)
    unknown = world.data == COST_UNKNOWN
    if cfg.unknown_blocked:
        costs[unknown] = math.inf
    else:
        costs[unknown] = float(cfg.unknown_cost_value)
    costs[costs >= COST_LETHAL] = math.inf
    return costs


def heuristic(cell: CellIndex, goal: CellIndex, resolution: float, energy: EnergyModel) -> float:
    """Straight-line metres priced at the cheapest per-metre multiplier, 1 + c_d.

    Never exceeds the remaining path cost, so A* stays optimal; it is tighter than plain
    Euclidean metres whenever the drive-energy term is on.
    """
    return math.hypot(cell.row - goal.row, cell.col - goal.col) * resolution * (1.0 + energy.c_d)


def _search_box(
    world: WorldCostmap, start: CellIndex, goal: CellIndex, margin: Optional[float]
) -> Tuple[int, int, int, int]:
    if margin is None:
        return (0, world.rows, 0, world.cols)
    pad = int(math.ceil(margin / world.resolution))
    r0 = max(min(start.row, goal.row) - pad, 0)
    r1 = min(max(start.row, goal.row) + pad + 1, world.rows)
    c0 = max(min(start.col, goal.col) - pad, 0)
    c1 = min(max(start.col, goal.col) + pad + 1, world.cols)
    return (r0, r1, c0, c1)


def plan(
    world: WorldCostmap,
    start: Point,
    goal: Point,
    cfg: Optional[PlannerConfig] = None,
    energy: Optional[EnergyModel] = None,
) -> PlanResult:
    """Minimum hybrid-cost 8-connected path between the cells holding ``start`` and ``goal``."""
    cfg = cfg or PlannerConfig()
    energy = energy or EnergyModel()
    started = time.perf_counter()
    s_cell = world.world_to_cell(*start)
    g_cell = world.world_to_cell(*goal)
    if s_cell is None or g_cell is None:
        return PlanResult.failure(CAUSE_OUT_OF_BOUNDS)
    costs = effective_costs(world, cfg)
    if math.isinf(costs[s_cell.row, s_cell.col]):
        return PlanResult.failure(CAUSE_START_LETHAL)
    if math.isinf(costs[g_cell.row, g_cell.col]):
        return PlanResult.failure(CAUSE_GOAL_LETHAL)
    if s_cell == g_cell:
        return PlanResult(waypoints=[world.cell_center(s_cell)], wall_time=time.perf_counter() - started)

    r0, r1, c0, c1 = _search_box(world, s_cell, g_cell, cfg.search_margin)
    box = costs[r0:r1, c0:c1]
    rows, cols = box.shape
    cell_cost = box.reshape(-1).tolist()
    res = world.resolution
    c_d = energy.c_d
    multiplier = [1.0 + cfg.w_t * (c / 100.0) + c_d for c in cell_cost]
    blocked = [math.isinf(c) for c in cell_cost]

    start_node = (s_cell.row - r0) * cols + (s_cell.col - c0)
    goal_node = (g_cell.row - r0) * cols + (g_cell.col - c0)
    gr, gc = divmod(goal_node, cols)

    # Inlined form of heuristic() over box-local node ids.
    h_scale = heuristic(CellIndex(0, 0), CellIndex(0, 1), res, energy)

    def remaining(node: int) -> float:
        r, c = divmod(node, cols)
        return math.hypot(r - gr, c - gc) * h_scale

    size = rows * cols
    closed = bytearray(size)
    best_g = [math.inf] * size
    parent = [-1] * size
    best_g[start_node] = 0.0
    h0 = remaining(start_node)
    seq = 0
    heap: List[Tuple[float, float, int, int, float, int]] = [(h0, h0, seq, start_node, 0.0, -1)]
    expansions = 0

    while heap:
        _, _, _, node, g, par = heapq.heappop(heap)
        if closed[node]:
            continue
        closed[node] = 1
        parent[node] = par
        expansions += 1
        if node == goal_node:
            break
        if cfg.max_expansions is not None and expansions >= cfg.max_expansions:
            return PlanResult.failure(
                CAUSE_EXPANSION_LIMIT, expansions, time.perf_counter() - started
            )
        if expansions % 256 == 0 and time.perf_counter() - started > cfg.timeout:
            return PlanResult.failure(CAUSE_TIMEOUT, expansions, time.perf_counter() - started)
        r, c = divmod(node, cols)
        for dr, dc, length in NEIGHBORS:
            nr, nc = r + dr, c + dc
            if nr < 0 or nr >= rows or nc < 0 or nc >= cols:
                continue
            nxt = nr * cols + nc
            if closed[nxt] or blocked[nxt]:
                continue
            # No squeezing diagonally past a blocked cardinal neighbour.
            if dr and dc and (blocked[r * cols + nc] or blocked[nr * cols + c]):
                continue
            g_new = g + (length * res) * multiplier[nxt]
            if g_new < best_g[nxt]:
                best_g[nxt] = g_new
                h = remaining(nxt)
                seq += 1
                heapq.heappush(heap, (g_new + h, h, seq, nxt, g_new, node))
    else:
        return PlanResult.failure(CAUSE_NO_PATH, expansions, time.perf_counter() - started)

    nodes: List[int] = []
    node = goal_node
    while node != -1:
        nodes.append(node)
        node = parent[node]
    nodes.reverse()

    waypoints: List[Point] = []
    distance = 0.0
    terrain = 0.0
    g_total = 0.0
    prev: Optional[Tuple[int, int]] = None
    for node in nodes:
        r, c = divmod(node, cols)
        waypoints.append(world.cell_center(CellIndex(r + r0, c + c0)))
        if prev is not None:
            d = (SQRT2 if (r != prev[0] and c != prev[1]) else 1.0) * res
            distance += d
            terrain += d * cfg.w_t * (cell_cost[node] / 100.0)
            g_total += d * multiplier[node]
        prev = (r, c)
    return PlanResult(
        waypoints=waypoints,
        g_total=g_total,
        distance_total=distance,
        terrain_cost_total=terrain,
        expansions=expansions,
        wall_time=time.perf_counter() - started,
    )


# --- Line rasterisation ---------------------------------------------------------


def supercover_cells(world: WorldCostmap, p0: Point, p1: Point) -> List[Tuple[CellIndex, float]]:
    """Every cell the segment touches, with the segment length inside it.

    Cells touched only at a corner are included with zero length. Indices may fall outside
    the world; callers decide how to treat them.
    """
    res = world.resolution
    gx0 = (p0[0] - world.origin[0]) / res
    gy0 = (p0[1] - world.origin[1]) / res
    gx1 = (p1[0] - world.origin[0]) / res
    gy1 = (p1[1] - world.origin[1]) / res
    col = math.floor(gx0 + CELL_EPSILON)
    row = math.floor(gy0 + CELL_EPSILON)
    dx, dy = gx1 - gx0, gy1 - gy0
    total = math.hypot(dx, dy) * res
    if total == 0.0:
        return [(CellIndex(row, col), 0.0)]

    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0:
        t_max_x = ((col + (1 if dx > 0 else 0)) - gx0) / dx
        t_delta_x = 1.0 / abs(dx)
    else:
        t_max_x = t_delta_x = math.inf
    if dy != 0:
        t_max_y = ((row + (1 if dy > 0 else 0)) - gy0) / dy
        t_delta_y = 1.0 / abs(dy)
    else:
        t_max_y = t_delta_y = math.inf

    out: List[Tuple[CellIndex, float]] = []
    t = 0.0
    while True:
        t_next = min(t_max_x, t_max_y, 1.0)
        out.append((CellIndex(row, col), max(t_next - t, 0.0) * total))
        if t_next >= 1.0 - 1e-12:
            break
        if abs(t_max_x - t_max_y) <= 1e-12:
            out.append((CellIndex(row, col + step_x), 0.0))
            out.append((CellIndex(row + step_y, col), 0.0))
            col += step_x
            row += step_y
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            col += step_x
            t_max_x += t_delta_x
        else:
            row += step_y
            t_max_y += t_delta_y
        t = t_next
    return out


def _inside(world: WorldCostmap, cell: CellIndex) -> bool:
    return 0 <= cell.row < world.rows and 0 <= cell.col < world.cols


def segment_visible(world: WorldCostmap, p0: Point, p1: Point, costs: np.ndarray) -> bool:
    for cell, _ in supercover_cells(world, p0, p1):
        if not _inside(world, cell) or math.isinf(costs[cell.row, cell.col]):
            return False
    return True


def segment_totals(
    world: WorldCostmap,
    p0: Point,
    p1: Point,
    costs: np.ndarray,
    cfg: PlannerConfig,
    energy: EnergyModel,
) -> Tuple[float, float, float]:
    """(distance, terrain cost, hybrid cost) integrated over the cells crossed."""
    distance = terrain = hybrid = 0.0
    for cell, length in supercover_cells(world, p0, p1):
        if length == 0.0:
            continue
        cost = costs[cell.row, cell.col] if _inside(world, cell) else math.inf
        distance += length
        terrain += length * cfg.w_t * (cost / 100.0)
        hybrid += edge_cost(length, cost, cfg, energy)
    return distance, terrain, hybrid


def prune_line_of_sight(
    result: PlanResult,
    world: WorldCostmap,
    cfg: Optional[PlannerConfig] = None,
    energy: Optional[EnergyModel] = None,
) -> PlanResult:
    """Drop interior waypoints whose neighbours see each other through non-lethal cells.

    A shortcut is taken only when its integrated hybrid cost does not exceed the cost of the
    waypoints it replaces. Totals of the returned plan are the integrated segment values.
    """
    cfg = cfg or PlannerConfig()
    energy = energy or EnergyModel()
    if not result.ok or len(result.waypoints) < 3:
        return replace(result, waypoints=list(result.waypoints), pruned=result.ok)
    costs = effective_costs(world, cfg)
    points = result.waypoints
    seg = [segment_totals(world, points[k], points[k + 1], costs, cfg, energy) for k in range(len(points) - 1)]
    prefix = [0.0]
    for _, _, hybrid in seg:
        prefix.append(prefix[-1] + hybrid)

    kept = [0]
    i = 0
    last = len(points) - 1
    while i < last:
        chosen = i + 1
        for j in range(last, i + 1, -1):
            if not segment_visible(world, points[i], points[j], costs):
                continue
            _, _, shortcut = segment_totals(world, points[i], points[j], costs, cfg, energy)
            if shortcut <= prefix[j] - prefix[i] + 1e-9:
                chosen = j
                break
        kept.append(chosen)
        i = chosen

    waypoints = [points[k] for k in kept]
    distance = terrain = hybrid = 0.0
    for a, b in zip(waypoints, waypoints[1:]):
        d, t, h = segment_totals(world, a, b, costs, cfg, energy)
        distance += d
        terrain += t
        hybrid += h
    return replace(
        result,
        waypoints=waypoints,
        g_total=hybrid,
        distance_total=distance,
        terrain_cost_total=terrain,
        pruned=True,
    )


def path_metrics(
    result: PlanResult, world: WorldCostmap, cfg: Optional[PlannerConfig] = None
) -> Tuple[float, float, int]:
    """(distance m, terrain cost, max cell cost) measured segment-wise over touched cells."""
    cfg = cfg or PlannerConfig()
    distance = 0.0
    terrain = 0.0
    max_cost = 0
    points = result.waypoints
    if len(points) == 1:
        cell = world.world_to_cell(*points[0])
        if cell is not None:
            max_cost = max(int(world.data[cell.row, cell.col]), 0)
    for a, b in zip(points, points[1:]):
        for cell, length in supercover_cells(world, a, b):
            if not _inside(world, cell):
                continue
            raw = int(world.data[cell.row, cell.col])
            cost = cfg.unknown_cost_value if raw == COST_UNKNOWN else raw
            max_cost = max(max_cost, raw)
            distance += length
            terrain += length * cfg.w_t * (cost / 100.0)
    return distance, terrain, max_cost


def cost_bands(result: PlanResult, world: WorldCostmap) -> Dict[str, int]:
    """Count distinct touched cells per cost band (free < 20, transition 20..80, hazard, lethal)."""
    bands = {"unknown": 0, "free": 0, "transition": 0, "hazard": 0, "lethal": 0}
    seen = set()
    points = result.waypoints
    pairs = list(zip(points, points[1:])) or [(p, p) for p in points]
    for a, b in pairs:
        for cell, _ in supercover_cells(world, a, b):
            if cell in seen or not _inside(world, cell):
                continue
            seen.add(cell)
            cost = int(world.data[cell.row, cell.col])
            if cost == COST_UNKNOWN:
                bands["unknown"] += 1
            elif cost < 20:
                bands["free"] += 1
            elif cost <= IMPASSABLE_COST:
                bands["transition"] += 1
            elif cost < COST_LETHAL:
                bands["hazard"] += 1
            else:
                bands["lethal"] += 1
    return bands
