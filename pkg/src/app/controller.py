"""Dynamic-window local controller: sample, roll out, score, select."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from .constants import (
    COST_LETHAL,
    COST_UNKNOWN,
    DEFAULT_A_MAX,
    DEFAULT_ALPHA_MAX,
    DEFAULT_CONTROL_RATE,
    DEFAULT_CRITIC_WEIGHTS,
    DEFAULT_HORIZON,
    DEFAULT_LOOKAHEAD,
    DEFAULT_MIN_CLEARANCE,
    DEFAULT_OMEGA_LIMIT,
    DEFAULT_ROLLOUT_STEP,
    DEFAULT_SAMPLES_OMEGA,
    DEFAULT_SAMPLES_V,
    DEFAULT_UNKNOWN_COST,
    DEFAULT_V_MAX,
    DEFAULT_V_MIN,
)
from .costmap import WorldCostmap
from .grid import Pose2D, Twist, normalize_angles

Point = Tuple[float, float]
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ControllerConfig:
    v_min: float = DEFAULT_V_MIN
    v_max: float = DEFAULT_V_MAX
    omega_min: float = -DEFAULT_OMEGA_LIMIT
    omega_max: float = DEFAULT_OMEGA_LIMIT
    a_max: float = DEFAULT_A_MAX
    alpha_max: float = DEFAULT_ALPHA_MAX
    dt_control: float = 1.0 / DEFAULT_CONTROL_RATE
    horizon: float = DEFAULT_HORIZON
    rollout_step: float = DEFAULT_ROLLOUT_STEP
    samples_v: int = DEFAULT_SAMPLES_V
    samples_omega: int = DEFAULT_SAMPLES_OMEGA
    w_path: float = DEFAULT_CRITIC_WEIGHTS[0]
    w_goal: float = DEFAULT_CRITIC_WEIGHTS[1]
    w_align: float = DEFAULT_CRITIC_WEIGHTS[2]
    w_obs: float = DEFAULT_CRITIC_WEIGHTS[3]
    min_clearance: float = DEFAULT_MIN_CLEARANCE
    lookahead: float = DEFAULT_LOOKAHEAD
    unknown_cost_value: int = DEFAULT_UNKNOWN_COST

    def __post_init__(self) -> None:
        if not (self.horizon >= self.rollout_step > 0):
            raise ValueError(
                f"Invalid horizon={self.horizon!r}/rollout_step={self.rollout_step!r}; "
                "expected horizon >= rollout_step > 0."
            )
        if self.samples_v < 2 or self.samples_omega < 2:
            raise ValueError("Controller sample counts must be >= 2.")
        if self.v_min > self.v_max or self.omega_min > self.omega_max:
            raise ValueError("Controller velocity limits are inverted.")
        if self.dt_control <= 0:
            raise ValueError(f"Invalid dt_control={self.dt_control!r}; expected > 0.")

    @property
    def steps(self) -> int:
        return max(int(round(self.horizon / self.rollout_step)), 1)


@dataclass
class Trajectory:
    command: Twist
    states: np.ndarray  # (steps + 1, 3) rows of x, y, theta

    @property
    def end(self) -> Pose2D:
        x, y, theta = self.states[-1]
        return Pose2D(float(x), float(y), float(theta))


def _window(value: float, rate: float, dt: float, lo: float, hi: float) -> Tuple[float, float]:
    low = max(value - rate * dt, lo)
    high = min(value + rate * dt, hi)
    if low > high:
        # Current value already outside the limits: fall back to the nearest limit.
        edge = min(max(value, lo), hi)
        return (edge, edge)
    return (low, high)


def dynamic_window(
    current: Twist, cfg: ControllerConfig
) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    return (
        _window(current.v, cfg.a_max, cfg.dt_control, cfg.v_min, cfg.v_max),
        _window(current.omega, cfg.alpha_max, cfg.dt_control, cfg.omega_min, cfg.omega_max),
    )


def _rollout_batch(
    v: np.ndarray, omega: np.ndarray, start: Pose2D, cfg: ControllerConfig
) -> np.ndarray:
    """Unicycle Euler integration for many commands; returns (S, steps + 1, 3)."""
    steps = cfg.steps
    dt = cfg.rollout_step
    states = np.empty((v.size, steps + 1, 3))
    x = np.full(v.size, start.x)
    y = np.full(v.size, start.y)
    theta = np.full(v.size, start.theta)
    states[:, 0, 0] = x
    states[:, 0, 1] = y
    states[:, 0, 2] = theta
    for k in range(1, steps + 1):
        x = x + v * np.cos(theta) * dt
        y = y + v * np.sin(theta) * dt
        theta = normalize_angles(theta + omega * dt)
        states[:, k, 0] = x
        states[:, k, 1] = y
        states[:, k, 2] = theta
    return states


def rollout(command: Twist, start: Pose2D, cfg: ControllerConfig) -> Trajectory:
    states = _rollout_batch(np.array([command.v]), np.array([command.omega]), start, cfg)
    return Trajectory(command=command, states=states[0])


class LocalCostView:
    """Costmap crop around the robot with lethal and clearance masks.

    Cells outside the world are treated as lethal; unknown cells read as the unknown cost.
    """

    def __init__(self, world: WorldCostmap, center: Point, radius: float, cfg: ControllerConfig) -> None:
        res = world.resolution
        pad = int(math.ceil(radius / res))
        cx = math.floor((center[0] - world.origin[0]) / res)
        cy = math.floor((center[1] - world.origin[1]) / res)
        c0, r0 = cx - pad, cy - pad
        size = 2 * pad + 1
        raw = np.full((size, size), COST_LETHAL, dtype=np.int16)
        wr0, wr1 = max(r0, 0), min(r0 + size, world.rows)
        wc0, wc1 = max(c0, 0), min(c0 + size, world.cols)
        if wr0 < wr1 and wc0 < wc1:
            raw[wr0 - r0 : wr1 - r0, wc0 - c0 : wc1 - c0] = world.data[wr0:wr1, wc0:wc1]
        cost = raw.astype(np.float64)
        cost[raw == COST_UNKNOWN] = float(cfg.unknown_cost_value)
        lethal = cost >= COST_LETHAL
        blocked = lethal.copy()
        if cfg.min_clearance > 0 and lethal.any():
            clearance = distance_transform_edt(~lethal) * res - res / 2.0
            blocked |= clearance < cfg.min_clearance
        self.origin = (world.origin[0] + c0 * res, world.origin[1] + r0 * res)
        self.resolution = res
        self.cost = cost
        self.blocked = blocked

    @classmethod
    def around(cls, world: WorldCostmap, pose: Pose2D, cfg: ControllerConfig) -> "LocalCostView":
        reach = max(abs(cfg.v_min), abs(cfg.v_max)) * cfg.horizon
        radius = max(cfg.lookahead, reach) + cfg.min_clearance + 2.0 * world.resolution
        return cls(world, (pose.x, pose.y), radius, cfg)

    def lookup(self, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(cost, blocked) for each query point."""
        cols = np.floor((np.asarray(xs) - self.origin[0]) / self.resolution).astype(np.int64)
        rows = np.floor((np.asarray(ys) - self.origin[1]) / self.resolution).astype(np.int64)
        rows_n, cols_n = self.cost.shape
        inside = (rows >= 0) & (rows < rows_n) & (cols >= 0) & (cols < cols_n)
        r = np.where(inside, rows, 0)
        c = np.where(inside, cols, 0)
        cost = np.where(inside, self.cost[r, c], float(COST_LETHAL))
        blocked = np.where(inside, self.blocked[r, c], True)
        return cost, blocked


def _critics(
    states: np.ndarray,
    path: np.ndarray,
    goal: Point,
    view: LocalCostView,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-trajectory (C_path, C_goal, C_align, C_obs, rejected) for (S, N, 3) states."""
    end = states[:, -1, :]
    diff = end[:, None, :2] - path[None, :, :]
    c_path = np.sqrt((diff * diff).sum(axis=2)).min(axis=1)
    gx = goal[0] - end[:, 0]
    gy = goal[1] - end[:, 1]
    c_goal = np.hypot(gx, gy)
    bearing = np.arctan2(gy, gx)
    c_align = np.abs(normalize_angles(end[:, 2] - bearing))
    c_align = np.where(c_goal < 1e-9, 0.0, c_align)
    future = states[:, 1:, :] if states.shape[1] > 1 else states
    cost, blocked = view.lookup(future[..., 0], future[..., 1])
    c_obs = cost.max(axis=1)
    rejected = blocked.any(axis=1)
    return c_path, c_goal, c_align, c_obs, rejected


def score(
    traj: Trajectory,
    global_path: Sequence[Point],
    goal: Point,
    local_cost: LocalCostView,
    cfg: ControllerConfig,
) -> Optional[float]:
    """Weighted critic sum, or ``None`` when a rollout state is lethal or too close to one."""
    if not global_path:
        raise ValueError("score needs a non-empty global path")
    path = np.asarray(global_path, dtype=np.float64).reshape(-1, 2)
    c_path, c_goal, c_align, c_obs, rejected = _critics(traj.states[None], path, goal, local_cost)
    if rejected[0]:
        return None
    return float(
        cfg.w_path * c_path[0]
        + cfg.w_goal * c_goal[0]
        + cfg.w_align * c_align[0]
        + cfg.w_obs * c_obs[0]
    )


def sample_commands(current: Twist, cfg: ControllerConfig) -> Tuple[np.ndarray, np.ndarray]:
    (v_lo, v_hi), (w_lo, w_hi) = dynamic_window(current, cfg)
    v = np.linspace(v_lo, v_hi, cfg.samples_v)
    w = np.linspace(w_lo, w_hi, cfg.samples_omega)
    v[np.abs(v) < 1e-12] = 0.0
    w[np.abs(w) < 1e-12] = 0.0
    vv, ww = np.meshgrid(v, w, indexing="ij")
    return vv.reshape(-1), ww.reshape(-1)


def select_command(
    current: Twist,
    pose: Pose2D,
    global_path: Sequence[Point],
    goal: Point,
    local_cost: LocalCostView,
    cfg: ControllerConfig,
) -> Optional[Twist]:
    """Best sampled command inside the dynamic window, or ``None`` when every sample is vetoed."""
    if not global_path:
        raise ValueError("select_command needs a non-empty global path")
    path = np.asarray(global_path, dtype=np.float64).reshape(-1, 2)
    v, w = sample_commands(current, cfg)
    states = _rollout_batch(v, w, pose, cfg)
    c_path, c_goal, c_align, c_obs, rejected = _critics(states, path, goal, local_cost)
    total = cfg.w_path * c_path + cfg.w_goal * c_goal + cfg.w_align * c_align + cfg.w_obs * c_obs
    total = np.where(rejected, np.inf, total)
    best = float(total.min())
    if not math.isfinite(best):
        return None
    candidates = np.nonzero(total <= best + TIE_TOLERANCE)[0]
    order = np.lexsort((np.abs(v[candidates] - current.v), np.abs(w[candidates])))
    pick = candidates[order[0]]
    return Twist(float(v[pick]), float(w[pick]))


def local_path(
    global_path: Sequence[Point], pose: Pose2D, cfg: ControllerConfig, spacing: float
) -> List[Point]:
    """Densify the global path and keep the stretch within ``lookahead`` ahead of the robot."""
    if not global_path:
        return []
    dense: List[Point] = [tuple(global_path[0])]  # type: ignore[list-item]
    for a, b in zip(global_path, global_path[1:]):
        length = math.hypot(b[0] - a[0], b[1] - a[1])
        count = max(int(math.ceil(length / spacing)), 1)
        for k in range(1, count + 1):
            f = k / count
            dense.append((a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f))
    nearest = min(range(len(dense)), key=lambda k: math.hypot(dense[k][0] - pose.x, dense[k][1] - pose.y))
    out = [dense[nearest]]
    travelled = 0.0
    for a, b in zip(dense[nearest:], dense[nearest + 1 :]):
        travelled += math.hypot(b[0] - a[0], b[1] - a[1])
        if travelled > cfg.lookahead + 1e-9:
            break
        out.append(b)
    return out


def carrot(path: Sequence[Point], goal: Point) -> Point:
    """Local goal: the last point of the lookahead stretch, or the goal itself when reached."""
    return tuple(path[-1]) if path else goal  # type: ignore[return-value]
