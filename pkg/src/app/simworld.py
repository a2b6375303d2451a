"""Synthetic world: heightfield terrain, raycast range sensing, slip-affected motion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    DEFAULT_FOV_MAX,
    DEFAULT_FOV_MIN,
    DEFAULT_MAX_RANGE,
    DEFAULT_MOUNT_HEIGHT,
    DEFAULT_RAY_STEP,
    DEFAULT_RAYS,
    DEFAULT_SENSOR_RATE,
    DEFAULT_SENSOR_TILT,
    RAY_TOLERANCE,
)
from .drive import DriveConfig, WheelState, forward_kinematics, integrate_odometry
from .grid import FRAME_MAP, ZERO_TWIST, PointCloud, Pose2D, Twist

if TYPE_CHECKING:
    from .config import ScenarioConfig
    from .engine import RunReport
    from .stores import AsciiGrid

TERRAIN_BASES = ("flat", "ramp", "file")
SCAN_PATTERNS = ("random", "grid")
CLOTH_LATTICE = 0.08
WORLD_BOUNDS = (-50.0, 50.0, -50.0, 50.0)


# --- Terrain ------------------------------------------------------------------


@dataclass(frozen=True)
class BoxFeature:
    """Axis-aligned block centred on (x, y) with extents w along x and h along y."""

    x: float
    y: float
    w: float
    h: float
    height: float

    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.x - self.w / 2, self.x + self.w / 2, self.y - self.h / 2, self.y + self.h / 2)


@dataclass(frozen=True)
class ClothFeature:
    """Rough patch: bilinear lattice noise bounded by +/- amplitude."""

    x: float
    y: float
    w: float
    h: float
    amplitude: float
    tag: str = "low-traversability"

    def bounds(self) -> Tuple[float, float, float, float]:
        return (self.x - self.w / 2, self.x + self.w / 2, self.y - self.h / 2, self.y + self.h / 2)


@dataclass(frozen=True)
class WallFeature:
    x0: float
    y0: float
    x1: float
    y1: float
    height: float
    thickness: float = 0.2

    def bounds(self) -> Tuple[float, float, float, float]:
        pad = self.thickness / 2
        return (
            min(self.x0, self.x1) - pad,
            max(self.x0, self.x1) + pad,
            min(self.y0, self.y1) - pad,
            max(self.y0, self.y1) + pad,
        )


Feature = Union[BoxFeature, ClothFeature, WallFeature]


@dataclass
class TerrainSpec:
    base: str = "flat"
    slope: float = 0.0
    heightfield: Optional["AsciiGrid"] = None
    features: Tuple[Feature, ...] = ()
    seed: int = 0
    bounds: Tuple[float, float, float, float] = WORLD_BOUNDS
    _lattices: Dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.base not in TERRAIN_BASES:
            raise ValueError(f"Invalid terrain base={self.base!r}; expected one of {', '.join(TERRAIN_BASES)}.")
        if self.base == "file" and self.heightfield is None:
            raise ValueError("Terrain base 'file' needs a heightfield grid.")
        self.features = tuple(self.features)
        x_min, x_max, y_min, y_max = self.bounds
        for feature in self.features:
            fx0, fx1, fy0, fy1 = feature.bounds()
            if fx0 < x_min or fx1 > x_max or fy0 < y_min or fy1 > y_max:
                raise ValueError(f"Terrain feature {feature!r} lies outside the world bounds.")
            if isinstance(feature, ClothFeature) and feature.amplitude < 0:
                raise ValueError(f"Invalid cloth amplitude={feature.amplitude!r}; expected >= 0.")

    def cloth_lattice(self, index: int, feature: ClothFeature) -> np.ndarray:
        lattice = self._lattices.get(index)
        if lattice is None:
            nx = int(math.ceil(feature.w / CLOTH_LATTICE)) + 1
            ny = int(math.ceil(feature.h / CLOTH_LATTICE)) + 1
            rng = np.random.default_rng([self.seed, index])
            lattice = rng.uniform(-feature.amplitude, feature.amplitude, size=(ny, nx))
            self._lattices[index] = lattice
        return lattice


def _base_height(terrain: TerrainSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if terrain.base == "flat":
        return np.zeros_like(x)
    if terrain.base == "ramp":
        return terrain.slope * x
    grid = terrain.heightfield
    assert grid is not None
    col = np.floor((x - grid.xllcorner) / grid.cellsize + 1e-9).astype(np.int64)
    row = np.floor((y - grid.yllcorner) / grid.cellsize + 1e-9).astype(np.int64)
    rows, cols = grid.values.shape
    inside = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
    out = np.zeros_like(x)
    values = grid.values[row[inside], col[inside]]
    out[inside] = np.where(np.isfinite(values), values, 0.0)
    return out


def _cloth_height(terrain: TerrainSpec, index: int, feature: ClothFeature, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    x0, x1, y0, y1 = feature.bounds()
    inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    out = np.zeros_like(x)
    if not inside.any():
        return out
    lattice = terrain.cloth_lattice(index, feature)
    u = (x[inside] - x0) / CLOTH_LATTICE
    v = (y[inside] - y0) / CLOTH_LATTICE
    i = np.clip(np.floor(u).astype(np.int64), 0, lattice.shape[1] - 2)
    j = np.clip(np.floor(v).astype(np.int64), 0, lattice.shape[0] - 2)
    fu = np.clip(u - i, 0.0, 1.0)
    fv = np.clip(v - j, 0.0, 1.0)
    out[inside] = (
        lattice[j, i] * (1 - fu) * (1 - fv)
        + lattice[j, i + 1] * fu * (1 - fv)
        + lattice[j + 1, i] * (1 - fu) * fv
        + lattice[j + 1, i + 1] * fu * fv
    )
    return out


def _wall_mask(feature: WallFeature, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    dx, dy = feature.x1 - feature.x0, feature.y1 - feature.y0
    length_sq = dx * dx + dy * dy
    if length_sq == 0.0:
        t = np.zeros_like(x)
    else:
        t = np.clip(((x - feature.x0) * dx + (y - feature.y0) * dy) / length_sq, 0.0, 1.0)
    distance = np.hypot(x - (feature.x0 + t * dx), y - (feature.y0 + t * dy))
    return distance <= feature.thickness / 2


def sample_height(terrain: TerrainSpec, x, y):
    """Base height plus the summed feature contributions; scalar in, scalar out."""
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    scalar = xs.ndim == 0 and ys.ndim == 0
    xs, ys = np.broadcast_arrays(np.atleast_1d(xs), np.atleast_1d(ys))
    height = _base_height(terrain, xs, ys)
    for index, feature in enumerate(terrain.features):
        if isinstance(feature, BoxFeature):
            x0, x1, y0, y1 = feature.bounds()
            height = height + np.where((xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1), feature.height, 0.0)
        elif isinstance(feature, ClothFeature):
            height = height + _cloth_height(terrain, index, feature, xs, ys)
        else:
            height = height + np.where(_wall_mask(feature, xs, ys), feature.height, 0.0)
    if scalar:
        return float(height[0])
    return height


# --- Range sensor -------------------------------------------------------------


@dataclass(frozen=True)
class SensorSpec:
    mount_height: float = DEFAULT_MOUNT_HEIGHT
    tilt: float = DEFAULT_SENSOR_TILT
    fov_min: float = DEFAULT_FOV_MIN
    fov_max: float = DEFAULT_FOV_MAX
    rays: int = DEFAULT_RAYS
    pattern: str = "random"
    max_range: float = DEFAULT_MAX_RANGE
    range_sigma: float = 0.0
    rate: float = DEFAULT_SENSOR_RATE
    step: float = DEFAULT_RAY_STEP

    def __post_init__(self) -> None:
        if self.rays < 1:
            raise ValueError(f"Invalid rays={self.rays!r}; expected >= 1.")
        if self.range_sigma < 0:
            raise ValueError(f"Invalid range_sigma={self.range_sigma!r}; expected >= 0.")
        if self.pattern not in SCAN_PATTERNS:
            raise ValueError(f"Invalid pattern={self.pattern!r}; expected 'random' or 'grid'.")
        if self.max_range <= 0 or self.step <= 0:
            raise ValueError("max_range and step must be positive.")
        if self.fov_min >= self.fov_max:
            raise ValueError("fov_min must be below fov_max.")


def sensor_ray_directions(sensor: SensorSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Unit ray directions in the base frame for an inverted, tilted sensor.

    Elevations inside the field of view become depressions once the sensor is inverted; the
    tilt then leans the sensor axis so that forward rays rise and rearward rays dip.
    """
    if sensor.pattern == "grid" or rng is None:
        n_az = max(int(round(math.sqrt(sensor.rays * 4))), 1)
        n_el = max(sensor.rays // n_az, 1)
        az, el = np.meshgrid(
            np.arange(n_az) * (2 * math.pi / n_az),
            np.linspace(sensor.fov_min, sensor.fov_max, n_el),
        )
        azimuth, elevation = az.reshape(-1), el.reshape(-1)
    else:
        azimuth = rng.uniform(0.0, 2 * math.pi, sensor.rays)
        elevation = rng.uniform(sensor.fov_min, sensor.fov_max, sensor.rays)
    # Inverted sensor: elevation above its equator points below the horizon.
    dx = np.cos(elevation) * np.cos(azimuth)
    dy = -np.cos(elevation) * np.sin(azimuth)
    dz = -np.sin(elevation)
    c, s = math.cos(-sensor.tilt), math.sin(-sensor.tilt)
    return np.column_stack([dx * c + dz * s, dy, -dx * s + dz * c])


def raycast_scan(
    terrain: TerrainSpec,
    sensor: SensorSpec,
    robot_pose: Pose2D,
    tick: int = 0,
    seed: int = 0,
    directions: Optional[np.ndarray] = None,
) -> PointCloud:
    """Cast one scan from the mounted sensor; returns world-frame hits (sky rays dropped)."""
    rng = np.random.default_rng([seed, tick])
    dirs = sensor_ray_directions(sensor, rng) if directions is None else np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if dirs.shape[0] == 0:
        return PointCloud(np.zeros((0, 3)), FRAME_MAP)
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.where(norms > 0, norms, 1.0)
    c, s = math.cos(robot_pose.theta), math.sin(robot_pose.theta)
    world = np.column_stack([dirs[:, 0] * c - dirs[:, 1] * s, dirs[:, 0] * s + dirs[:, 1] * c, dirs[:, 2]])
    origin = np.array(
        [robot_pose.x, robot_pose.y, sample_height(terrain, robot_pose.x, robot_pose.y) + sensor.mount_height]
    )

    steps = np.arange(1, int(math.ceil(sensor.max_range / sensor.step)) + 1) * sensor.step
    steps[-1] = min(steps[-1], sensor.max_range)
    hit_t = np.full(world.shape[0], np.nan)
    prev_t = np.zeros(world.shape[0])
    # March in chunks so long rays do not build one huge sample matrix.
    pending = np.arange(world.shape[0])
    chunk = 40
    for start in range(0, steps.size, chunk):
        if pending.size == 0:
            break
        ts = steps[start : start + chunk]
        pts = origin[None, None, :] + world[pending, None, :] * ts[None, :, None]
        below = pts[..., 2] <= sample_height(terrain, pts[..., 0], pts[..., 1])
        crossed = below.any(axis=1)
        first = np.argmax(below, axis=1)
        found = pending[crossed]
        hit_t[found] = ts[first[crossed]]
        prev_t[found] = np.where(first[crossed] > 0, ts[first[crossed] - 1], steps[start - 1] if start > 0 else 0.0)
        pending = pending[~crossed]

    hits = np.flatnonzero(np.isfinite(hit_t))
    lo, hi = prev_t[hits], hit_t[hits]
    d = world[hits]
    while hits.size and float(np.max(hi - lo)) > RAY_TOLERANCE / 4:
        mid = (lo + hi) / 2
        p = origin + d * mid[:, None]
        under = p[:, 2] <= sample_height(terrain, p[:, 0], p[:, 1])
        hi = np.where(under, mid, hi)
        lo = np.where(under, lo, mid)
    ranges = (lo + hi) / 2
    if sensor.range_sigma > 0 and hits.size:
        ranges = ranges + rng.normal(0.0, sensor.range_sigma, hits.size)
    points = origin + d * ranges[:, None]
    return PointCloud(points, FRAME_MAP)


# --- Robot motion -------------------------------------------------------------


@dataclass(frozen=True)
class MotionNoise:
    slip_left: float = 1.0
    slip_right: float = 1.0
    slip_sigma: float = 0.0
    drift_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.slip_left <= 0 or self.slip_right <= 0:
            raise ValueError("Slip factors must be > 0.")
        if self.slip_sigma < 0 or self.drift_rate < 0:
            raise ValueError("slip_sigma and drift_rate must be >= 0.")


@dataclass(frozen=True)
class RobotState:
    true_pose: Pose2D = field(default_factory=Pose2D)
    odom_pose: Pose2D = field(default_factory=Pose2D)
    twist: Twist = ZERO_TWIST
    wheels: Tuple[float, float] = (0.0, 0.0)
    drift: Tuple[float, float] = (0.0, 0.0)
    time: float = 0.0

    @classmethod
    def at(cls, pose: Pose2D) -> "RobotState":
        return cls(true_pose=pose, odom_pose=pose)

    @property
    def localization(self) -> Pose2D:
        """Pose feed seen by the navigation stack: truth plus accumulated drift."""
        return Pose2D(self.true_pose.x + self.drift[0], self.true_pose.y + self.drift[1], self.true_pose.theta)


def step_robot(
    state: RobotState,
    wheel_speeds: Sequence[float],
    dt: float,
    noise: Optional[MotionNoise] = None,
    cfg: Optional[DriveConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> RobotState:
    if dt <= 0:
        raise ValueError(f"Invalid dt={dt!r}; expected > 0.")
    noise = noise or MotionNoise()
    cfg = cfg or DriveConfig()
    v_left, v_right = float(wheel_speeds[0]), float(wheel_speeds[1])
    ds_left, ds_right = v_left * dt, v_right * dt

    k_left, k_right = noise.slip_left, noise.slip_right
    if noise.slip_sigma > 0 and rng is not None:
        jitter = rng.normal(0.0, noise.slip_sigma, 2)
        k_left = max(k_left * (1.0 + jitter[0]), 1e-3)
        k_right = max(k_right * (1.0 + jitter[1]), 1e-3)

    true_left, true_right = k_left * ds_left, k_right * ds_right
    true_pose = integrate_odometry(state.true_pose, true_left, true_right, cfg)
    odom_pose = integrate_odometry(state.odom_pose, ds_left, ds_right, cfg)
    twist = forward_kinematics(true_left / dt, true_right / dt, cfg)
    wheels = WheelState(*state.wheels)
    wheels.advance(ds_left, ds_right)

    drift = state.drift
    if noise.drift_rate > 0 and rng is not None:
        step = rng.normal(0.0, noise.drift_rate * math.sqrt(dt), 2)
        drift = (drift[0] + float(step[0]), drift[1] + float(step[1]))

    return replace(
        state,
        true_pose=true_pose,
        odom_pose=odom_pose,
        twist=twist,
        wheels=(wheels.arc_left, wheels.arc_right),
        drift=drift,
        time=state.time + dt,
    )


def run_loop(scenario: "ScenarioConfig") -> "RunReport":
    from .engine import NavigationLoop

    return NavigationLoop(scenario).run()
