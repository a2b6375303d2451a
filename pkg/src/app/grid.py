"""Poses, cells, multi-layer grid maps and point-cloud helpers shared by every stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, NamedTuple, Optional, Tuple

import numpy as np

from .constants import (
    CELL_EPSILON,
    DEFAULT_MAP_RESOLUTION,
    DEFAULT_MAP_SIZE,
    DEFAULT_MOUNT_HEIGHT,
    DEFAULT_SENSOR_TILT,
    MAP_LAYERS,
)

FRAME_MAP = "map"
FRAME_SENSOR = "sensor"
TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap ``theta`` into (-pi, pi]."""
    wrapped = math.remainder(float(theta), TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    wrapped = np.remainder(theta + math.pi, TWO_PI) - math.pi
    return np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def distance_to(self, x: float, y: float) -> float:
        return math.hypot(x - self.x, y - self.y)


@dataclass(frozen=True)
class Twist:
    v: float = 0.0
    omega: float = 0.0


ZERO_TWIST = Twist(0.0, 0.0)


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class SensorMount:
    """Rigid offset of the range sensor from the base frame."""

    x: float = 0.0
    y: float = 0.0
    z: float = DEFAULT_MOUNT_HEIGHT
    tilt: float = DEFAULT_SENSOR_TILT


ZERO_MOUNT = SensorMount(0.0, 0.0, 0.0, 0.0)


def cells_for(size: float, resolution: float) -> int:
    return int(math.ceil(round(size / resolution, 9)))


class GridMap:
    """World-axis-aligned multi-layer grid; row follows +y and col follows +x."""

    def __init__(
        self,
        *,
        size_x: float = DEFAULT_MAP_SIZE,
        size_y: float = DEFAULT_MAP_SIZE,
        resolution: float = DEFAULT_MAP_RESOLUTION,
        origin: Optional[Pose2D] = None,
        layers: Iterable[str] = MAP_LAYERS,
    ) -> None:
        if resolution <= 0:
            raise ValueError(f"Invalid resolution={resolution!r}; expected > 0.")
        self.size_x = float(size_x)
        self.size_y = float(size_y)
        self.resolution = float(resolution)
        self.origin = origin or Pose2D(0.0, 0.0, 0.0)
        self.rows = cells_for(self.size_y, self.resolution)
        self.cols = cells_for(self.size_x, self.resolution)
        self.layers: Dict[str, np.ndarray] = {}
        for name in layers:
            self.add_layer(name)

    @classmethod
    def centered(
        cls,
        x: float,
        y: float,
        *,
        size: float = DEFAULT_MAP_SIZE,
        resolution: float = DEFAULT_MAP_RESOLUTION,
        layers: Iterable[str] = MAP_LAYERS,
    ) -> "GridMap":
        n = cells_for(size, resolution)
        half = n * resolution / 2.0
        return cls(
            size_x=size,
            size_y=size,
            resolution=resolution,
            origin=Pose2D(x - half, y - half),
            layers=layers,
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    def add_layer(self, name: str, fill: float = np.nan) -> np.ndarray:
        data = np.full(self.shape, fill, dtype=np.float64)
        self.layers[name] = data
        return data

    def layer(self, name: str) -> np.ndarray:
        try:
            return self.layers[name]
        except KeyError as exc:
            raise KeyError(f"GridMap has no layer {name!r}") from exc

    def set_layer(self, name: str, values: np.ndarray) -> None:
        data = np.ascontiguousarray(values, dtype=np.float64)
        if data.shape != self.shape:
            raise ValueError(f"Layer {name!r} has shape {data.shape}; expected {self.shape}.")
        self.layers[name] = data

    def known(self, name: str) -> np.ndarray:
        return np.isfinite(self.layer(name))

    def contains(self, cell: CellIndex) -> bool:
        return 0 <= cell.row < self.rows and 0 <= cell.col < self.cols

    def center(self) -> Tuple[float, float]:
        return (
            self.origin.x + self.cols * self.resolution / 2.0,
            self.origin.y + self.rows * self.resolution / 2.0,
        )

    def copy(self) -> "GridMap":
        clone = GridMap(
            size_x=self.size_x,
            size_y=self.size_y,
            resolution=self.resolution,
            origin=self.origin,
            layers=(),
        )
        clone.layers = {name: data.copy() for name, data in self.layers.items()}
        return clone

    def check_layers(self) -> None:
        for name, data in self.layers.items():
            if data.shape != self.shape:
                raise ValueError(f"Layer {name!r} has shape {data.shape}; expected {self.shape}.")

    def __repr__(self) -> str:
        return (
            f"GridMap({self.rows}x{self.cols} @ {self.resolution:g} m, "
            f"origin=({self.origin.x:g}, {self.origin.y:g}), layers={list(self.layers)})"
        )


def world_to_cell(grid: GridMap, x: float, y: float) -> Optional[CellIndex]:
    """Return the cell containing (x, y) or ``None`` when the point is outside the grid."""
    if not (math.isfinite(x) and math.isfinite(y)):
        return None
    col = math.floor((x - grid.origin.x) / grid.resolution + CELL_EPSILON)
    row = math.floor((y - grid.origin.y) / grid.resolution + CELL_EPSILON)
    if 0 <= row < grid.rows and 0 <= col < grid.cols:
        return CellIndex(row, col)
    return None


def world_to_cells(
    grid: GridMap, xs: np.ndarray, ys: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised ``world_to_cell``; returns (rows, cols, inside mask)."""
    with np.errstate(invalid="ignore"):
        cols = np.floor((np.asarray(xs) - grid.origin.x) / grid.resolution + CELL_EPSILON)
        rows = np.floor((np.asarray(ys) - grid.origin.y) / grid.resolution + CELL_EPSILON)
    inside = (
        np.isfinite(rows)
        & np.isfinite(cols)
        & (rows >= 0)
        & (rows < grid.rows)
        & (cols >= 0)
        & (cols < grid.cols)
    )
    rows = np.where(inside, rows, 0).astype(np.int64)
    cols = np.where(inside, cols, 0).astype(np.int64)
    return rows, cols, inside


def cell_center(grid: GridMap, cell: CellIndex) -> Tuple[float, float]:
    return (
        grid.origin.x + (cell.col + 0.5) * grid.resolution,
        grid.origin.y + (cell.row + 0.5) * grid.resolution,
    )


def recenter(grid: GridMap, x: float, y: float) -> Tuple[int, int]:
    """Shift the grid by whole cells so (x, y) sits in the central cell; returns (d_row, d_col)."""
    cx, cy = grid.center()
    d_col = int(round((x - cx) / grid.resolution))
    d_row = int(round((y - cy) / grid.resolution))
    if d_col == 0 and d_row == 0:
        return (0, 0)
    for name, data in grid.layers.items():
        shifted = np.full_like(data, np.nan)
        src_r = slice(max(d_row, 0), grid.rows + min(d_row, 0))
        dst_r = slice(max(-d_row, 0), grid.rows + min(-d_row, 0))
        src_c = slice(max(d_col, 0), grid.cols + min(d_col, 0))
        dst_c = slice(max(-d_col, 0), grid.cols + min(-d_col, 0))
        if abs(d_row) < grid.rows and abs(d_col) < grid.cols:
            shifted[dst_r, dst_c] = data[src_r, src_c]
        grid.layers[name] = shifted
    grid.origin = Pose2D(
        grid.origin.x + d_col * grid.resolution,
        grid.origin.y + d_row * grid.resolution,
    )
    return (d_row, d_col)


@dataclass
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    frame: str = FRAME_MAP

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def sanitized(self) -> "PointCloud":
        finite = np.all(np.isfinite(self.points), axis=1)
        return PointCloud(self.points[finite], self.frame)


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def transform_cloud(cloud: PointCloud, pose: Pose2D, mount: SensorMount = ZERO_MOUNT) -> PointCloud:
    """Move sensor-frame points into the map frame through the mount offset and base pose."""
    pts = cloud.points
    out = np.empty_like(pts)
    xy = pts[:, :2] + np.array([mount.x, mount.y])
    out[:, :2] = xy @ _rotation(pose.theta).T + np.array([pose.x, pose.y])
    out[:, 2] = pts[:, 2] + mount.z
    return PointCloud(out, FRAME_MAP)


def inverse_transform_cloud(
    cloud: PointCloud, pose: Pose2D, mount: SensorMount = ZERO_MOUNT
) -> PointCloud:
    pts = cloud.points
    out = np.empty_like(pts)
    xy = pts[:, :2] - np.array([pose.x, pose.y])
    out[:, :2] = xy @ _rotation(-pose.theta).T - np.array([mount.x, mount.y])
    out[:, 2] = pts[:, 2] - mount.z
    return PointCloud(out, FRAME_SENSOR)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Replace the points of each occupied voxel by their centroid."""
    if voxel <= 0:
        raise ValueError(f"Invalid voxel={voxel!r}; expected > 0.")
    if len(cloud) == 0:
        return PointCloud(cloud.points.copy(), cloud.frame)
    keys = np.floor(cloud.points / voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    count = np.bincount(inverse)
    centroids = np.column_stack(
        [np.bincount(inverse, weights=cloud.points[:, k]) / count for k in range(3)]
    )
    return PointCloud(centroids, cloud.frame)
