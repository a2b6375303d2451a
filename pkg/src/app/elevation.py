"""Height and variance fusion for the robot-centric elevation map."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Set, Tuple

import numpy as np

from .constants import (
    DEFAULT_ALPHA_D,
    DEFAULT_INFLATION_RATE,
    DEFAULT_MAHALANOBIS_THRESHOLD,
    DEFAULT_MAP_RESOLUTION,
    DEFAULT_MAP_SIZE,
    DEFAULT_MIN_RANGE,
    DEFAULT_SIGMA_T_SQ,
    DEFAULT_VOXEL_SIZE,
    LAYER_ELEVATION,
    LAYER_TIME,
    LAYER_VARIANCE,
    VARIANCE_CAP,
)
from .grid import CellIndex, GridMap, PointCloud, recenter, voxel_downsample, world_to_cells


@dataclass(frozen=True)
class SensorNoiseModel:
    alpha_d: float = DEFAULT_ALPHA_D
    mahalanobis_threshold: float = DEFAULT_MAHALANOBIS_THRESHOLD
    min_range: float = DEFAULT_MIN_RANGE

    def __post_init__(self) -> None:
        if self.alpha_d <= 0:
            raise ValueError(f"Invalid alpha_d={self.alpha_d!r}; expected > 0.")
        if self.mahalanobis_threshold <= 0:
            raise ValueError(
                f"Invalid mahalanobis_threshold={self.mahalanobis_threshold!r}; expected > 0."
            )
        if self.min_range < 0:
            raise ValueError(f"Invalid min_range={self.min_range!r}; expected >= 0.")


@dataclass(frozen=True)
class InflationModel:
    sigma_t_sq: float = DEFAULT_SIGMA_T_SQ
    apply_rate: float = DEFAULT_INFLATION_RATE

    def __post_init__(self) -> None:
        if self.sigma_t_sq < 0:
            raise ValueError(f"Invalid sigma_t_sq={self.sigma_t_sq!r}; expected >= 0.")
        if self.apply_rate <= 0:
            raise ValueError(f"Invalid apply_rate={self.apply_rate!r}; expected > 0.")


@dataclass
class ElevationUpdateStats:
    points_accepted: int = 0
    points_rejected_outlier: int = 0
    # Includes self-returns below min_range and non-finite points.
    points_out_of_bounds: int = 0
    cells_touched: int = 0

    @property
    def total(self) -> int:
        return self.points_accepted + self.points_rejected_outlier + self.points_out_of_bounds

    def add(self, other: "ElevationUpdateStats") -> None:
        self.points_accepted += other.points_accepted
        self.points_rejected_outlier += other.points_rejected_outlier
        self.points_out_of_bounds += other.points_out_of_bounds
        self.cells_touched += other.cells_touched


def measurement_variance(model: SensorNoiseModel, distance: float) -> float:
    if distance < 0:
        raise ValueError(f"Invalid distance={distance!r}; expected >= 0.")
    return model.alpha_d * distance * distance


def kalman_fuse_cell(
    h_prior: float, var_prior: float, p_z: float, var_meas: float
) -> Tuple[float, float]:
    if var_prior <= 0 or var_meas <= 0:
        raise ValueError(
            f"Variances must be positive (var_prior={var_prior!r}, var_meas={var_meas!r})."
        )
    total = var_prior + var_meas
    h_post = (var_meas * h_prior + var_prior * p_z) / total
    var_post = var_prior * var_meas / total
    return h_post, var_post


def mahalanobis_accept(
    h_prior: float, var_prior: float, p_z: float, var_meas: float, threshold: float
) -> bool:
    """Unknown cells (NaN prior) always accept the first observation."""
    if not math.isfinite(h_prior):
        return True
    return abs(p_z - h_prior) / math.sqrt(var_prior + var_meas) <= threshold


def integrate_cloud(
    grid: GridMap,
    cloud: PointCloud,
    sensor_origin: Tuple[float, float, float],
    model: SensorNoiseModel,
    stamp: float = 0.0,
    dirty: Optional[Set[CellIndex]] = None,
) -> ElevationUpdateStats:
    """Fuse a map-frame cloud into the elevation and variance layers.

    Points sharing a cell are fused sequentially in input order: the cloud is bucketed by
    cell and processed in rounds, each round taking the next point of every bucket.
    """
    stats = ElevationUpdateStats()
    total = len(cloud)
    if total == 0:
        return stats

    pts = cloud.points
    finite = np.all(np.isfinite(pts), axis=1)
    safe = np.where(finite[:, None], pts, 0.0)
    distance = np.linalg.norm(safe - np.asarray(sensor_origin, dtype=np.float64), axis=1)
    var_meas = model.alpha_d * distance * distance
    rows, cols, inside = world_to_cells(grid, safe[:, 0], safe[:, 1])
    valid = finite & inside & (distance >= model.min_range) & (var_meas > 0)
    stats.points_out_of_bounds = int(total - np.count_nonzero(valid))

    idx = np.nonzero(valid)[0]
    if idx.size == 0:
        return stats
    flat = rows[idx] * grid.cols + cols[idx]
    order = np.argsort(flat, kind="stable")
    idx = idx[order]
    flat = flat[order]
    starts = np.r_[0, np.nonzero(np.diff(flat))[0] + 1]
    group_sizes = np.diff(np.r_[starts, flat.size])
    rank = np.arange(flat.size) - np.repeat(starts, group_sizes)

    elevation = grid.layer(LAYER_ELEVATION).reshape(-1)
    variance = grid.layer(LAYER_VARIANCE).reshape(-1)
    touched = np.zeros(flat.size, dtype=bool)
    threshold = model.mahalanobis_threshold

    for r in range(int(rank.max()) + 1):
        sel = rank == r
        cells = flat[sel]
        pz = safe[idx[sel], 2]
        vm = var_meas[idx[sel]]
        h = elevation[cells]
        v = variance[cells]
        unknown = ~np.isfinite(h)
        with np.errstate(invalid="ignore"):
            ratio = np.abs(pz - h) / np.sqrt(v + vm)
        accept = unknown | (ratio <= threshold)
        fuse = accept & ~unknown
        total_var = v + vm
        h_new = np.where(fuse, (vm * h + v * pz) / np.where(fuse, total_var, 1.0), pz)
        v_new = np.where(fuse, v * vm / np.where(fuse, total_var, 1.0), vm)
        elevation[cells[accept]] = h_new[accept]
        variance[cells[accept]] = v_new[accept]
        touched[np.nonzero(sel)[0][accept]] = True
        stats.points_accepted += int(np.count_nonzero(accept))
        stats.points_rejected_outlier += int(np.count_nonzero(~accept))

    touched_cells = np.unique(flat[touched])
    stats.cells_touched = int(touched_cells.size)
    grid.layer(LAYER_TIME).reshape(-1)[touched_cells] = stamp
    if dirty is not None:
        for cell in touched_cells.tolist():
            dirty.add(CellIndex(cell // grid.cols, cell % grid.cols))
    return stats


def inflate_variance(grid: GridMap, dt: float, model: InflationModel) -> int:
    if dt < 0:
        raise ValueError(f"Invalid dt={dt!r}; expected >= 0.")
    if dt == 0 or model.sigma_t_sq == 0:
        return 0
    variance = grid.layer(LAYER_VARIANCE)
    known = np.isfinite(grid.layer(LAYER_ELEVATION)) & np.isfinite(variance)
    variance[known] = np.minimum(variance[known] + model.sigma_t_sq * dt, VARIANCE_CAP)
    return int(np.count_nonzero(known))


class ElevationMapper:
    """Robot-centric mapping pipeline: recenter, downsample, fuse, inflate."""

    def __init__(
        self,
        *,
        x: float = 0.0,
        y: float = 0.0,
        size: float = DEFAULT_MAP_SIZE,
        resolution: float = DEFAULT_MAP_RESOLUTION,
        noise: Optional[SensorNoiseModel] = None,
        inflation: Optional[InflationModel] = None,
        voxel_size: float = DEFAULT_VOXEL_SIZE,
        recenter_margin: float = 0.5,
    ) -> None:
        self.grid = GridMap.centered(x, y, size=size, resolution=resolution)
        self.noise = noise or SensorNoiseModel()
        self.inflation = inflation or InflationModel()
        self.voxel_size = voxel_size
        self.recenter_margin = recenter_margin
        self.dirty: Set[CellIndex] = set()
        self.totals = ElevationUpdateStats()
        self.points_in = 0
        self.points_kept = 0
        self._last_inflation: Optional[float] = None

    def follow(self, x: float, y: float) -> bool:
        cx, cy = self.grid.center()
        if max(abs(x - cx), abs(y - cy)) <= self.recenter_margin:
            return False
        d_row, d_col = recenter(self.grid, x, y)
        if self.dirty:
            shifted = set()
            for cell in self.dirty:
                moved = CellIndex(cell.row - d_row, cell.col - d_col)
                if self.grid.contains(moved):
                    shifted.add(moved)
            self.dirty = shifted
        return True

    def update(
        self,
        cloud: PointCloud,
        sensor_origin: Tuple[float, float, float],
        stamp: float,
    ) -> ElevationUpdateStats:
        self.points_in += len(cloud)
        if self.voxel_size > 0 and len(cloud):
            cloud = voxel_downsample(cloud.sanitized(), self.voxel_size)
        self.points_kept += len(cloud)
        stats = integrate_cloud(
            self.grid, cloud, sensor_origin, self.noise, stamp=stamp, dirty=self.dirty
        )
        self.totals.add(stats)
        return stats

    def maybe_inflate(self, stamp: float) -> int:
        if self._last_inflation is None:
            self._last_inflation = stamp
            return 0
        elapsed = stamp - self._last_inflation
        if elapsed + 1e-9 < 1.0 / self.inflation.apply_rate:
            return 0
        self._last_inflation = stamp
        return inflate_variance(self.grid, elapsed, self.inflation)

    def take_dirty(self) -> Set[CellIndex]:
        dirty, self.dirty = self.dirty, set()
        return dirty

    @property
    def reduction(self) -> float:
        if self.points_in == 0:
            return 0.0
        return 100.0 * (1.0 - self.points_kept / self.points_in)
