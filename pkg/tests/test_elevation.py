from __future__ import annotations

import math
import time

import numpy as np
import pytest

from src.app.elevation import (
    ElevationMapper,
    InflationModel,
    SensorNoiseModel,
    inflate_variance,
    integrate_cloud,
    kalman_fuse_cell,
    mahalanobis_accept,
    measurement_variance,
)
from src.app.grid import CellIndex, GridMap, PointCloud, world_to_cell


def _grid() -> GridMap:
    return GridMap.centered(0.0, 0.0, size=1.0, resolution=0.1)


def test_measurement_variance_grows_with_squared_range():
    model = SensorNoiseModel()
    assert measurement_variance(model, 0.0) == 0.0
    assert measurement_variance(model, 2.0) == pytest.approx(0.008)
    with pytest.raises(ValueError):
        measurement_variance(model, -1.0)


def test_kalman_fusion_matches_closed_form_and_shrinks_variance():
    h, var = kalman_fuse_cell(1.0, 0.04, 2.0, 0.01)
    assert h == pytest.approx(1.8)
    assert var == pytest.approx(0.008)
    with pytest.raises(ValueError):
        kalman_fuse_cell(0.0, 0.0, 1.0, 0.01)


def test_sequential_fusion_equals_batch_fusion(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        heights = rng.normal(0.0, 0.5, n + 1)
        variances = rng.uniform(1e-4, 0.5, n + 1)
        h, var = heights[0], variances[0]
        for p, v in zip(heights[1:], variances[1:]):
            h_next, var_next = kalman_fuse_cell(h, var, p, v)
            assert var_next < var and var_next < v
            h, var = h_next, var_next
        precision = np.sum(1.0 / variances)
        assert var == pytest.approx(1.0 / precision, rel=1e-9, abs=1e-12)
        assert h == pytest.approx(np.sum(heights / variances) / precision, rel=1e-9, abs=1e-9)


def test_mahalanobis_gate():
    assert mahalanobis_accept(float("nan"), float("nan"), 5.0, 0.01, 2.5)
    assert mahalanobis_accept(0.0, 0.01, 0.2, 0.01, 2.5)
    assert not mahalanobis_accept(0.0, 0.0001, 1.0, 0.002, 2.5)


def test_integrate_cloud_initialises_and_fuses_in_order():
    grid = _grid()
    dirty = set()
    cloud = PointCloud([[0.05, 0.05, 0.0], [0.05, 0.05, 0.01], [0.35, -0.25, 0.2]])
    stats = integrate_cloud(grid, cloud, (0.0, 0.0, 1.0), SensorNoiseModel(), stamp=3.5, dirty=dirty)
    assert stats.points_accepted == 3
    assert stats.total == 3
    assert stats.cells_touched == 2

    cell = world_to_cell(grid, 0.05, 0.05)
    d0 = math.dist((0.05, 0.05, 0.0), (0.0, 0.0, 1.0))
    d1 = math.dist((0.05, 0.05, 0.01), (0.0, 0.0, 1.0))
    h, var = kalman_fuse_cell(0.0, 0.002 * d0 * d0, 0.01, 0.002 * d1 * d1)
    assert grid.layer("elevation")[cell] == pytest.approx(h)
    assert grid.layer("variance")[cell] == pytest.approx(var)
    assert grid.layer("time")[cell] == 3.5
    assert dirty == {cell, world_to_cell(grid, 0.35, -0.25)}


def test_outliers_are_rejected_and_self_returns_counted_out_of_bounds():
    grid = _grid()
    cell = world_to_cell(grid, 0.05, 0.05)
    grid.layer("elevation")[cell] = 0.0
    grid.layer("variance")[cell] = 1e-4
    cloud = PointCloud(
        [
            [0.05, 0.05, 1.0 - 1.0],
            [0.05, 0.05, -1.0],
            [0.01, 0.01, 0.95],
            [5.0, 5.0, 0.0],
            [np.nan, 0.0, 0.0],
        ]
    )
    stats = integrate_cloud(grid, cloud, (0.0, 0.0, 1.0), SensorNoiseModel())
    assert stats.points_accepted == 1
    assert stats.points_rejected_outlier == 1
    assert stats.points_out_of_bounds == 3
    assert grid.layer("elevation")[cell] == pytest.approx(0.0)


def test_empty_cloud_is_a_no_op():
    grid = _grid()
    stats = integrate_cloud(grid, PointCloud(), (0.0, 0.0, 1.0), SensorNoiseModel())
    assert stats.total == 0
    assert not grid.known("elevation").any()


def test_inflate_variance_only_touches_known_cells():
    grid = _grid()
    grid.layer("elevation")[0, 0] = 0.1
    grid.layer("variance")[0, 0] = 0.02
    assert inflate_variance(grid, 0.0, InflationModel()) == 0
    assert inflate_variance(grid, 2.0, InflationModel(sigma_t_sq=0.01)) == 1
    assert grid.layer("variance")[0, 0] == pytest.approx(0.04)
    assert np.isnan(grid.layer("variance")[1, 1])
    with pytest.raises(ValueError):
        inflate_variance(grid, -1.0, InflationModel())


def test_mapper_inflates_at_the_configured_rate():
    mapper = ElevationMapper(size=1.0, resolution=0.1, inflation=InflationModel(0.01, 0.1))
    mapper.grid.layer("elevation")[2, 2] = 0.0
    mapper.grid.layer("variance")[2, 2] = 0.001
    assert mapper.maybe_inflate(0.0) == 0
    assert mapper.maybe_inflate(5.0) == 0
    assert mapper.maybe_inflate(10.0) == 1
    assert mapper.grid.layer("variance")[2, 2] == pytest.approx(0.101)


def test_mapper_recenter_moves_dirty_cells_with_the_map():
    mapper = ElevationMapper(size=1.0, resolution=0.1, recenter_margin=0.2, voxel_size=0.0)
    mapper.update(PointCloud([[0.25, 0.05, 0.0]]), (0.0, 0.0, 1.0), 0.0)
    (cell,) = mapper.dirty
    assert not mapper.follow(0.1, 0.0)
    assert mapper.follow(0.3, 0.0)
    (moved,) = mapper.take_dirty()
    assert moved == CellIndex(cell.row, cell.col - 3)
    assert mapper.grid.layer("elevation")[moved] == pytest.approx(0.0)
    assert mapper.dirty == set()


def test_identical_points_shrink_variance_by_their_count():
    grid = _grid()
    cloud = PointCloud(np.tile([[0.15, -0.15, 0.3]], (10, 1)))
    stats = integrate_cloud(grid, cloud, (0.0, 0.0, 1.0), SensorNoiseModel())

    assert stats.points_accepted == 10
    cell = world_to_cell(grid, 0.15, -0.15)
    var_meas = 0.002 * math.dist((0.15, -0.15, 0.3), (0.0, 0.0, 1.0)) ** 2
    assert grid.layer("elevation")[cell] == pytest.approx(0.3)
    assert grid.layer("variance")[cell] == pytest.approx(var_meas / 10)


def test_split_cloud_fuses_like_a_single_cloud(rng):
    xy = rng.uniform(-0.45, 0.45, (400, 2))
    z = 0.1 + rng.normal(0.0, 0.005, 400)
    points = np.column_stack([xy, z])
    origin = (0.0, 0.0, 1.0)

    whole = _grid()
    integrate_cloud(whole, PointCloud(points), origin, SensorNoiseModel())
    split = _grid()
    first = integrate_cloud(split, PointCloud(points[:150]), origin, SensorNoiseModel())
    second = integrate_cloud(split, PointCloud(points[150:]), origin, SensorNoiseModel())

    assert first.total + second.total == 400
    for layer in ("elevation", "variance"):
        np.testing.assert_allclose(split.layer(layer), whole.layer(layer), rtol=1e-12, equal_nan=True)


@pytest.mark.acceptance
def test_integrating_ten_thousand_points_takes_under_50_ms(rng):
    half = 2.4
    xy = rng.uniform(-half, half, (10_000, 2))
    points = np.column_stack([xy, rng.normal(0.0, 0.01, 10_000)])
    cloud = PointCloud(points)
    origin = (0.0, 0.0, 0.45)
    integrate_cloud(GridMap.centered(0.0, 0.0), cloud, origin, SensorNoiseModel())

    best = math.inf
    for _ in range(3):
        grid = GridMap.centered(0.0, 0.0)
        started = time.perf_counter()
        stats = integrate_cloud(grid, cloud, origin, SensorNoiseModel())
        best = min(best, time.perf_counter() - started)
        assert stats.total == 10_000
    assert grid.shape == (125, 125)
    assert best < 0.05
