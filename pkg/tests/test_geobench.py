from __future__ import annotations

import math

import numpy as np
import pytest

from src.app.geobench import (
    GeometryError,
    TriangleMesh,
    _all_triangle_distances,
    _distances,
    allan_deviation,
    cloud_to_mesh_stats,
    delaunay_2_5d,
    load_series,
    load_xyz,
    log_spaced_taus,
    loglog_slope,
    noise_parameters,
    point_to_mesh_distance,
)
from src.app.grid import PointCloud

UNIT_TRIANGLE = TriangleMesh([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [[0, 1, 2]])


def _plane(rng, size=5.0, step=0.25):
    xs, ys = np.meshgrid(np.arange(0.0, size + 1e-9, step), np.arange(0.0, size + 1e-9, step))
    xy = np.column_stack([xs.reshape(-1), ys.reshape(-1)])
    xy = xy + rng.uniform(-0.02, 0.02, xy.shape)
    return PointCloud(np.column_stack([xy, np.zeros(len(xy))]))


@pytest.mark.parametrize(
    "point, expected",
    [
        ((0.2, 0.2, 0.5), 0.5),
        ((2.0, 0.0, 0.0), 1.0),
        ((0.5, -1.0, 0.0), 1.0),
        ((1.0, 1.0, 0.0), math.sqrt(0.5)),
        ((-1.0, -1.0, 0.0), math.sqrt(2.0)),
    ],
)
def test_point_to_triangle_regions(point, expected):
    assert point_to_mesh_distance(point, UNIT_TRIANGLE) == pytest.approx(expected)


def test_delaunay_lifts_heights(rng):
    cloud = _plane(rng)
    cloud.points[:, 2] = 0.1 * cloud.points[:, 0]
    mesh = delaunay_2_5d(cloud)

    assert len(mesh) > 0
    np.testing.assert_allclose(mesh.vertices[:, 2], 0.1 * mesh.vertices[:, 0])
    assert point_to_mesh_distance((2.0, 2.0, 0.2), mesh) == pytest.approx(0.0, abs=1e-9)


def test_degenerate_inputs_raise():
    with pytest.raises(GeometryError):
        delaunay_2_5d(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]))
    with pytest.raises(GeometryError):
        delaunay_2_5d(PointCloud([[float(k), 2.0 * k, 0.0] for k in range(10)]))
    with pytest.raises(ValueError):
        delaunay_2_5d(PointCloud([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    with pytest.raises(GeometryError):
        TriangleMesh([[0.0, 0.0, 0.0]], [[0, 1, 2]])


@pytest.mark.acceptance
def test_noisy_plane_deviation_matches_half_normal_mean(rng):
    mesh = delaunay_2_5d(_plane(rng))
    n = 5000
    xy = rng.uniform(0.5, 4.5, (n, 2))
    z = rng.normal(0.0, 0.02, n)
    stats = cloud_to_mesh_stats(PointCloud(np.column_stack([xy, z])), mesh)

    assert stats.count == n
    # E|z| = sigma * sqrt(2 / pi) = 1.596 cm for sigma = 2 cm.
    assert stats.mean == pytest.approx(2.0 * math.sqrt(2.0 / math.pi), abs=0.08)
    assert stats.max == pytest.approx(float(np.abs(z).max()) * 100.0, rel=1e-6)
    assert sum(stats.histogram) == n
    lows = [lo for lo, _, _ in stats.buckets()]
    assert lows[:3] == [0.0, 1.0, 2.0]


def test_nearest_centroid_search_matches_the_full_scan(rng):
    xy = rng.uniform(0.0, 4.0, (300, 2))
    z = 0.3 * np.sin(2.0 * xy[:, 0]) + rng.normal(0.0, 0.05, 300)
    mesh = delaunay_2_5d(PointCloud(np.column_stack([xy, z])))
    assert len(mesh) > 16
    near = np.column_stack([rng.uniform(-0.5, 4.5, (400, 2)), rng.uniform(-0.5, 0.5, 400)])
    far = np.array([[20.0, 20.0, 5.0], [-8.0, 2.0, -3.0], [2.0, 2.0, 12.0]])
    points = np.vstack([near, far])

    np.testing.assert_allclose(
        _distances(points, mesh), _all_triangle_distances(points, *mesh.corners()), rtol=0, atol=1e-12
    )


def test_stats_validation():
    cloud = PointCloud([[0.2, 0.2, 0.0]])
    with pytest.raises(ValueError):
        cloud_to_mesh_stats(cloud, UNIT_TRIANGLE, bucket_width=0.0)
    with pytest.raises(GeometryError):
        cloud_to_mesh_stats(cloud, TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3))))
    with pytest.raises(ValueError):
        cloud_to_mesh_stats(PointCloud([[np.nan, 0.0, 0.0]]), UNIT_TRIANGLE)


def test_tau_grid_and_skipped_taus():
    assert log_spaced_taus(100.0, 1) == []
    taus = log_spaced_taus(100.0, 10_000)
    assert taus[0] == pytest.approx(0.01)
    assert taus[-1] == pytest.approx(50.0)
    assert taus == sorted(set(taus))

    curve = allan_deviation(np.arange(10, dtype=float), 1.0, taus=[1.0, 5.0, 6.0])
    assert [tau for tau, _ in curve] == [1.0, 5.0]


def test_allan_of_a_constant_is_zero():
    curve = allan_deviation(np.full(100, 3.0), 10.0)
    assert curve
    assert all(dev == pytest.approx(0.0, abs=1e-12) for _, dev in curve)


@pytest.mark.acceptance
def test_white_noise_slope_and_density():
    rng = np.random.default_rng(11)
    curve = allan_deviation(rng.normal(0.0, 1.0, 100_000), 100.0)

    assert loglog_slope(curve, tau_max=1.0) == pytest.approx(-0.5, abs=0.05)
    params = noise_parameters(curve)
    # Per-sample sigma 1 at 100 Hz averages to 0.1 over one second.
    assert 0.07 < params["noise_density"] < 0.14
    assert params["bias_instability"] > 0


@pytest.mark.acceptance
def test_random_walk_slope():
    rng = np.random.default_rng(12)
    walk = np.cumsum(rng.normal(0.0, 1.0, 100_000))
    curve = allan_deviation(walk, 100.0)

    assert loglog_slope(curve, tau_min=0.1, tau_max=5.0) == pytest.approx(0.5, abs=0.1)


def test_slope_needs_two_points_and_empty_curve_has_no_parameters():
    with pytest.raises(ValueError):
        loglog_slope([(1.0, 0.5)])
    assert noise_parameters([]) == {"noise_density": None, "random_walk": None, "bias_instability": None}


def test_load_xyz_and_series(tmp_path):
    xyz = tmp_path / "cloud.xyz"
    xyz.write_text("# x y z\n0 0 0\n1,0,0.5  # trailing\n\n0 1 1\n", encoding="utf-8")
    cloud = load_xyz(xyz)
    np.testing.assert_allclose(cloud.points, [[0, 0, 0], [1, 0, 0.5], [0, 1, 1]])

    bad = tmp_path / "bad.xyz"
    bad.write_text("0 0\n", encoding="utf-8")
    with pytest.raises(ValueError, match="bad.xyz:1"):
        load_xyz(bad)

    series = tmp_path / "gyro.csv"
    series.write_text("t,gz\n0.00,0.1\n0.01,0.2\n", encoding="utf-8")
    np.testing.assert_allclose(load_series(series), [0.1, 0.2])

    with pytest.raises(OSError):
        load_series(tmp_path / "missing.csv")
