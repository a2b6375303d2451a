from __future__ import annotations

import numpy as np
import pytest

from src.app.grid import CellIndex, GridMap
from src.app.traversability import (
    CONV_SHAPES,
    CnnEstimator,
    CnnModel,
    FallbackParams,
    GeometricEstimator,
    WeightsFormatError,
    architecture_fingerprint,
    build_estimator,
    cnn_forward,
    extract_patch,
    fallback_traversability,
    fill_traversability_layer,
    load_weights,
    parameter_count,
    save_weights,
)


def _naive_forward(model: CnnModel, patch: np.ndarray) -> float:
    x = patch[None, :, :]
    for w, b in model.conv:
        channels, height, width = x.shape
        out = np.zeros((w.shape[0], height - 2, width - 2))
        for ky in range(3):
            for kx in range(3):
                shifted = x[:, ky : ky + height - 2, kx : kx + width - 2]
                out += np.einsum("fc,chw->fhw", w[:, :, ky, kx], shifted)
        out = np.maximum(out + b[:, None, None], 0.0)
        h2, w2 = out.shape[1] // 2, out.shape[2] // 2
        pooled = np.empty((out.shape[0], h2, w2))
        for i in range(h2):
            for j in range(w2):
                pooled[:, i, j] = out[:, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max(axis=(1, 2))
        x = pooled
    h = x.reshape(-1)
    for w, b in model.dense[:-1]:
        h = np.maximum(w @ h + b, 0.0)
    w, b = model.dense[-1]
    z = float((w @ h + b)[0])
    return 1.0 / (1.0 + np.exp(-z))


def _flat_grid(size: float = 5.0) -> GridMap:
    grid = GridMap.centered(0.0, 0.0, size=size, resolution=0.04)
    grid.layer("elevation")[:] = 0.2
    return grid


def test_parameter_count_matches_declared_layers():
    assert parameter_count() == 195265
    assert architecture_fingerprint().startswith("arch conv3x3:1>32 pool2")
    assert len(CONV_SHAPES) == 3


def test_zero_weights_give_one_half():
    assert cnn_forward(CnnModel.zeros(), np.zeros((48, 48))) == pytest.approx(0.5)


@pytest.mark.acceptance
def test_forward_matches_direct_convolution(rng):
    for _ in range(100):
        model = CnnModel.random(rng)
        patch = rng.normal(0.0, 0.1, (48, 48))
        assert cnn_forward(model, patch) == pytest.approx(_naive_forward(model, patch), abs=1e-5)


def test_forward_is_repeatable_and_strictly_inside_unit_interval(rng):
    model = CnnModel.random(rng, scale=40.0)
    patches = rng.normal(0.0, 1.0, (8, 48, 48))
    first = model.forward(patches)
    assert np.array_equal(first, model.forward(patches))
    assert np.all((first > 0.0) & (first < 1.0))


def test_forward_rejects_wrong_patch_shape():
    with pytest.raises(ValueError):
        CnnModel.zeros().forward(np.zeros((2, 40, 40)))


def test_model_parameters_are_read_only(rng):
    model = CnnModel.random(rng)
    with pytest.raises(ValueError):
        model.conv[0][0][0, 0, 0, 0] = 1.0


def test_weights_file_round_trip_and_mismatch(tmp_path, rng):
    model = CnnModel.random(rng)
    path = tmp_path / "weights.bin"
    save_weights(model, path)
    loaded = load_weights(path)
    assert np.array_equal(loaded.flat(), model.flat().astype(np.float32).astype(np.float64))

    raw = path.read_bytes()
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(raw[:-8])
    with pytest.raises(WeightsFormatError):
        load_weights(truncated)

    other = tmp_path / "other.bin"
    other.write_bytes(raw.replace(b"dense:64>1", b"dense:64>2", 1))
    with pytest.raises(WeightsFormatError):
        load_weights(other)

    with pytest.raises(OSError):
        load_weights(tmp_path / "missing.bin")


def test_fallback_scores_flat_tilted_and_steep_patches():
    params = FallbackParams()
    assert fallback_traversability(np.zeros((48, 48)), params) == pytest.approx(1.0)
    xs = np.arange(48) * 0.04
    gentle = np.tile(0.175 * xs, (48, 1))
    expected = 0.5 * (1.0 - 0.175 * 0.04 / 0.15)
    assert fallback_traversability(gentle, params) == pytest.approx(expected)
    steep = np.tile(0.5 * xs, (48, 1))
    assert fallback_traversability(steep, params) == 0.0
    ledge = np.zeros((48, 48))
    ledge[:, 30:] = 0.3
    assert fallback_traversability(ledge, params) == 0.0


def test_extract_patch_bounds_and_recentring():
    grid = _flat_grid()
    patch = extract_patch(grid, CellIndex(62, 62))
    assert patch.shape == (48, 48)
    assert np.all(patch == 0.0)
    assert extract_patch(grid, CellIndex(24, 100)) is not None
    assert extract_patch(grid, CellIndex(23, 62)) is None
    assert extract_patch(grid, CellIndex(62, 101)) is None


def test_extract_patch_needs_known_cells_unless_relaxed():
    grid = _flat_grid()
    grid.layer("elevation")[50, 50] = np.nan
    assert extract_patch(grid, CellIndex(62, 62)) is None
    relaxed = extract_patch(grid, CellIndex(62, 62), min_known_fraction=0.9)
    assert relaxed is not None and np.all(relaxed == 0.0)


def test_fill_layer_evaluates_interior_centres_only():
    grid = _flat_grid()
    every = [CellIndex(r, c) for r in range(grid.rows) for c in range(grid.cols)]
    evaluated = fill_traversability_layer(grid, GeometricEstimator(), every)
    assert evaluated == 77 * 77
    trav = grid.layer("traversability")
    assert trav[62, 62] == pytest.approx(1.0)
    assert np.isnan(trav[0, 0])
    assert np.count_nonzero(np.isfinite(trav)) == 77 * 77


def test_fill_layer_matches_single_patch_evaluation(rng):
    grid = GridMap.centered(0.0, 0.0, size=3.0, resolution=0.04)
    grid.layer("elevation")[:] = rng.normal(0.0, 0.01, grid.shape)
    estimator = CnnEstimator(CnnModel.random(rng))
    cells = [CellIndex(30, 30), CellIndex(40, 45), CellIndex(2, 2)]
    fill_traversability_layer(grid, estimator, cells, batch=2)
    for cell in cells[:2]:
        expected = cnn_forward(estimator.model, extract_patch(grid, cell))
        assert grid.layer("traversability")[cell] == pytest.approx(expected)
    assert np.isnan(grid.layer("traversability")[2, 2])


def test_small_grid_marks_everything_unknown():
    grid = GridMap.centered(0.0, 0.0, size=1.0, resolution=0.04)
    grid.layer("elevation")[:] = 0.0
    assert fill_traversability_layer(grid, GeometricEstimator(), [CellIndex(12, 12)]) == 0
    assert np.isnan(grid.layer("traversability")[12, 12])


def test_build_estimator_falls_back_without_weights(tmp_path, rng):
    assert build_estimator(None).name == "geometric"
    path = tmp_path / "w.bin"
    save_weights(CnnModel.random(rng), path)
    assert build_estimator(path).name == "cnn"
