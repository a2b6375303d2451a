from __future__ import annotations

import csv

import numpy as np
import pytest

from src.app.stores import (
    read_ascii_grid,
    read_json,
    read_pgm,
    render_layer,
    sha256_file,
    write_ascii_grid,
    write_csv,
    write_json,
    write_pgm,
)


def test_ascii_grid_keeps_south_row_first(tmp_path):
    values = np.array([[0.1, 0.2, 0.3], [0.4, np.nan, 0.6]])
    path = tmp_path / "layer.asc"
    write_ascii_grid(path, values, xllcorner=-1.5, yllcorner=2.0, cellsize=0.25)

    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "ncols 3"
    assert lines[5] == "nodata_value -9999"
    # North row is written first.
    assert lines[6].split()[0] == "0.400000"

    grid = read_ascii_grid(path)
    np.testing.assert_allclose(grid.values, values, equal_nan=True)
    assert (grid.xllcorner, grid.yllcorner, grid.cellsize) == (-1.5, 2.0, 0.25)


def test_ascii_grid_errors(tmp_path):
    short = tmp_path / "short.asc"
    short.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n", encoding="utf-8")
    with pytest.raises(ValueError, match="expected 4 values"):
        read_ascii_grid(short)

    headless = tmp_path / "headless.asc"
    headless.write_text("ncols 2\n1 2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="missing"):
        read_ascii_grid(headless)

    with pytest.raises(OSError):
        read_ascii_grid(tmp_path / "nope.asc")


def test_pgm_write_and_read(tmp_path):
    pixels = np.array([[0, 128, 255], [10, 20, 30]])
    path = tmp_path / "map.pgm"
    write_pgm(path, pixels, comment="costmap")

    text = path.read_text(encoding="utf-8").splitlines()
    assert text[:4] == ["P2", "# costmap", "3 2", "255"]
    np.testing.assert_array_equal(read_pgm(path), pixels)

    with pytest.raises(ValueError):
        write_pgm(tmp_path / "bad.pgm", np.array([[300]]))
    (tmp_path / "p5.pgm").write_text("P5\n1 1\n255\n0\n", encoding="utf-8")
    with pytest.raises(ValueError, match="P2"):
        read_pgm(tmp_path / "p5.pgm")


def test_render_layer_scales_and_flips():
    layer = np.array([[0.0, 1.0], [2.0, np.nan]])
    pixels = render_layer(layer)

    np.testing.assert_array_equal(pixels, [[254, 255], [0, 127]])
    np.testing.assert_array_equal(render_layer(np.full((2, 2), np.nan)), np.full((2, 2), 255))
    np.testing.assert_array_equal(render_layer(np.ones((1, 2))), [[0, 0]])


def test_json_and_csv(tmp_path):
    write_json(tmp_path / "out" / "data.json", {"b": 1, "a": [1.5]})
    assert read_json(tmp_path / "out" / "data.json") == {"a": [1.5], "b": 1}

    (tmp_path / "list.json").write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ValueError, match="JSON object"):
        read_json(tmp_path / "list.json")

    write_csv(tmp_path / "rows.csv", ("a", "b", "c", "d"), [(1.0, None, True, float("nan"))])
    with (tmp_path / "rows.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows == [["a", "b", "c", "d"], ["1.000000", "", "1", "nan"]]


def test_sha256_matches_known_digest(tmp_path):
    path = tmp_path / "abc.txt"
    path.write_bytes(b"abc")
    assert sha256_file(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    with pytest.raises(OSError):
        sha256_file(tmp_path / "missing")
