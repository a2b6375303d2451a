from __future__ import annotations

import numpy as np
import pytest

from src.app.config import PerceptionSettings, ScenarioConfig, load_scenario
from src.app.constants import resolve_preset, resolve_rate
from src.app.simworld import ClothFeature, WallFeature, sample_height
from src.app.stores import write_ascii_grid


def test_default_divisors():
    config = load_scenario(None)
    assert config.divisors == {
        "sensor": 10,
        "map": 5,
        "publish": 50,
        "planner": 20,
        "decision": 10,
        "controller": 5,
        "drive": 2,
    }
    assert config.run.preset == "thesis"
    assert config.planner.w_t == 20.0
    assert config.energy.c_d == pytest.approx(150.0)


def test_flat_scenario_file(scenario_dir):
    config = load_scenario(scenario_dir / "flat.toml")

    assert config.run.seed == 7
    assert config.run.goal == (3.0, 0.0)
    assert config.sensor.rays == 1500
    # File values layer over the preset; untouched preset values survive.
    assert config.planner.search_margin == 4.0
    assert config.planner.w_t == 20.0
    assert config.source == scenario_dir / "flat.toml"


def test_offline_cloth_scenario(scenario_dir):
    config = load_scenario(scenario_dir / "cloth.toml")

    assert config.run.preset == "offline"
    assert config.planner.w_t == 8.0
    assert config.energy.p_drive == 0.0
    assert config.perception.min_known_fraction == 0.6
    assert len(config.terrain.features) == 1
    assert isinstance(config.terrain.features[0], ClothFeature)


def test_sealed_goal_ring(scenario_dir):
    config = load_scenario(scenario_dir / "sealed_goal.toml")
    assert len(config.terrain.features) == 4
    assert all(isinstance(f, WallFeature) for f in config.terrain.features)
    assert config.summary()["features"] == 4


@pytest.mark.parametrize(
    "data, fragment",
    [
        ({"flight": {}}, "Unknown section [flight]"),
        ({"run": {"speed": 1.0}}, "Unknown key 'speed' in [run]"),
        ({"planner": {"w_terrain": 3.0}}, "Unknown key 'w_terrain' in [planner]"),
        ({"terrain": {"features": [{"kind": "hill"}]}}, "kind='hill'"),
        ({"sensor": {"rate": 30.0}}, "sensor_rate"),
        ({"run": {"preset": "fast"}}, "preset"),
        ({"perception": {"min_known_fraction": 0.0}}, "min_known_fraction"),
        ({"terrain": {"features": [{"kind": "box", "x": 0.0}]}}, "terrain.features.box"),
    ],
)
def test_invalid_tables_raise_value_error(data, fragment):
    with pytest.raises(ValueError) as excinfo:
        ScenarioConfig.from_mapping(data)
    assert fragment in str(excinfo.value)


def test_file_errors(tmp_path):
    with pytest.raises(OSError):
        load_scenario(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[run\nseed = 1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="invalid scenario file"):
        load_scenario(broken)


def test_heightfield_path_is_relative_to_the_scenario(tmp_path):
    write_ascii_grid(tmp_path / "hills.asc", np.full((4, 5), 0.25), xllcorner=-1.0, yllcorner=-1.0, cellsize=0.5)
    scenario = tmp_path / "hills.toml"
    scenario.write_text('[terrain]\nbase = "file"\nfile = "hills.asc"\n', encoding="utf-8")

    config = load_scenario(scenario)
    assert config.terrain.heightfield.values.shape == (4, 5)
    assert config.terrain.heightfield.cellsize == 0.5


def test_overrides_win_over_file_values(scenario_dir):
    config = load_scenario(scenario_dir / "flat.toml")
    assert config.with_overrides() is config

    changed = config.with_overrides(seed=99, time_budget=2.0, goal=(1.0, 1.0))
    assert (changed.run.seed, changed.run.time_budget, changed.run.goal) == (99, 2.0, (1.0, 1.0))
    assert changed.sensor.rays == 1500
    assert config.run.seed == 7


def test_run_seed_drives_the_cloth_terrain(scenario_dir):
    config = load_scenario(scenario_dir / "cloth.toml")
    assert config.terrain.seed == config.run.seed == 3

    one = config.with_overrides(seed=1)
    other = config.with_overrides(seed=99)
    assert (one.terrain.seed, other.terrain.seed) == (1, 99)
    xs = np.linspace(1.6, 3.4, 19)
    ys = np.full_like(xs, 0.1)
    assert not np.allclose(sample_height(one.terrain, xs, ys), sample_height(other.terrain, xs, ys))
    np.testing.assert_array_equal(
        sample_height(one.terrain, xs, ys),
        sample_height(config.with_overrides(seed=1).terrain, xs, ys),
    )


def test_pinned_terrain_seed_ignores_the_run_seed():
    data = {
        "run": {"seed": 5},
        "terrain": {
            "seed": 42,
            "features": [{"kind": "cloth", "x": 0.0, "y": 0.0, "w": 1.0, "h": 1.0, "amplitude": 0.02}],
        },
    }
    config = ScenarioConfig.from_mapping(data)
    assert config.terrain.seed == 42
    assert config.with_overrides(seed=6).terrain.seed == 42


def test_rate_and_preset_helpers():
    assert resolve_rate("drive_rate", 50.0) == 2
    assert resolve_rate("map_rate", 20.0, base_rate=200.0) == 10
    with pytest.raises(ValueError):
        resolve_rate("planner_rate", 0.0)
    with pytest.raises(ValueError):
        resolve_rate("sensor_rate", 300.0)
    assert resolve_preset(None) == "thesis"
    assert resolve_preset("onboard") == "thesis"
    assert resolve_preset("THESIS") == "thesis"
    with pytest.raises(ValueError, match="thesis"):
        resolve_preset("fast")
    assert resolve_preset(" Offline ") == "offline"


def test_perception_models_follow_settings():
    settings = PerceptionSettings(alpha_d=0.002, sigma_t_sq=0.004)
    assert settings.noise.alpha_d == 0.002
    assert settings.inflation.sigma_t_sq == 0.004
    assert settings.fallback.resolution == settings.map_resolution


def test_voxel_filter_defaults_to_the_map_cell_and_accepts_the_offline_edge():
    assert PerceptionSettings().voxel_size == PerceptionSettings().map_resolution == 0.04
    config = ScenarioConfig.from_mapping({"perception": {"voxel_size": 0.5}})
    assert config.perception.voxel_size == 0.5
    assert config.perception.map_resolution == 0.04
