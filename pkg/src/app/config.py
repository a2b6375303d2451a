from __future__ import annotations

import dataclasses

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from .constants import (
    DEFAULT_ALPHA_D,
    DEFAULT_ARRIVAL_TOLERANCE,
    DEFAULT_BASE_RATE,
    DEFAULT_DECISION_RATE,
    DEFAULT_INFLATION_RATE,
    DEFAULT_MAHALANOBIS_THRESHOLD,
    DEFAULT_MAP_RATE,
    DEFAULT_MAP_RESOLUTION,
    DEFAULT_MAP_SIZE,
    DEFAULT_MAX_ROUGHNESS,
    DEFAULT_MAX_SLOPE,
    DEFAULT_MAX_STEP,
    DEFAULT_MIN_RANGE,
    DEFAULT_SEED,
    DEFAULT_SIGMA_T_SQ,
    DEFAULT_TIME_BUDGET,
    DEFAULT_VOXEL_SIZE,
    resolve_preset,
    resolve_rate,
)
from .controller import ControllerConfig
from .costmap import CostmapConfig
from .decision import AerialModel
from .drive import DriveConfig
from .elevation import InflationModel, SensorNoiseModel
from .grid import Pose2D
from .planner import EnergyModel, PlannerConfig, planner_preset
from .simworld import BoxFeature, ClothFeature, MotionNoise, SensorSpec, TerrainSpec, WallFeature
from .stores import read_ascii_grid
from .traversability import FallbackParams

SECTIONS = (
    "run",
    "terrain",
    "sensor",
    "motion",
    "drive",
    "energy",
    "perception",
    "costmap",
    "planner",
    "controller",
    "aerial",
)
FEATURE_KINDS = {"box": BoxFeature, "cloth": ClothFeature, "wall": WallFeature}


@dataclasses.dataclass(frozen=True)
class RunSettings:
    seed: int = DEFAULT_SEED
    start: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    goal: Tuple[float, float] = (3.0, 0.0)
    time_budget: float = DEFAULT_TIME_BUDGET
    base_rate: float = DEFAULT_BASE_RATE
    map_rate: float = DEFAULT_MAP_RATE
    decision_rate: float = DEFAULT_DECISION_RATE
    arrival_tolerance: float = DEFAULT_ARRIVAL_TOLERANCE
    stop_on_recommendation: bool = True
    preset: str = "thesis"

    @property
    def start_pose(self) -> Pose2D:
        return Pose2D(*self.start)


@dataclasses.dataclass(frozen=True)
class PerceptionSettings:
    map_size: float = DEFAULT_MAP_SIZE
    map_resolution: float = DEFAULT_MAP_RESOLUTION
    voxel_size: float = DEFAULT_VOXEL_SIZE
    recenter_margin: float = 0.5
    min_known_fraction: float = 1.0
    weights: Optional[str] = None
    max_slope: float = DEFAULT_MAX_SLOPE
    max_roughness: float = DEFAULT_MAX_ROUGHNESS
    max_step: float = DEFAULT_MAX_STEP
    alpha_d: float = DEFAULT_ALPHA_D
    mahalanobis_threshold: float = DEFAULT_MAHALANOBIS_THRESHOLD
    min_range: float = DEFAULT_MIN_RANGE
    sigma_t_sq: float = DEFAULT_SIGMA_T_SQ
    apply_rate: float = DEFAULT_INFLATION_RATE

    def __post_init__(self) -> None:
        if not (0.0 < self.min_known_fraction <= 1.0):
            raise ValueError(
                f"Invalid min_known_fraction={self.min_known_fraction!r}; expected 0 < f <= 1."
            )

    @property
    def noise(self) -> SensorNoiseModel:
        return SensorNoiseModel(self.alpha_d, self.mahalanobis_threshold, self.min_range)

    @property
    def inflation(self) -> InflationModel:
        return InflationModel(self.sigma_t_sq, self.apply_rate)

    @property
    def fallback(self) -> FallbackParams:
        return FallbackParams(self.max_slope, self.max_roughness, self.max_step, self.map_resolution)


def _build(cls: Any, table: Mapping[str, Any], section: str, **overrides: Any) -> Any:
    names = [f.name for f in dataclasses.fields(cls) if f.init]
    unknown = sorted(set(table) - set(names))
    if unknown:
        raise ValueError(
            f"Unknown key {unknown[0]!r} in [{section}]; expected one of {', '.join(names)}."
        )
    values: Dict[str, Any] = {}
    for key, value in table.items():
        values[key] = tuple(value) if isinstance(value, list) else value
    values.update(overrides)
    try:
        return cls(**values)
    except TypeError as exc:
        raise ValueError(f"Invalid [{section}] table: {exc}") from exc


def _merge(default: Any, table: Mapping[str, Any], section: str) -> Any:
    """Layer a file table over a preset instance."""
    base = {f.name: getattr(default, f.name) for f in dataclasses.fields(default) if f.init}
    names = set(base)
    unknown = sorted(set(table) - names)
    if unknown:
        raise ValueError(
            f"Unknown key {unknown[0]!r} in [{section}]; expected one of {', '.join(sorted(names))}."
        )
    return _build(type(default), {**base, **dict(table)}, section)


def _terrain(table: Mapping[str, Any], base_dir: Path) -> TerrainSpec:
    data = dict(table)
    raw_features = data.pop("features", [])
    heightfield = None
    source = data.pop("file", None)
    if source is not None:
        heightfield = read_ascii_grid(base_dir / source)
    features = []
    for index, raw in enumerate(raw_features):
        entry = dict(raw)
        kind = entry.pop("kind", None)
        if kind not in FEATURE_KINDS:
            raise ValueError(
                f"Invalid terrain feature #{index} kind={kind!r}; expected box, cloth or wall."
            )
        features.append(_build(FEATURE_KINDS[kind], entry, f"terrain.features.{kind}"))
    return _build(TerrainSpec, data, "terrain", heightfield=heightfield, features=tuple(features))


class ScenarioConfig:
    """Every knob of a closed-loop run, resolved from defaults, a TOML file and overrides."""

    def __init__(
        self,
        *,
        run: Optional[RunSettings] = None,
        terrain: Optional[TerrainSpec] = None,
        sensor: Optional[SensorSpec] = None,
        motion: Optional[MotionNoise] = None,
        drive: Optional[DriveConfig] = None,
        energy: Optional[EnergyModel] = None,
        perception: Optional[PerceptionSettings] = None,
        costmap: Optional[CostmapConfig] = None,
        planner: Optional[PlannerConfig] = None,
        controller: Optional[ControllerConfig] = None,
        aerial: Optional[AerialModel] = None,
        source: Optional[Path] = None,
        terrain_seed_pinned: bool = False,
    ) -> None:
        self.run = run or RunSettings()
        preset_planner, preset_energy = planner_preset(self.run.preset)
        terrain = terrain or TerrainSpec()
        # An unpinned terrain draws its procedural features from the run seed.
        if not terrain_seed_pinned and terrain.seed != self.run.seed:
            terrain = dataclasses.replace(terrain, seed=self.run.seed)
        self.terrain = terrain
        self.terrain_seed_pinned = terrain_seed_pinned
        self.sensor = sensor or SensorSpec()
        self.motion = motion or MotionNoise()
        self.drive = drive or DriveConfig()
        self.energy = energy or preset_energy
        self.perception = perception or PerceptionSettings()
        self.costmap = costmap or CostmapConfig()
        self.planner = planner or preset_planner
        self.controller = controller or ControllerConfig()
        self.aerial = aerial or AerialModel()
        self.source = source
        self.divisors = self._resolve_divisors()

    def _resolve_divisors(self) -> Dict[str, int]:
        base = self.run.base_rate
        rates = {
            "sensor": self.sensor.rate,
            "map": self.run.map_rate,
            "publish": self.costmap.publish_rate,
            "planner": self.planner.replan_rate,
            "controller": 1.0 / self.controller.dt_control,
            "drive": self.drive.rate,
            "decision": self.run.decision_rate,
        }
        return {name: resolve_rate(f"{name}_rate", rate, base) for name, rate in rates.items()}

    @classmethod
    def from_mapping(
        cls, data: Mapping[str, Any], base_dir: Optional[Path] = None
    ) -> "ScenarioConfig":
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ValueError(
                f"Unknown section [{unknown[0]}]; expected one of {', '.join(SECTIONS)}."
            )
        base_dir = base_dir or Path(".")
        run_table = dict(data.get("run", {}))
        if "preset" in run_table:
            run_table["preset"] = resolve_preset(run_table["preset"])
        run = _build(RunSettings, run_table, "run")
        preset_planner, preset_energy = planner_preset(run.preset)
        perception = _build(PerceptionSettings, data.get("perception", {}), "perception")
        if perception.weights is not None:
            perception = dataclasses.replace(
                perception, weights=str((base_dir / perception.weights).resolve())
            )
        terrain_table = data.get("terrain", {})
        return cls(
            run=run,
            terrain=_terrain(terrain_table, base_dir),
            sensor=_build(SensorSpec, data.get("sensor", {}), "sensor"),
            motion=_build(MotionNoise, data.get("motion", {}), "motion"),
            drive=_build(DriveConfig, data.get("drive", {}), "drive"),
            energy=_merge(preset_energy, data.get("energy", {}), "energy"),
            perception=perception,
            costmap=_build(CostmapConfig, data.get("costmap", {}), "costmap"),
            planner=_merge(preset_planner, data.get("planner", {}), "planner"),
            controller=_build(ControllerConfig, data.get("controller", {}), "controller"),
            aerial=_build(AerialModel, data.get("aerial", {}), "aerial"),
            terrain_seed_pinned="seed" in terrain_table,
        )

    @classmethod
    def from_file(cls, path: Path) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise OSError(f"Unable to read scenario {path}: {exc}") from exc
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ValueError(f"{path}: invalid scenario file ({exc})") from exc
        config = cls.from_mapping(data, base_dir=path.parent)
        config.source = path
        return config

    def with_overrides(
        self,
        *,
        seed: Optional[int] = None,
        time_budget: Optional[float] = None,
        goal: Optional[Tuple[float, float]] = None,
    ) -> "ScenarioConfig":
        """Command-line values win over file values."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if time_budget is not None:
            changes["time_budget"] = time_budget
        if goal is not None:
            changes["goal"] = tuple(goal)
        if not changes:
            return self
        return ScenarioConfig(
            run=dataclasses.replace(self.run, **changes),
            terrain=self.terrain,
            sensor=self.sensor,
            motion=self.motion,
            drive=self.drive,
            energy=self.energy,
            perception=self.perception,
            costmap=self.costmap,
            planner=self.planner,
            controller=self.controller,
            aerial=self.aerial,
            source=self.source,
            terrain_seed_pinned=self.terrain_seed_pinned,
        )

    def summary(self) -> Dict[str, Any]:
        return {
            "seed": self.run.seed,
            "preset": self.run.preset,
            "start": list(self.run.start),
            "goal": list(self.run.goal),
            "time_budget": self.run.time_budget,
            "terrain_base": self.terrain.base,
            "features": len(self.terrain.features),
            "w_t": self.planner.w_t,
            "c_d": self.energy.c_d,
            "rates": dict(self.divisors),
            "source": str(self.source) if self.source else None,
        }


def load_scenario(path: Optional[Path]) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return ScenarioConfig.from_file(path)
