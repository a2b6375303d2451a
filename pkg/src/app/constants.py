from __future__ import annotations

import math
from typing import Optional


# --- Local elevation map -----------------------------------------------------

DEFAULT_MAP_SIZE = 5.0
DEFAULT_MAP_RESOLUTION = 0.04
# One map cell per voxel. The offline mapping pipeline filters at 0.5 m; at that edge a
# 0.04 m map keeps roughly one point per 12 x 12 block of cells.
DEFAULT_VOXEL_SIZE = DEFAULT_MAP_RESOLUTION
LAYER_ELEVATION = "elevation"
LAYER_VARIANCE = "variance"
LAYER_TRAVERSABILITY = "traversability"
LAYER_TIME = "time"
MAP_LAYERS = (LAYER_ELEVATION, LAYER_VARIANCE, LAYER_TRAVERSABILITY, LAYER_TIME)
GRID_NODATA = -9999.0
CELL_EPSILON = 1e-9

DEFAULT_ALPHA_D = 0.002
DEFAULT_MAHALANOBIS_THRESHOLD = 2.5
DEFAULT_MIN_RANGE = 0.1
DEFAULT_SIGMA_T_SQ = 0.01
DEFAULT_INFLATION_RATE = 0.1
VARIANCE_CAP = 1e6

# --- Traversability -----------------------------------------------------------

PATCH_SIDE = 48
CNN_MAGIC = "TRAVCNN1"
DEFAULT_MAX_SLOPE = 0.35
DEFAULT_MAX_ROUGHNESS = 0.05
DEFAULT_MAX_STEP = 0.15
INFERENCE_BATCH = 64

# --- World costmap ------------------------------------------------------------

DEFAULT_T_HIGH = 0.85
DEFAULT_T_CRIT = 0.6
DEFAULT_WORLD_SIZE = 100.0
DEFAULT_WORLD_RESOLUTION = 0.1
DEFAULT_WORLD_ORIGIN = (-50.0, -50.0)
DEFAULT_INIT_COST = 50
DEFAULT_CROP_EXTENT = 6.0
DEFAULT_EDGE_BUFFER = 1.0
DEFAULT_WARMUP_MESSAGES = 20
DEFAULT_PUBLISH_RATE = 2.0
COST_UNKNOWN = -1
COST_LETHAL = 100
PGM_UNKNOWN = 255

# --- Planner ------------------------------------------------------------------

DEFAULT_P_DRIVE = 45.0
DEFAULT_V_DRIVE = 0.3
DEFAULT_TERRAIN_WEIGHT = 20.0
OFFLINE_TERRAIN_WEIGHT = 8.0
DEFAULT_REPLAN_RATE = 5.0
DEFAULT_PLAN_TIMEOUT = 5.0
DEFAULT_UNKNOWN_COST = 50
PLANNER_PRESETS = ("thesis", "offline")
PRESET_ALIASES = {"onboard": "thesis"}

# --- Controller ---------------------------------------------------------------

DEFAULT_V_MIN = -0.3
DEFAULT_V_MAX = 0.5
DEFAULT_OMEGA_LIMIT = 1.0
DEFAULT_A_MAX = 0.5
DEFAULT_ALPHA_MAX = 1.0
DEFAULT_CONTROL_RATE = 20.0
DEFAULT_HORIZON = 1.5
DEFAULT_ROLLOUT_STEP = 0.1
DEFAULT_SAMPLES_V = 11
DEFAULT_SAMPLES_OMEGA = 21
DEFAULT_CRITIC_WEIGHTS = (1.0, 1.0, 0.5, 2.0)
DEFAULT_MIN_CLEARANCE = 0.2
DEFAULT_LOOKAHEAD = 2.0

# --- Drive --------------------------------------------------------------------

DEFAULT_TRACK = 0.47
DEFAULT_WHEEL_RADIUS = 0.076
DEFAULT_GEAR_RATIO = 1.0
DEFAULT_DRIVE_V_LIMIT = 1.0
DEFAULT_DRIVE_OMEGA_LIMIT = 1.0
DEFAULT_COMMAND_TIMEOUT_MS = 300.0
DEFAULT_RPM_DEADBAND = 1.0
DEFAULT_DRIVE_RATE = 50.0

# --- Decision -----------------------------------------------------------------

DEFAULT_P_FLIGHT = 600.0
DEFAULT_V_FLIGHT = 1.5
DEFAULT_C_TRANSFORM = 300.0
DEFAULT_HYSTERESIS = 0.8
SPIN_OMEGA = 0.3
SPIN_V = 0.05
SPIN_DURATION = 1.0
STUCK_WINDOW = 10.0
STUCK_PROGRESS = 0.1
ABORT_WINDOW = 20.0
IMPASSABLE_COST = 80
DEFAULT_DECISION_RATE = 10.0

CAUSE_COST = "cost"
CAUSE_SPIN = "spin"
CAUSE_STUCK = "stuck"
CAUSE_RETRY = "retry-loop"
CAUSE_NO_PATH = "no-path"
CAUSE_IMPASSABLE = "impassable"

# --- Simulation ---------------------------------------------------------------

DEFAULT_BASE_RATE = 100.0
DEFAULT_SENSOR_RATE = 10.0
DEFAULT_MAP_RATE = 20.0
DEFAULT_ARRIVAL_TOLERANCE = 0.15
DEFAULT_TIME_BUDGET = 60.0
DEFAULT_MOUNT_HEIGHT = 0.45
DEFAULT_SENSOR_TILT = math.radians(30.0)
DEFAULT_FOV_MIN = math.radians(-7.0)
DEFAULT_FOV_MAX = math.radians(52.0)
DEFAULT_RAYS = 2000
DEFAULT_MAX_RANGE = 10.0
DEFAULT_RAY_STEP = 0.05
RAY_TOLERANCE = 1e-3
DEFAULT_SEED = 7

# --- CLI exit codes -----------------------------------------------------------

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_FAILED = 3
EXIT_IO = 4


def resolve_preset(preset: Optional[str]) -> str:
    if preset is None:
        return "thesis"
    candidate = preset.strip().lower()
    candidate = PRESET_ALIASES.get(candidate, candidate)
    if candidate in PLANNER_PRESETS:
        return candidate
    raise ValueError(
        f"Invalid preset={preset!r}; expected 'thesis' (alias 'onboard') or 'offline'."
    )


def resolve_rate(name: str, rate: float, base_rate: float = DEFAULT_BASE_RATE) -> int:
    """Return the tick divisor for ``rate`` or raise when it does not divide ``base_rate``."""
    if rate <= 0:
        raise ValueError(f"Invalid {name}={rate!r}; expected a positive rate in Hz.")
    ratio = base_rate / rate
    divisor = int(round(ratio))
    if divisor < 1 or abs(ratio - divisor) > 1e-9:
        raise ValueError(
            f"Invalid {name}={rate!r}; expected a divisor of the {base_rate:g} Hz base tick."
        )
    return divisor
