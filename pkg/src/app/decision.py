"""Ground/aerial mode supervision: energy comparison, failure monitoring, hysteresis."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Tuple

from .constants import (
    ABORT_WINDOW,
    CAUSE_COST,
    CAUSE_IMPASSABLE,
    CAUSE_NO_PATH,
    CAUSE_RETRY,
    CAUSE_SPIN,
    CAUSE_STUCK,
    DEFAULT_C_TRANSFORM,
    DEFAULT_HYSTERESIS,
    DEFAULT_P_FLIGHT,
    DEFAULT_V_FLIGHT,
    IMPASSABLE_COST,
    SPIN_DURATION,
    SPIN_OMEGA,
    SPIN_V,
    STUCK_PROGRESS,
    STUCK_WINDOW,
)
from .costmap import WorldCostmap
from .logger import log
from .planner import EnergyModel, PlanResult, PlannerConfig, effective_costs, segment_totals

MODE_GROUND = "ground"
MODE_AERIAL = "aerial"


@dataclass(frozen=True)
class AerialModel:
    p_flight: float = DEFAULT_P_FLIGHT
    v_flight: float = DEFAULT_V_FLIGHT
    c_transform: float = DEFAULT_C_TRANSFORM
    gamma: float = DEFAULT_HYSTERESIS

    def __post_init__(self) -> None:
        if self.p_flight <= 0 or self.v_flight <= 0 or self.c_transform <= 0:
            raise ValueError("Aerial model parameters must be positive.")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"Invalid gamma={self.gamma!r}; expected 0 < gamma < 1.")


def ground_cost(
    plan: PlanResult,
    world: WorldCostmap,
    cfg: Optional[PlannerConfig] = None,
    energy: Optional[EnergyModel] = None,
) -> Optional[float]:
    """Sum of d * c / 2 over the plan's segments; ``None`` when the plan is empty or failed.

    ``c`` is the hybrid cost of the segment integrated over the cells it crosses. Because of
    the halving this value is not the planner's ``g_total``.
    """
    if not plan.ok or not plan.waypoints:
        return None
    cfg = cfg or PlannerConfig()
    energy = energy or EnergyModel()
    costs = effective_costs(world, cfg)
    total = 0.0
    for a, b in zip(plan.waypoints, plan.waypoints[1:]):
        d = math.hypot(b[0] - a[0], b[1] - a[1])
        _, _, c = segment_totals(world, a, b, costs, cfg, energy)
        total += d * c / 2.0
    return total


def aerial_cost(d_direct: float, model: AerialModel) -> float:
    if d_direct < 0:
        raise ValueError(f"Invalid d_direct={d_direct!r}; expected >= 0.")
    return d_direct * model.p_flight / model.v_flight + 2.0 * model.c_transform


@dataclass
class Telemetry:
    time: float
    omega_z: Optional[float] = None
    v_x: Optional[float] = None
    distance_to_goal: Optional[float] = None
    aborts: int = 0
    plan_ok: Optional[bool] = None
    max_path_cost: Optional[int] = None


@dataclass
class FailureMonitor:
    spin_episode_count: int = 0
    spin_start: Optional[float] = None
    spin_counted: bool = False
    stuck_window: Deque[Tuple[float, float]] = field(default_factory=deque)
    abort_timestamps: Deque[float] = field(default_factory=deque)
    no_path_count: int = 0
    last_max_cost: Optional[int] = None
    impassable_cost: int = IMPASSABLE_COST

    def reset(self) -> None:
        self.spin_episode_count = 0
        self.spin_start = None
        self.spin_counted = False
        self.stuck_window.clear()
        self.abort_timestamps.clear()
        self.no_path_count = 0
        self.last_max_cost = None

    def update(self, telemetry: Telemetry, now: Optional[float] = None) -> Optional[str]:
        """Fold one telemetry sample in; return the cause tag of a triggered condition."""
        now = telemetry.time if now is None else now

        if telemetry.omega_z is None or telemetry.v_x is None:
            pass
        elif abs(telemetry.omega_z) > SPIN_OMEGA and abs(telemetry.v_x) < SPIN_V:
            if self.spin_start is None:
                self.spin_start = now
            if not self.spin_counted and now - self.spin_start > SPIN_DURATION:
                self.spin_episode_count += 1
                self.spin_counted = True
        else:
            self.spin_start = None
            self.spin_counted = False

        if telemetry.distance_to_goal is not None and math.isfinite(telemetry.distance_to_goal):
            self.stuck_window.append((now, telemetry.distance_to_goal))
            while len(self.stuck_window) >= 2 and self.stuck_window[1][0] <= now - STUCK_WINDOW:
                self.stuck_window.popleft()

        for _ in range(telemetry.aborts):
            self.abort_timestamps.append(now)
        while self.abort_timestamps and self.abort_timestamps[0] < now - ABORT_WINDOW:
            self.abort_timestamps.popleft()

        if telemetry.plan_ok is not None:
            self.no_path_count = 0 if telemetry.plan_ok else self.no_path_count + 1
        if telemetry.max_path_cost is not None:
            self.last_max_cost = telemetry.max_path_cost

        return self.triggered(now)

    def triggered(self, now: float) -> Optional[str]:
        if self.no_path_count >= 2:
            return CAUSE_NO_PATH
        if self.last_max_cost is not None and self.last_max_cost > self.impassable_cost:
            return CAUSE_IMPASSABLE
        if len(self.abort_timestamps) >= 2:
            return CAUSE_RETRY
        if self.stuck_window:
            oldest_time, oldest_distance = self.stuck_window[0]
            latest_distance = self.stuck_window[-1][1]
            if now - oldest_time >= STUCK_WINDOW - 1e-9 and oldest_distance - latest_distance < STUCK_PROGRESS:
                return CAUSE_STUCK
        if self.spin_episode_count >= 2:
            return CAUSE_SPIN
        return None


def update_failure_monitor(
    state: FailureMonitor, telemetry: Telemetry, now: float
) -> Optional[str]:
    return state.update(telemetry, now)


@dataclass(frozen=True)
class ModeState:
    mode: str = MODE_GROUND
    last_switch_time: float = 0.0
    cause: Optional[str] = None


def select_mode(
    current: ModeState,
    c_ground: Optional[float],
    c_aerial: float,
    failure: Optional[str],
    now: float = 0.0,
    gamma: float = DEFAULT_HYSTERESIS,
) -> ModeState:
    if not math.isfinite(c_aerial):
        raise ValueError("c_aerial must be finite")
    if failure is not None:
        switched = current.mode != MODE_AERIAL
        return ModeState(
            mode=MODE_AERIAL,
            last_switch_time=now if switched else current.last_switch_time,
            cause=failure,
        )
    ground = math.inf if c_ground is None else c_ground
    if current.mode == MODE_GROUND and c_aerial < ground:
        return ModeState(MODE_AERIAL, now, CAUSE_COST)
    if current.mode == MODE_AERIAL and ground < gamma * c_aerial:
        return ModeState(MODE_GROUND, now, CAUSE_COST)
    return current


@dataclass
class DecisionEvent:
    time: float
    cause: str
    c_ground: Optional[float]
    c_aerial: float
    mode_before: str
    mode_after: str


class ModeSupervisor:
    """Owns the failure monitor and mode state; emits an event on every mode change."""

    def __init__(
        self, model: Optional[AerialModel] = None, impassable_cost: int = IMPASSABLE_COST
    ) -> None:
        self.model = model or AerialModel()
        self.monitor = FailureMonitor(impassable_cost=impassable_cost)
        self.state = ModeState()
        self.events: List[DecisionEvent] = []

    def goal_reached(self) -> None:
        self.monitor.reset()

    def observe(self, telemetry: Telemetry) -> Optional[str]:
        return self.monitor.update(telemetry, telemetry.time)

    def evaluate(
        self,
        now: float,
        c_ground: Optional[float],
        d_direct: float,
        failure: Optional[str] = None,
    ) -> Optional[DecisionEvent]:
        failure = failure if failure is not None else self.monitor.triggered(now)
        c_air = aerial_cost(d_direct, self.model)
        updated = select_mode(self.state, c_ground, c_air, failure, now, self.model.gamma)
        if updated.mode == self.state.mode:
            self.state = updated
            return None
        event = DecisionEvent(
            time=now,
            cause=updated.cause or CAUSE_COST,
            c_ground=c_ground,
            c_aerial=c_air,
            mode_before=self.state.mode,
            mode_after=updated.mode,
        )
        self.state = updated
        self.events.append(event)
        self.monitor.reset()
        ground_text = "undefined" if c_ground is None else f"{c_ground:.1f}"
        log(
            f"[decision] {event.mode_before} -> {event.mode_after} at t={now:.2f}s "
            f"(cause={event.cause}, ground={ground_text} J, aerial={c_air:.1f} J)"
        )
        if updated.mode == MODE_AERIAL:
            log("[decision] aerial execution is not modelled; recommendation recorded only")
        return event
