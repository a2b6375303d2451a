"""Closed-loop navigation run: every stage scheduled on a fixed 100 Hz base tick."""

from __future__ import annotations

import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import ScenarioConfig
from .controller import LocalCostView, carrot, local_path, select_command
from .costmap import WorldCostmap, apply_update
from .decision import MODE_AERIAL, DecisionEvent, ModeSupervisor, Telemetry, ground_cost
from .drive import DifferentialDrive, DriveRecord
from .elevation import ElevationMapper, ElevationUpdateStats
from .grid import ZERO_TWIST, GridMap, Pose2D, SensorMount, Twist, inverse_transform_cloud, transform_cloud
from .logger import log
from .planner import PlanResult, path_metrics, plan, prune_line_of_sight
from .simworld import RobotState, raycast_scan, sample_height, step_robot
from .traversability import build_estimator, fill_traversability_layer

OUTCOME_ARRIVED = "arrived"
OUTCOME_RECOMMENDATION = "recommendation"
OUTCOME_TIME_BUDGET = "time_budget"

Point = Tuple[float, float]


@dataclass
class TrajectorySample:
    time: float
    true_pose: Pose2D
    odom_pose: Pose2D
    estimate: Pose2D
    twist: Twist
    command: Twist
    mode: str


@dataclass
class PlanRecord:
    time: float
    start: Point
    ok: bool
    cause: Optional[str]
    waypoints: int
    distance: float
    terrain_cost: float
    max_cost: int
    g_total: float
    expansions: int
    ground_cost: Optional[float]
    wall_time: float


@dataclass
class RunReport:
    scenario: Dict[str, object]
    outcome: str
    final_time: float
    final_pose: Pose2D
    goal: Point
    trajectory: List[TrajectorySample] = field(default_factory=list)
    plans: List[PlanRecord] = field(default_factory=list)
    events: List[DecisionEvent] = field(default_factory=list)
    drive_records: List[DriveRecord] = field(default_factory=list)
    costmap: Optional[WorldCostmap] = None
    elevation: Optional[GridMap] = None
    elevation_stats: ElevationUpdateStats = field(default_factory=ElevationUpdateStats)
    points_in: int = 0
    points_kept: int = 0
    aborts: int = 0
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def arrived(self) -> bool:
        return self.outcome == OUTCOME_ARRIVED

    @property
    def final_distance(self) -> float:
        return self.final_pose.distance_to(*self.goal)

    def summary(self) -> Dict[str, object]:
        failed = [record for record in self.plans if not record.ok]
        return {
            "outcome": self.outcome,
            "final_time": round(self.final_time, 6),
            "final_distance": round(self.final_distance, 6),
            "plans": len(self.plans),
            "failed_plans": len(failed),
            "aborts": self.aborts,
            "events": [
                {"time": round(e.time, 6), "cause": e.cause, "mode": e.mode_after} for e in self.events
            ],
            "points_in": self.points_in,
            "points_kept": self.points_kept,
            "points_accepted": self.elevation_stats.points_accepted,
            "points_rejected_outlier": self.elevation_stats.points_rejected_outlier,
            "points_out_of_bounds": self.elevation_stats.points_out_of_bounds,
            "scenario": self.scenario,
        }


class NavigationLoop:
    """Single-threaded scheduler wiring sensor, mapping, planning, control, drive and decision."""

    def __init__(self, scenario: ScenarioConfig) -> None:
        self.cfg = scenario
        run = scenario.run
        perception = scenario.perception
        self.dt = 1.0 / run.base_rate
        self.goal: Point = (float(run.goal[0]), float(run.goal[1]))
        self.state = RobotState.at(run.start_pose)
        self.motion_rng = np.random.default_rng(np.random.SeedSequence(run.seed, spawn_key=(1,)))
        start = self.state.localization
        self.mapper = ElevationMapper(
            x=start.x,
            y=start.y,
            size=perception.map_size,
            resolution=perception.map_resolution,
            noise=perception.noise,
            inflation=perception.inflation,
            voxel_size=perception.voxel_size,
            recenter_margin=perception.recenter_margin,
        )
        weights = Path(perception.weights) if perception.weights else None
        self.estimator = build_estimator(weights, perception.fallback)
        self.world = WorldCostmap.from_config(scenario.costmap)
        self.published = self.world.snapshot()
        self.drive = DifferentialDrive(scenario.drive)
        self.supervisor = ModeSupervisor(scenario.aerial, scenario.planner.lethal_threshold)
        self.path: Optional[List[Point]] = None
        self.last_ground_cost: Optional[float] = None
        self.command = ZERO_TWIST
        self.wheel_speeds = (0.0, 0.0)
        self.pending_scan = None
        self.timings: Dict[str, float] = defaultdict(float)
        self.trajectory: List[TrajectorySample] = []
        self.plans: List[PlanRecord] = []
        self.aborts = 0

    # --- stages ---------------------------------------------------------------

    def _sense(self, tick: int) -> None:
        truth = self.state.true_pose
        estimate = self.state.localization
        sensor = self.cfg.sensor
        ground = sample_height(self.cfg.terrain, truth.x, truth.y)
        mount = SensorMount(0.0, 0.0, ground + sensor.mount_height, sensor.tilt)
        hits = raycast_scan(self.cfg.terrain, sensor, truth, tick=tick, seed=self.cfg.run.seed)
        # Points reach the map through the estimated pose, not the true one.
        local = inverse_transform_cloud(hits, truth, mount)
        self.pending_scan = (
            transform_cloud(local, estimate, mount),
            (estimate.x, estimate.y, mount.z),
        )

    def _map(self, now: float) -> None:
        estimate = self.state.localization
        self.mapper.follow(estimate.x, estimate.y)
        if self.pending_scan is not None:
            cloud, origin = self.pending_scan
            self.pending_scan = None
            self.mapper.update(cloud, origin, now)
        self.mapper.maybe_inflate(now)
        fill_traversability_layer(
            self.mapper.grid,
            self.estimator,
            self.mapper.take_dirty(),
            min_known_fraction=self.cfg.perception.min_known_fraction,
        )
        apply_update(self.world, self.mapper.grid, estimate, self.cfg.costmap)

    def _plan(self, now: float) -> PlanResult:
        estimate = self.state.localization
        start = (estimate.x, estimate.y)
        planner_cfg = self.cfg.planner
        energy = self.cfg.energy
        raw = plan(self.published, start, self.goal, planner_cfg, energy)
        max_cost = 0
        c_ground = None
        result = raw
        if raw.ok:
            result = prune_line_of_sight(raw, self.published, planner_cfg, energy)
            _, _, max_cost = path_metrics(result, self.published, planner_cfg)
            c_ground = ground_cost(result, self.published, planner_cfg, energy)
            self.path = list(result.waypoints)
        else:
            self.path = None
            log(f"[planner] t={now:.2f}s no plan from ({start[0]:.2f}, {start[1]:.2f}): {raw.cause}")
        self.last_ground_cost = c_ground
        self.plans.append(
            PlanRecord(
                time=now,
                start=start,
                ok=raw.ok,
                cause=raw.cause,
                waypoints=len(result.waypoints),
                distance=result.distance_total,
                terrain_cost=result.terrain_cost_total,
                max_cost=max_cost,
                g_total=raw.g_total,
                expansions=raw.expansions,
                ground_cost=c_ground,
                wall_time=raw.wall_time,
            )
        )
        self.supervisor.observe(
            Telemetry(time=now, plan_ok=raw.ok, max_path_cost=max_cost if raw.ok else None)
        )
        return result

    def _decide(self, now: float) -> Optional[DecisionEvent]:
        estimate = self.state.localization
        twist = self.state.twist
        d_goal = estimate.distance_to(*self.goal)
        self.supervisor.observe(
            Telemetry(time=now, omega_z=twist.omega, v_x=twist.v, distance_to_goal=d_goal)
        )
        return self.supervisor.evaluate(now, self.last_ground_cost, d_goal)

    def _control(self, now: float) -> None:
        ctrl = self.cfg.controller
        if not self.path:
            self.command = ZERO_TWIST
            self.drive.set_command(ZERO_TWIST, now)
            return
        estimate = self.state.localization
        stretch = local_path(self.path, estimate, ctrl, spacing=self.published.resolution)
        target = carrot(stretch, self.goal)
        view = LocalCostView.around(self.published, estimate, ctrl)
        chosen = select_command(self.command, estimate, stretch, target, view, ctrl)
        if chosen is None:
            self.aborts += 1
            self.supervisor.observe(Telemetry(time=now, aborts=1))
            log(f"[controller] t={now:.2f}s every sampled trajectory vetoed; stopping")
            chosen = ZERO_TWIST
        self.command = chosen
        self.drive.set_command(chosen, now)

    # --- loop -----------------------------------------------------------------

    def _timed(self, stage: str, started: float) -> None:
        self.timings[stage] += time.perf_counter() - started

    def run(self) -> RunReport:
        run = self.cfg.run
        div = self.cfg.divisors
        total_ticks = int(math.floor(run.time_budget * run.base_rate + 1e-9))
        outcome = OUTCOME_TIME_BUDGET
        now = 0.0
        log(
            f"[sim] start ({run.start[0]:.2f}, {run.start[1]:.2f}) -> goal "
            f"({self.goal[0]:.2f}, {self.goal[1]:.2f}), seed={run.seed}, budget={run.time_budget:g}s"
        )
        for tick in range(total_ticks + 1):
            now = tick / run.base_rate
            if self.state.localization.distance_to(*self.goal) <= run.arrival_tolerance:
                outcome = OUTCOME_ARRIVED
                self.supervisor.goal_reached()
                break
            if tick == total_ticks:
                break

            if tick % div["sensor"] == 0:
                started = time.perf_counter()
                self._sense(tick)
                self._timed("sensor", started)
            if tick % div["map"] == 0:
                started = time.perf_counter()
                self._map(now)
                self._timed("map", started)
            if tick % div["publish"] == 0:
                self.published = self.world.snapshot()
            if tick % div["planner"] == 0:
                started = time.perf_counter()
                self._plan(now)
                self._timed("planner", started)
            if tick % div["decision"] == 0:
                started = time.perf_counter()
                event = self._decide(now)
                self._timed("decision", started)
                if event is not None and event.mode_after == MODE_AERIAL and run.stop_on_recommendation:
                    outcome = OUTCOME_RECOMMENDATION
                    break
            if tick % div["controller"] == 0:
                started = time.perf_counter()
                self._control(now)
                self._timed("controller", started)
                self._record(now)
            if tick % div["drive"] == 0:
                self.wheel_speeds = self.drive.tick(now)
            started = time.perf_counter()
            self.state = step_robot(
                self.state, self.wheel_speeds, self.dt, self.cfg.motion, self.cfg.drive, self.motion_rng
            )
            self._timed("motion", started)

        log(f"[sim] finished at t={now:.2f}s: {outcome}")
        return RunReport(
            scenario=self.cfg.summary(),
            outcome=outcome,
            final_time=now,
            final_pose=self.state.localization,
            goal=self.goal,
            trajectory=self.trajectory,
            plans=self.plans,
            events=list(self.supervisor.events),
            drive_records=self.drive.records,
            costmap=self.world.snapshot(),
            elevation=self.mapper.grid.copy(),
            elevation_stats=self.mapper.totals,
            points_in=self.mapper.points_in,
            points_kept=self.mapper.points_kept,
            aborts=self.aborts,
            timings=dict(self.timings),
        )

    def _record(self, now: float) -> None:
        self.trajectory.append(
            TrajectorySample(
                time=now,
                true_pose=self.state.true_pose,
                odom_pose=self.state.odom_pose,
                estimate=self.state.localization,
                twist=self.state.twist,
                command=self.command,
                mode=self.supervisor.state.mode,
            )
        )
