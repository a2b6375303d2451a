"""Differential-drive kinematics, wheel RPM conversion, command watchdog and odometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Tuple

from .constants import (
    DEFAULT_COMMAND_TIMEOUT_MS,
    DEFAULT_DRIVE_OMEGA_LIMIT,
    DEFAULT_DRIVE_RATE,
    DEFAULT_DRIVE_V_LIMIT,
    DEFAULT_GEAR_RATIO,
    DEFAULT_RPM_DEADBAND,
    DEFAULT_TRACK,
    DEFAULT_WHEEL_RADIUS,
)
from .grid import ZERO_TWIST, Pose2D, Twist


@dataclass(frozen=True)
class DriveConfig:
    track: float = DEFAULT_TRACK
    wheel_radius: float = DEFAULT_WHEEL_RADIUS
    gear_ratio: float = DEFAULT_GEAR_RATIO
    v_limit: float = DEFAULT_DRIVE_V_LIMIT
    omega_limit: float = DEFAULT_DRIVE_OMEGA_LIMIT
    command_timeout_ms: float = DEFAULT_COMMAND_TIMEOUT_MS
    rpm_deadband: float = DEFAULT_RPM_DEADBAND
    rate: float = DEFAULT_DRIVE_RATE

    def __post_init__(self) -> None:
        if self.track <= 0 or self.wheel_radius <= 0:
            raise ValueError(
                f"Invalid track={self.track!r}/wheel_radius={self.wheel_radius!r}; expected > 0."
            )
        if self.gear_ratio <= 0:
            raise ValueError(f"Invalid gear_ratio={self.gear_ratio!r}; expected > 0.")


@dataclass
class WheelState:
    arc_left: float = 0.0
    arc_right: float = 0.0

    def advance(self, ds_left: float, ds_right: float) -> None:
        self.arc_left += ds_left
        self.arc_right += ds_right


def clamp_twist(cmd: Twist, cfg: DriveConfig) -> Twist:
    return Twist(
        min(max(cmd.v, -cfg.v_limit), cfg.v_limit),
        min(max(cmd.omega, -cfg.omega_limit), cfg.omega_limit),
    )


def inverse_kinematics(cmd: Twist, cfg: DriveConfig) -> Tuple[float, float]:
    clamped = clamp_twist(cmd, cfg)
    half = clamped.omega * cfg.track / 2.0
    return clamped.v - half, clamped.v + half


def forward_kinematics(v_left: float, v_right: float, cfg: DriveConfig) -> Twist:
    return Twist((v_left + v_right) / 2.0, (v_right - v_left) / cfg.track)


def wheel_rpm(v_wheel: float, cfg: DriveConfig) -> float:
    rpm = 60.0 * v_wheel / (2.0 * math.pi * cfg.wheel_radius * cfg.gear_ratio)
    if abs(rpm) < cfg.rpm_deadband:
        return 0.0
    return rpm


def integrate_odometry(pose: Pose2D, ds_left: float, ds_right: float, cfg: DriveConfig) -> Pose2D:
    ds = (ds_left + ds_right) / 2.0
    dtheta = (ds_right - ds_left) / cfg.track
    mid = pose.theta + dtheta / 2.0
    return Pose2D(
        pose.x + ds * math.cos(mid),
        pose.y + ds * math.sin(mid),
        pose.theta + dtheta,
    )


def watchdog(last_command_age_ms: float, cmd: Twist, cfg: DriveConfig) -> Twist:
    if last_command_age_ms < 0:
        raise ValueError(f"Invalid command age {last_command_age_ms!r}; expected >= 0.")
    if last_command_age_ms > cfg.command_timeout_ms:
        return ZERO_TWIST
    return cmd


@dataclass
class DriveRecord:
    time: float
    command: Twist
    applied: Twist
    v_left: float
    v_right: float
    rpm_left: float
    rpm_right: float
    timed_out: bool


@dataclass
class DifferentialDrive:
    """50 Hz drive loop: watchdog, clamp, kinematics, RPM; keeps a per-tick record."""

    cfg: DriveConfig = field(default_factory=DriveConfig)
    command: Twist = ZERO_TWIST
    command_time: float = 0.0
    records: List[DriveRecord] = field(default_factory=list)

    def set_command(self, cmd: Twist, now: float) -> None:
        self.command = cmd
        self.command_time = now

    def tick(self, now: float) -> Tuple[float, float]:
        """Return the wheel surface speeds (m/s) actually driven this tick."""
        age_ms = max(now - self.command_time, 0.0) * 1000.0
        guarded = watchdog(age_ms, self.command, self.cfg)
        applied = clamp_twist(guarded, self.cfg)
        v_left, v_right = inverse_kinematics(applied, self.cfg)
        rpm_left = wheel_rpm(v_left, self.cfg)
        rpm_right = wheel_rpm(v_right, self.cfg)
        # The motors only see quantised RPM; sub-deadband speeds are not driven.
        scale = 2.0 * math.pi * self.cfg.wheel_radius * self.cfg.gear_ratio / 60.0
        driven = (rpm_left * scale, rpm_right * scale)
        self.records.append(
            DriveRecord(
                time=now,
                command=self.command,
                applied=applied,
                v_left=driven[0],
                v_right=driven[1],
                rpm_left=rpm_left,
                rpm_right=rpm_right,
                timed_out=guarded is ZERO_TWIST and self.command != ZERO_TWIST,
            )
        )
        return driven
