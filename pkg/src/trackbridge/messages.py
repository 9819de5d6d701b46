"""Message types exchanged between planner, controller, localization and vehicle.

All poses live in one planar Cartesian world frame. Time values share the
localization clock (seconds). Validation never raises; it reports the first
rejection cause it finds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

MAX_TRAJECTORY_POINTS = 1000


class Gear(IntEnum):
    REVERSE = -1
    NEUTRAL = 0
    FORWARD = 1


class ModeHint(IntEnum):
    AUTO = 0
    TRAJECTORY = 1
    PATH = 2


class LocStatus(IntEnum):
    OK = 0
    DEGRADED = 1
    INVALID = 2


class HmiAction(IntEnum):
    DISENGAGE = 0
    ENGAGE = 1
    EMERGENCY_STOP = 2


class ControlMode(IntEnum):
    """Active controller mode carried in commands and status frames."""

    NONE = 0
    TRAJECTORY = 1
    PATH = 2
    STOP = 3


class FsmState(IntEnum):
    INACTIVE = 0
    ENGAGED_TRAJECTORY = 1
    ENGAGED_PATH = 2
    DEGRADED_STOP = 3
    HANDOVER = 4


class Reason(IntEnum):
    """Rejection causes reported by the validators."""

    NONE = 0
    STALE = 1
    NON_MONOTONIC = 2
    NON_FINITE = 3
    EMPTY = 4
    HORIZON_TOO_SHORT = 5
    STATUS_INVALID = 6
    # field outside its enumerated/physical range (gear, hint, v < 0, ...)
    BAD_FIELD = 7
    # supervisor-only causes, latched in SupervisorState.error_latch
    ACTUATOR_FAULT = 8
    HORIZON_EXPIRED = 9
    OPERATOR = 10


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]. Identity for values already in range."""
    if -math.pi < theta <= math.pi:
        return theta
    if not math.isfinite(theta):
        return theta
    r = math.remainder(theta, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


@dataclass(frozen=True)
class TrajectoryPoint:
    x: float
    y: float
    theta: float
    kappa: float
    s: float
    v: float
    a: float
    relative_time: float

    def values(self) -> tuple[float, ...]:
        return (self.x, self.y, self.theta, self.kappa, self.s, self.v, self.a, self.relative_time)


@dataclass(frozen=True)
class TrajectoryMsg:
    seq: int
    timestamp: float
    gear: int
    mode_hint: int
    points: tuple[TrajectoryPoint, ...]

    @property
    def horizon_end(self) -> float:
        """Absolute time of the last sample."""
        return self.timestamp + self.points[-1].relative_time


@dataclass(frozen=True)
class LocalizationMsg:
    seq: int
    timestamp: float
    x: float
    y: float
    theta: float
    v: float
    yaw_rate: float
    a: float
    status: int = LocStatus.OK


@dataclass(frozen=True)
class ControlCommand:
    seq: int
    timestamp: float
    accel_cmd: float
    steer_wheel_cmd: float
    gear_cmd: int
    direct_actuation: bool
    throttle: float
    brake: float
    mode: int


@dataclass(frozen=True)
class HmiCommand:
    seq: int
    timestamp: float
    command: int


@dataclass(frozen=True)
class ControllerStatus:
    """Per-cycle observability frame published by the controller."""

    seq: int
    timestamp: float
    fsm: int
    mode: int
    reason: int
    lateral_error: float
    traj_seq: int
    loc_seq: int


@dataclass(frozen=True)
class ValidationResult:
    valid: bool
    reason: Reason = Reason.NONE

    def __bool__(self) -> bool:
        return self.valid


VALID = ValidationResult(True)


@dataclass(frozen=True)
class WatchdogConfig:
    traj_max_age: float = 0.5
    loc_max_age: float = 0.1
    min_forward_horizon: float = 1.0
    # time reserved beyond the ramped-stop duration before the horizon runs out
    stop_margin: float = 1.0


def _all_finite(values: Sequence[float]) -> bool:
    return all(math.isfinite(v) for v in values)


def check_points(points: Sequence[TrajectoryPoint]) -> ValidationResult:
    """Per-point and ordering invariants, shared by validation and the store."""
    for p in points:
        if not _all_finite(p.values()):
            return ValidationResult(False, Reason.NON_FINITE)
    for p in points:
        if p.v < 0.0 or not (-math.pi < p.theta <= math.pi):
            return ValidationResult(False, Reason.BAD_FIELD)
    for prev, cur in zip(points, points[1:]):
        if cur.relative_time <= prev.relative_time or cur.s < prev.s:
            return ValidationResult(False, Reason.NON_MONOTONIC)
    return VALID


def validate_trajectory(msg: TrajectoryMsg, now: float, cfg: WatchdogConfig) -> ValidationResult:
    if len(msg.points) < 2:
        return ValidationResult(False, Reason.EMPTY)
    if not math.isfinite(msg.timestamp):
        return ValidationResult(False, Reason.NON_FINITE)
    if (
        msg.gear not in (Gear.FORWARD, Gear.REVERSE)
        or msg.mode_hint not in tuple(ModeHint)
        or len(msg.points) > MAX_TRAJECTORY_POINTS
    ):
        return ValidationResult(False, Reason.BAD_FIELD)
    res = check_points(msg.points)
    if not res:
        return res
    if now - msg.timestamp > cfg.traj_max_age:
        return ValidationResult(False, Reason.STALE)
    if msg.horizon_end < now + cfg.min_forward_horizon:
        return ValidationResult(False, Reason.HORIZON_TOO_SHORT)
    return VALID


def validate_localization(msg: LocalizationMsg, now: float, cfg: WatchdogConfig) -> ValidationResult:
    numeric = (msg.timestamp, msg.x, msg.y, msg.theta, msg.v, msg.yaw_rate, msg.a)
    if not _all_finite(numeric):
        return ValidationResult(False, Reason.NON_FINITE)
    if msg.status == LocStatus.INVALID:
        return ValidationResult(False, Reason.STATUS_INVALID)
    if msg.status not in (LocStatus.OK, LocStatus.DEGRADED):
        return ValidationResult(False, Reason.BAD_FIELD)
    if now - msg.timestamp > cfg.loc_max_age:
        return ValidationResult(False, Reason.STALE)
    return VALID


def neutral_command(seq: int = 0, timestamp: float = 0.0, gear: int = Gear.NEUTRAL) -> ControlCommand:
    return ControlCommand(seq, timestamp, 0.0, 0.0, int(gear), False, 0.0, 0.0, ControlMode.NONE)


__all__ = [
    "ControlCommand",
    "ControlMode",
    "ControllerStatus",
    "FsmState",
    "Gear",
    "HmiAction",
    "HmiCommand",
    "LocStatus",
    "LocalizationMsg",
    "MAX_TRAJECTORY_POINTS",
    "ModeHint",
    "Reason",
    "TrajectoryMsg",
    "TrajectoryPoint",
    "ValidationResult",
    "WatchdogConfig",
    "check_points",
    "neutral_command",
    "validate_localization",
    "validate_trajectory",
    "wrap_angle",
]
