"""Mocked planner and localization source.

The planner samples an analytic reference (path geometry plus a speed
profile in time). Every plan is cut from the same analytic curve, so
consecutive plans agree wherever they overlap.
"""

from __future__ import annotations

import functools
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .control import VehicleParams
from .messages import (
    Gear,
    LocalizationMsg,
    LocStatus,
    MAX_TRAJECTORY_POINTS,
    TrajectoryMsg,
    TrajectoryPoint,
    wrap_angle,
)
from .reference import project_segments
from .vehicle_sim import PlantState

REVERSE_MAX_SPEED = 1.5


class Shape(str, Enum):
    STRAIGHT = "STRAIGHT"
    ARC = "ARC"
    LANE_CHANGE = "LANE_CHANGE"
    STOP = "STOP"
    REVERSE_STRAIGHT = "REVERSE_STRAIGHT"


@dataclass(frozen=True)
class Fault:
    kind: str  # actuator | loc_outage | loc_invalid | planner_outage | estop | disengage
    start: float
    duration: float = math.inf


FAULT_KINDS = ("actuator", "loc_outage", "loc_invalid", "planner_outage", "estop", "disengage")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    shape: Shape = Shape.STRAIGHT
    speed: float = 5.0
    start_speed: Optional[float] = None
    ramp_accel: float = 0.5
    length: Optional[float] = None
    duration: float = 20.0
    arc_radius: float = 20.0
    lane_offset: float = 3.5
    lane_change_start: float = 30.0
    lane_change_distance: float = 50.0
    stop_time: Optional[float] = None
    stop_decel: float = 1.0
    replan_period: float = 0.1
    point_spacing: float = 0.1
    forward_horizon: float = 8.0
    backward_horizon: float = 1.0
    mode_hint: int = 0
    noise_xy: float = 0.0
    noise_theta: float = 0.0
    loc_dropout: float = 0.0
    loc_latency: float = 0.0
    traj_drop: float = 0.0
    initial_offset: float = 0.0
    initial_heading: float = 0.0
    initial_speed: Optional[float] = None
    engage_time: float = 0.0
    expect_handover: bool = False
    seed: int = 0
    faults: tuple[Fault, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.forward_horizon <= 0 or self.backward_horizon <= 0:
            raise ValueError("horizons must be positive")
        for name in ("loc_dropout", "traj_drop"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.replan_period <= 0 or self.point_spacing <= 0:
            raise ValueError("replan_period and point_spacing must be positive")
        if self.shape == Shape.ARC and self.arc_radius == 0:
            raise ValueError("arc_radius must be non-zero")
        if self.lane_change_distance <= 0:
            raise ValueError("lane_change_distance must be positive")
        if self.stop_decel <= 0 or self.ramp_accel <= 0:
            raise ValueError("stop_decel and ramp_accel must be positive")
        for f in self.faults:
            if f.kind not in FAULT_KINDS:
                raise ValueError(f"unknown fault kind {f.kind!r}")

    @property
    def gear(self) -> int:
        return Gear.REVERSE if self.shape == Shape.REVERSE_STRAIGHT else Gear.FORWARD

    @property
    def cruise_speed(self) -> float:
        if self.shape == Shape.REVERSE_STRAIGHT:
            return min(self.speed, REVERSE_MAX_SPEED)
        return self.speed

    @property
    def profile_start_speed(self) -> float:
        v = self.cruise_speed if self.start_speed is None else self.start_speed
        if self.shape == Shape.REVERSE_STRAIGHT:
            v = min(v, REVERSE_MAX_SPEED)
        return v


class SpeedProfile:
    """Piecewise constant-acceleration speed over time, s(0) = 0.

    Before t = 0 the start speed is held. Phases: ramp to cruise, cruise,
    optional braking at ``stop_decel`` from ``stop_time`` until standstill.
    """

    def __init__(self, start: float, cruise: float, ramp: float, stop_time=None, stop_decel=1.0, length=None):
        self.start = start
        phases = []  # (t0, s0, v0, a)
        t, s, v = 0.0, 0.0, start
        if cruise != start:
            a = math.copysign(ramp, cruise - start)
            dur = (cruise - start) / a
            phases.append((t, s, v, a))
            t, s, v = t + dur, s + v * dur + 0.5 * a * dur * dur, cruise
        if length is not None and stop_time is None:
            brake_dist = v * v / (2.0 * stop_decel)
            if v <= 0 or s + brake_dist > length:
                raise ValueError("path too short for the requested speed profile")
            stop_time = t + (length - brake_dist - s) / v
        if stop_time is not None:
            if stop_time < t:
                raise ValueError("stop_time falls inside the acceleration ramp")
            phases.append((t, s, v, 0.0))
            s += v * (stop_time - t)
            t = stop_time
            phases.append((t, s, v, -stop_decel))
            dur = v / stop_decel
            t, s, v = t + dur, s + v * dur - 0.5 * stop_decel * dur * dur, 0.0
        phases.append((t, s, v, 0.0))
        self.phases = phases
        self._t0 = np.array([p[0] for p in phases])

    def evaluate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(s, v, a) at times ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self._t0, t, side="right") - 1
        before = idx < 0
        idx = np.clip(idx, 0, len(self.phases) - 1)
        ph = np.array(self.phases)[idx]
        t0, s0, v0, a = ph[:, 0], ph[:, 1], ph[:, 2], ph[:, 3]
        dt = t - t0
        v = v0 + a * dt
        s = s0 + v0 * dt + 0.5 * a * dt * dt
        s = np.where(before, self.start * t, s)
        v = np.where(before, self.start, v)
        a = np.where(before, 0.0, a)
        return s, np.maximum(v, 0.0), a


class Path:
    """Analytic planar path parametrized by arc length."""

    def pose(self, s: np.ndarray):
        raise NotImplementedError


class StraightPath(Path):
    def __init__(self, direction: float = 1.0):
        self.direction = direction

    def pose(self, s):
        s = np.asarray(s, dtype=float)
        zero = np.zeros_like(s)
        return self.direction * s, zero, zero, zero


class ArcPath(Path):
    def __init__(self, radius: float):
        self.kappa = 1.0 / radius

    def pose(self, s):
        s = np.asarray(s, dtype=float)
        k = self.kappa
        phi = k * s
        x = np.sin(phi) / k
        y = (1.0 - np.cos(phi)) / k
        return x, y, phi, np.full_like(s, k)


class LaneChangePath(Path):
    """Straight, quintic lateral transition, straight again."""

    def __init__(self, offset: float, start: float, distance: float, resolution: float = 1e-3):
        self.w, self.x0, self.dist = offset, start, distance
        n = int(round(distance / resolution)) + 1
        xs = np.linspace(0.0, distance, n)
        yp = self._dy(xs / distance)
        self._x = xs
        self._s = cumulative_trapezoid(np.sqrt(1.0 + yp * yp), xs, initial=0.0)
        self.transition_length = float(self._s[-1])

    def _dy(self, u):
        return self.w / self.dist * (30 * u**2 - 60 * u**3 + 30 * u**4)

    def pose(self, s):
        s = np.asarray(s, dtype=float)
        rel = s - self.x0
        inside = (rel > 0) & (rel < self.transition_length)
        after = rel >= self.transition_length
        xr = np.interp(np.clip(rel, 0, self.transition_length), self._s, self._x)
        u = xr / self.dist
        y_in = self.w * (10 * u**3 - 15 * u**4 + 6 * u**5)
        yp = self._dy(u)
        ypp = self.w / self.dist**2 * (60 * u - 180 * u**2 + 120 * u**3)
        k_in = ypp / (1.0 + yp * yp) ** 1.5
        x = np.where(inside, self.x0 + xr, np.where(after, self.x0 + self.dist + rel - self.transition_length, s))
        y = np.where(inside, y_in, np.where(after, self.w, 0.0))
        theta = np.where(inside, np.arctan(yp), 0.0)
        kappa = np.where(inside, k_in, 0.0)
        return x, y, theta, kappa


@functools.lru_cache(maxsize=32)
def _analytic(spec: ScenarioSpec) -> tuple[Path, SpeedProfile]:
    if spec.shape == Shape.ARC:
        path: Path = ArcPath(spec.arc_radius)
    elif spec.shape == Shape.LANE_CHANGE:
        path = LaneChangePath(spec.lane_offset, spec.lane_change_start, spec.lane_change_distance)
    elif spec.shape == Shape.REVERSE_STRAIGHT:
        path = StraightPath(-1.0)
    else:
        path = StraightPath(1.0)
    stop_time = spec.stop_time
    if spec.shape == Shape.STOP and stop_time is None and spec.length is None:
        stop_time = 0.0
    profile = SpeedProfile(
        spec.profile_start_speed,
        spec.cruise_speed,
        spec.ramp_accel,
        stop_time,
        spec.stop_decel,
        spec.length,
    )
    return path, profile


def reference_path(spec: ScenarioSpec) -> Path:
    return _analytic(spec)[0]


def speed_profile(spec: ScenarioSpec) -> SpeedProfile:
    return _analytic(spec)[1]


def _sample(spec: ScenarioSpec, now: float, k: np.ndarray):
    path, profile = _analytic(spec)
    rel = k * spec.point_spacing
    s, v, a = profile.evaluate(now + rel)
    x, y, theta, kappa = path.pose(s)
    return rel, s, v, a, x, y, theta, kappa


def _behind_first_point(x, y, ego: PlantState) -> bool:
    if x[0] == x[1] and y[0] == y[1]:
        return False
    dist2, frac = project_segments(np.column_stack([x, y]), ego.x, ego.y)
    return int(np.argmin(dist2)) == 0 and frac[0] == 0.0


def gen_trajectory(spec: ScenarioSpec, now: float, ego: Optional[PlantState] = None, seq: int = 0) -> TrajectoryMsg:
    """Sample the analytic reference around ``now``.

    When ``ego`` lies behind the start of the window, the backward horizon is
    extended in whole seconds so the vehicle still projects onto the plan.
    """
    spacing = spec.point_spacing
    n_back = int(round(spec.backward_horizon / spacing))
    n_fwd = int(round(spec.forward_horizon / spacing))
    step = max(1, int(round(1.0 / spacing)))
    while True:
        k = np.arange(-n_back, n_fwd + 1, dtype=float)
        rel, s, v, a, x, y, theta, kappa = _sample(spec, now, k)
        room = n_back + n_fwd + 1 + step <= MAX_TRAJECTORY_POINTS
        if ego is None or not room or not _behind_first_point(x, y, ego):
            break
        n_back += step
    gear = spec.gear
    points = tuple(
        TrajectoryPoint(
            float(x[i]),
            float(y[i]),
            wrap_angle(float(theta[i])),
            float(kappa[i]),
            float(s[i]),
            float(v[i]),
            float(a[i]),
            float(rel[i]),
        )
        for i in range(len(k))
    )
    return TrajectoryMsg(seq, now, int(gear), int(spec.mode_hint), points)


class MockPlanner:
    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self.seq = 0

    def plan(self, now: float, ego: Optional[PlantState] = None) -> TrajectoryMsg:
        self.seq += 1
        return gen_trajectory(self.spec, now, ego, self.seq)


def initial_state(spec: ScenarioSpec) -> PlantState:
    """Plant pose on the reference at t = 0, shifted laterally by ``initial_offset``."""
    path, profile = _analytic(spec)
    x, y, theta, _ = (float(c[0]) for c in path.pose(np.array([0.0])))
    x -= math.sin(theta) * spec.initial_offset
    y += math.cos(theta) * spec.initial_offset
    v = spec.profile_start_speed if spec.initial_speed is None else spec.initial_speed
    gear = spec.gear
    return PlantState(
        x=x,
        y=y,
        theta=wrap_angle(theta + spec.initial_heading),
        v=gear * abs(v),
        gear=gear,
    )


def localization_tick(
    truth: PlantState,
    spec: ScenarioSpec,
    now: float,
    rng: np.random.Generator,
    seq: int = 0,
    wheelbase: float = VehicleParams.wheelbase,
) -> Optional[LocalizationMsg]:
    """Truth plus configured noise, or None on a dropout.

    Always consumes the same number of random draws so that the noise stream
    does not depend on which ticks dropped out.
    """
    drop = rng.random() < spec.loc_dropout
    nx, ny, nth = rng.standard_normal(3)
    if drop:
        return None
    return LocalizationMsg(
        seq=seq,
        timestamp=now - spec.loc_latency,
        x=truth.x + spec.noise_xy * nx,
        y=truth.y + spec.noise_xy * ny,
        theta=wrap_angle(truth.theta + spec.noise_theta * nth),
        v=truth.v,
        yaw_rate=truth.v * math.tan(truth.delta_road) / wheelbase,
        a=truth.a_act,
        status=LocStatus.OK,
    )


class MockLocalization:
    """Feeds delayed ground truth through :func:`localization_tick`."""

    def __init__(self, spec: ScenarioSpec, rng: np.random.Generator, wheelbase: float = VehicleParams.wheelbase):
        self.spec = spec
        self.rng = rng
        self.wheelbase = wheelbase
        self.seq = 0
        self._history: deque = deque()

    def tick(self, now: float, truth: PlantState) -> Optional[LocalizationMsg]:
        self._history.append((now, truth))
        cutoff = now - self.spec.loc_latency
        while len(self._history) > 1 and self._history[1][0] <= cutoff + 1e-12:
            self._history.popleft()
        sample_time, sample = self._history[0]
        msg = localization_tick(sample, self.spec, now, self.rng, self.seq + 1, self.wheelbase)
        if msg is None:
            return None
        self.seq += 1
        return replace(msg, timestamp=sample_time)
