"""Frenet-frame tracking errors, longitudinal/lateral laws and command limiting.

Lateral law (curvature units)::

    kappa_cmd = kappa_ref - k_d * d - k_psi * e_psi        forward
    kappa_cmd = kappa_ref - k_d * d + k_psi * e_psi        reverse

``d`` and ``e_psi`` are measured against the reference heading, which is the
vehicle's body heading in both gears. While reversing, the vehicle travels
along ``theta + pi`` so the heading term changes sign; the lateral term keeps
its sign because ``d`` is taken in the body-aligned frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .messages import ControlCommand, ControlMode, Gear, LocalizationMsg, wrap_angle
from .reference import ReferencePoint

Limit = Union[float, tuple[float, float]]


@dataclass(frozen=True)
class FrenetError:
    e_s: float  # along-track, positive when the vehicle trails the reference
    d: float  # cross-track, positive left of the reference tangent
    e_psi: float
    d_dot: float
    e_v: float


@dataclass(frozen=True)
class ControlGains:
    k_s: float = 0.5
    k_v: float = 1.0
    # k_d = 0.2, k_psi = 1.0 saturate the 6 rad/s steering rate from a 1 m offset
    # and diverge; these keep the loop inside the rate limit up to 10 m/s.
    k_d: float = 0.08
    k_psi: float = 0.5

    def __post_init__(self):
        if min(self.k_s, self.k_v, self.k_d, self.k_psi) < 0:
            raise ValueError("gains must be non-negative")


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.8
    steer_ratio: float = 14.0
    accel_min: float = -4.0
    accel_max: float = 2.0
    accel_rate: float = 5.0  # m/s^3
    steer_wheel_max: float = 7.85  # rad, about 450 deg
    steer_wheel_rate: float = 6.0  # rad/s
    road_wheel_max: float = 0.6  # rad
    direct_speed: float = 2.0  # below this, path mode actuates throttle/brake directly
    throttle_gain: float = 2.0  # m/s^2 at full throttle
    brake_gain: float = 4.0  # m/s^2 at full brake
    stop_decel: float = 2.0  # ramped-stop deceleration, m/s^2

    def __post_init__(self):
        if self.wheelbase <= 0 or self.steer_ratio <= 0:
            raise ValueError("wheelbase and steering ratio must be positive")
        limits = (
            -self.accel_min,
            self.accel_max,
            self.accel_rate,
            self.steer_wheel_max,
            self.steer_wheel_rate,
            self.road_wheel_max,
        )
        if min(limits) <= 0:
            raise ValueError("limits must be positive")

    @property
    def accel_limits(self) -> tuple[float, float]:
        return (self.accel_min, self.accel_max)


def frenet_errors(pose: LocalizationMsg, ref: ReferencePoint, path_mode: bool = False) -> FrenetError:
    c, s = math.cos(ref.theta), math.sin(ref.theta)
    dx, dy = pose.x - ref.x, pose.y - ref.y
    d = -s * dx + c * dy
    e_s = 0.0 if path_mode else -(c * dx + s * dy)
    e_psi = wrap_angle(pose.theta - ref.theta)
    return FrenetError(e_s=e_s, d=d, e_psi=e_psi, d_dot=pose.v * math.sin(e_psi), e_v=ref.v - pose.v)


def longitudinal_cmd(
    err: FrenetError,
    ref: ReferencePoint,
    g: ControlGains,
    mode: ControlMode = ControlMode.TRAJECTORY,
    v: float = 0.0,
    gear: int = Gear.FORWARD,
) -> float:
    """Raw acceleration request.

    Path mode tracks the reference speed only; ``v`` is the signed vehicle
    speed and the reference speed takes the sign of ``gear``.
    """
    if mode == ControlMode.TRAJECTORY:
        return ref.a + g.k_s * err.e_s + g.k_v * err.e_v
    direction = -1.0 if gear == Gear.REVERSE else 1.0
    return g.k_v * (direction * ref.v - v)


def lateral_cmd(
    err: FrenetError,
    ref: ReferencePoint,
    g: ControlGains,
    p: VehicleParams,
    gear: int = Gear.FORWARD,
) -> float:
    heading_sign = -1.0 if gear == Gear.REVERSE else 1.0
    kappa_cmd = ref.kappa - g.k_d * err.d - heading_sign * g.k_psi * err.e_psi
    delta = math.atan(p.wheelbase * kappa_cmd)
    delta = min(max(delta, -p.road_wheel_max), p.road_wheel_max)
    return p.steer_ratio * delta


def apply_limits(raw: float, prev: float, abs_limit: Limit, rate_limit: float, dt: float) -> float:
    """Clamp to the absolute band, then to ``prev +- rate_limit * dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    lo, hi = (-abs_limit, abs_limit) if not isinstance(abs_limit, tuple) else abs_limit
    value = min(max(raw, lo), hi)
    step = rate_limit * dt
    return min(max(value, prev - step), prev + step)


def direct_mapping(accel_cmd: float, gear: int, p: VehicleParams) -> tuple[float, float]:
    """(throttle, brake) for an acceleration request, relative to the driving direction."""
    a = -accel_cmd if gear == Gear.REVERSE else accel_cmd
    if a >= 0:
        return min(a / p.throttle_gain, 1.0), 0.0
    return 0.0, min(-a / p.brake_gain, 1.0)


@dataclass(frozen=True)
class ControlOutput:
    command: ControlCommand
    error: FrenetError
    accel_raw: float
    steer_raw: float


def compute(
    loc: LocalizationMsg,
    ref: ReferencePoint,
    mode: ControlMode,
    gains: ControlGains,
    params: VehicleParams,
    prev_cmd: ControlCommand,
    dt: float,
    gear: int = Gear.FORWARD,
    seq: int = 0,
) -> ControlOutput:
    """One control cycle with all intermediate values exposed for logging."""
    path_like = mode != ControlMode.TRAJECTORY
    err = frenet_errors(loc, ref, path_mode=path_like)
    if mode == ControlMode.STOP:
        accel_raw = -math.copysign(params.stop_decel, loc.v) if loc.v != 0.0 else 0.0
    else:
        accel_raw = longitudinal_cmd(err, ref, gains, mode, loc.v, gear)
    steer_raw = lateral_cmd(err, ref, gains, params, gear)

    accel = apply_limits(accel_raw, prev_cmd.accel_cmd, params.accel_limits, params.accel_rate, dt)
    steer = apply_limits(
        steer_raw, prev_cmd.steer_wheel_cmd, params.steer_wheel_max, params.steer_wheel_rate, dt
    )
    direct = mode == ControlMode.PATH and abs(loc.v) < params.direct_speed
    throttle, brake = direct_mapping(accel, gear, params) if direct else (0.0, 0.0)
    cmd = ControlCommand(
        seq=seq,
        timestamp=loc.timestamp,
        accel_cmd=accel,
        steer_wheel_cmd=steer,
        gear_cmd=int(gear),
        direct_actuation=direct,
        throttle=throttle,
        brake=brake,
        mode=int(mode),
    )
    return ControlOutput(cmd, err, accel_raw, steer_raw)


def control_step(
    loc: LocalizationMsg,
    ref: ReferencePoint,
    mode: ControlMode,
    gains: ControlGains,
    params: VehicleParams,
    prev_cmd: ControlCommand,
    dt: float,
    gear: int = Gear.FORWARD,
    seq: int = 0,
) -> ControlCommand:
    return compute(loc, ref, mode, gains, params, prev_cmd, dt, gear, seq).command
