"""Simulated vehicle gateway and kinematic bicycle plant.

The gateway converts high-level commands into road-wheel angle and
acceleration setpoints and passes them through first-order actuator lags.
The plant integrates a rear-axle kinematic bicycle with RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .control import VehicleParams
from .messages import ControlCommand, Gear, wrap_angle

SUBSTEP = 0.001


@dataclass(frozen=True)
class PlantState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    delta_road: float = 0.0
    a_act: float = 0.0
    gear: int = Gear.FORWARD


@dataclass
class ActuatorModel:
    tau_steer: float = 0.1
    tau_accel: float = 0.2
    params: VehicleParams = VehicleParams()
    fault: bool = False


@dataclass(frozen=True)
class GatewayOutput:
    delta_road: float
    a_act: float
    gear: int
    fault: bool
    delta_setpoint: float
    accel_setpoint: float


def _lag(current: float, target: float, tau: float, dt: float) -> float:
    if tau <= 0:
        return target
    return current + (target - current) * (1.0 - math.exp(-dt / tau))


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def gateway_apply(
    cmd: Optional[ControlCommand],
    act: ActuatorModel,
    state: PlantState,
    dt: float,
) -> GatewayOutput:
    """Advance the actuators by one command period.

    ``cmd=None`` means nobody is actuating: acceleration relaxes to zero and
    the steering holds its position.
    """
    p = act.params
    if act.fault:
        return GatewayOutput(state.delta_road, state.a_act, state.gear, True, state.delta_road, state.a_act)

    if cmd is None:
        delta_set, accel_set, gear = state.delta_road, 0.0, state.gear
    else:
        delta_set = cmd.steer_wheel_cmd / p.steer_ratio
        gear = cmd.gear_cmd
        if cmd.direct_actuation:
            direction = -1.0 if gear == Gear.REVERSE else (0.0 if gear == Gear.NEUTRAL else 1.0)
            accel_set = direction * (p.throttle_gain * cmd.throttle - p.brake_gain * cmd.brake)
        else:
            accel_set = cmd.accel_cmd
    delta_set = _clamp(delta_set, -p.road_wheel_max, p.road_wheel_max)
    accel_set = _clamp(accel_set, p.accel_min, p.accel_max)

    delta = _lag(state.delta_road, delta_set, act.tau_steer, dt)
    delta = _clamp(delta, -p.road_wheel_max, p.road_wheel_max)

    accel = _lag(state.a_act, accel_set, act.tau_accel, dt)
    accel = _clamp(accel, p.accel_min, p.accel_max)
    return GatewayOutput(delta, accel, gear, False, delta_set, accel_set)


def _deriv(theta: float, v: float, a: float, tan_delta: float, wheelbase: float):
    return v * math.cos(theta), v * math.sin(theta), v * tan_delta / wheelbase, a


def _no_reverse_through_zero(v_prev: float, v: float, a: float, gear: int) -> float:
    if gear == Gear.FORWARD and v_prev >= 0.0 and v < 0.0 and a < 0.0:
        return 0.0
    if gear == Gear.REVERSE and v_prev <= 0.0 and v > 0.0 and a > 0.0:
        return 0.0
    if gear == Gear.NEUTRAL and v_prev * v < 0.0:
        return 0.0
    return v


def plant_step(
    state: PlantState,
    dt: float,
    wheelbase: float = VehicleParams.wheelbase,
    substep: float = SUBSTEP,
) -> PlantState:
    """Integrate the bicycle model over ``dt`` with fixed RK4 substeps."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = max(1, round(dt / substep))
    h = dt / n
    x, y, th, v = state.x, state.y, state.theta, state.v
    a, gear = state.a_act, state.gear
    td = math.tan(state.delta_road)
    for _ in range(n):
        k1 = _deriv(th, v, a, td, wheelbase)
        k2 = _deriv(th + 0.5 * h * k1[2], v + 0.5 * h * k1[3], a, td, wheelbase)
        k3 = _deriv(th + 0.5 * h * k2[2], v + 0.5 * h * k2[3], a, td, wheelbase)
        k4 = _deriv(th + h * k3[2], v + h * k3[3], a, td, wheelbase)
        x += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        th += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        v_new = v + h * a
        v = _no_reverse_through_zero(v, v_new, a, gear)
    return replace(state, x=x, y=y, theta=wrap_angle(th), v=v)


class SimulatedVehicle:
    """Gateway plus plant, stepped once per control period."""

    def __init__(self, state: PlantState, act: Optional[ActuatorModel] = None):
        self.state = state
        self.act = act if act is not None else ActuatorModel()
        self.last_output: Optional[GatewayOutput] = None

    @property
    def fault(self) -> bool:
        return self.act.fault

    def step(self, cmd: Optional[ControlCommand], dt: float) -> PlantState:
        out = gateway_apply(cmd, self.act, self.state, dt)
        self.last_output = out
        self.state = replace(self.state, delta_road=out.delta_road, a_act=out.a_act, gear=out.gear)
        self.state = plant_step(self.state, dt, self.act.params.wheelbase)
        return self.state
