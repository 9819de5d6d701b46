import math
from dataclasses import replace

from hypothesis import given
from hypothesis import strategies as st
import pytest

from trackbridge.control import VehicleParams
from trackbridge.messages import ControlCommand, Gear
from trackbridge.vehicle_sim import (
    ActuatorModel,
    PlantState,
    SimulatedVehicle,
    gateway_apply,
    plant_step,
)

PAR = VehicleParams()


def cmd(accel=0.0, steer=0.0, gear=Gear.FORWARD, direct=False, throttle=0.0, brake=0.0):
    return ControlCommand(1, 0.0, accel, steer, int(gear), direct, throttle, brake, 1)


def test_steer_ratio_setpoint():
    out = gateway_apply(cmd(steer=1.4), ActuatorModel(), PlantState(), 0.01)
    assert out.delta_setpoint == pytest.approx(0.1)


def test_first_tick_of_steering_lag():
    out = gateway_apply(cmd(steer=1.4), ActuatorModel(tau_steer=0.1), PlantState(), 0.01)
    assert out.delta_road == pytest.approx(0.1 * (1 - math.exp(-0.1)), rel=1e-12)
    assert out.delta_road == pytest.approx(0.00952, abs=1e-5)


def test_lag_reaches_setpoint_exponentially():
    act = ActuatorModel()
    st_ = PlantState()
    for _ in range(20):  # 0.2 s = one tau_a
        out = gateway_apply(cmd(accel=1.0), act, st_, 0.01)
        st_ = replace(st_, a_act=out.a_act, delta_road=out.delta_road)
    assert st_.a_act == pytest.approx(1 - math.exp(-1.0), rel=1e-9)


def test_fault_freezes_outputs():
    state = PlantState(delta_road=0.2, a_act=-1.0)
    out = gateway_apply(cmd(accel=2.0, steer=-5.0), ActuatorModel(fault=True), state, 0.01)
    assert out.fault and out.delta_road == 0.2 and out.a_act == -1.0


def test_direct_actuation_inverse_map():
    out = gateway_apply(cmd(direct=True, throttle=0.5), ActuatorModel(tau_accel=0.0), PlantState(), 0.01)
    assert out.accel_setpoint == pytest.approx(1.0)
    out = gateway_apply(cmd(direct=True, brake=0.25), ActuatorModel(tau_accel=0.0), PlantState(), 0.01)
    assert out.accel_setpoint == pytest.approx(-1.0)
    out = gateway_apply(
        cmd(direct=True, throttle=0.5, gear=Gear.REVERSE), ActuatorModel(tau_accel=0.0), PlantState(gear=-1), 0.01
    )
    assert out.accel_setpoint == pytest.approx(-1.0)


def test_no_command_relaxes_accel_and_holds_steering():
    state = PlantState(delta_road=0.3, a_act=1.5)
    out = gateway_apply(None, ActuatorModel(), state, 0.01)
    assert out.delta_road == 0.3 and 0 < out.a_act < 1.5


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1, 1), st.floats(-10, 10))
def test_actuators_never_exceed_limits(accel, steer, d0, a0):
    state = PlantState(delta_road=max(-0.6, min(0.6, d0)), a_act=max(-4, min(2, a0)))
    out = gateway_apply(cmd(accel, steer), ActuatorModel(tau_steer=0.0, tau_accel=0.0), state, 0.01)
    assert abs(out.delta_road) <= PAR.road_wheel_max
    assert PAR.accel_min <= out.a_act <= PAR.accel_max


def test_straight_motion_one_second():
    s = plant_step(PlantState(v=1.0), 1.0)
    assert s.x == pytest.approx(1.0, abs=1e-12) and s.y == 0.0 and s.theta == 0.0


def test_circle_closes():
    R, L, v = 20.0, PAR.wheelbase, 5.0
    delta = math.atan(L / R)
    s = PlantState(v=v, delta_road=delta)
    period = 2 * math.pi * R / v
    n = round(period / 0.01)
    for _ in range(n):
        s = plant_step(s, 0.01)
    rest = period - n * 0.01
    if rest > 1e-12:
        s = plant_step(s, rest)
    assert math.hypot(s.x, s.y) < 1e-3
    assert abs(s.theta) < 1e-6


def test_circle_radius():
    R = 20.0
    s = PlantState(v=5.0, delta_road=math.atan(PAR.wheelbase / R))
    for _ in range(300):
        s = plant_step(s, 0.01)
        assert math.hypot(s.x, s.y - R) == pytest.approx(R, abs=1e-6)


def test_standstill_is_unchanged():
    s0 = PlantState(x=1.0, y=2.0, theta=0.5, v=0.0, delta_road=0.4)
    assert plant_step(s0, 0.5) == s0


def test_no_reversal_when_braking_through_zero():
    s = PlantState(v=0.05, a_act=-4.0)
    s = plant_step(s, 0.1)
    assert s.v == 0.0
    s = plant_step(PlantState(v=-0.05, a_act=4.0, gear=Gear.REVERSE), 0.1)
    assert s.v == 0.0


def test_speed_changes_only_through_accel():
    s = plant_step(PlantState(v=3.0, delta_road=0.3), 2.0)
    assert s.v == 3.0


def test_deterministic_vehicle():
    def run():
        veh = SimulatedVehicle(PlantState(v=2.0))
        out = []
        for k in range(100):
            out.append(veh.step(cmd(accel=0.3 * math.sin(k), steer=2 * math.cos(k / 7)), 0.01))
        return out

    assert run() == run()
