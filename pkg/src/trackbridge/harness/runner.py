"""Deterministic closed-loop scenario runner and open-loop replay."""

from __future__ import annotations

import json
import logging
import math
import socket
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .. import wire
from ..control import ControlGains, VehicleParams
from ..messages import (
    ControlCommand,
    ControlMode,
    FsmState,
    HmiAction,
    HmiCommand,
    LocalizationMsg,
    LocStatus,
    TrajectoryMsg,
)
from ..mocks import MockLocalization, MockPlanner, ScenarioSpec, initial_state
from ..supervisor import ACTIVE, CYCLE, Controller, CycleInputs, SupervisorConfig
from ..vehicle_sim import ActuatorModel, SimulatedVehicle
from . import capture as cap
from .logio import LogWriter, RunReport, compute_report

log = logging.getLogger(__name__)

NAN = float("nan")
RATE_SLACK = 1e-9
KINDS = ("trajectory", "localization", "command", "hmi", "status")
_CONTROLLER_INPUTS = ("trajectory", "localization", "hmi")


class InvariantViolation(RuntimeError):
    def __init__(self, cycle: int, t: float, what: str, result: Optional["RunResult"] = None):
        self.cycle = cycle
        self.t = t
        self.what = what
        self.result = result
        super().__init__(f"cycle {cycle} (t={t:.2f} s): {what}")


class Bus:
    """One receive socket per message channel plus a shared sender.

    ``udp=False`` uses the in-process loopback fabric, which is what makes
    test runs bit-reproducible. With ``background=True`` (UDP only) the
    controller-side channels are serviced by receiver threads.
    """

    def __init__(self, udp: bool = False, host: str = wire.DEFAULT_HOST, ports=None, background: bool = False):
        ports = {**wire.DEFAULT_PORTS, **(ports or {})}
        self.udp = udp
        if udp:
            self.rx = {k: wire.udp_socket(ports[k], host) for k in KINDS}
            self.tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        else:
            net = wire.LoopbackNetwork()
            self.rx = {k: net.socket(ports[k], host) for k in KINDS}
            self.tx = net.socket(-1, host)
        self.addr = {k: s.getsockname() for k, s in self.rx.items()}
        self.receivers = {}
        if background and udp:
            types = {"trajectory": TrajectoryMsg, "localization": LocalizationMsg, "hmi": HmiCommand}
            self.receivers = {k: wire.BackgroundReceiver(self.rx[k], types[k]).start() for k in _CONTROLLER_INPUTS}

    def send(self, kind: str, msg) -> bytes:
        frame = wire.encode(msg)
        try:
            self.tx.sendto(frame, self.addr[kind])
        except OSError as exc:
            raise wire.TransportError(exc.errno, f"send on {kind} failed: {exc}") from exc
        return frame

    def receive(self, kind: str) -> list[bytes]:
        if kind in self.receivers:
            return self.receivers[kind].take()[1]
        return wire.drain(self.rx[kind])

    def close(self) -> None:
        for r in self.receivers.values():
            r.stop()
        for s in self.rx.values():
            s.close()
        self.tx.close()


@dataclass
class RunResult:
    spec: ScenarioSpec
    out_dir: Path
    log_path: Path
    capture_path: Path
    report: RunReport
    rows: list

    @property
    def never_engaged(self) -> bool:
        return self.report.engaged_cycles == 0

    @property
    def unexpected_handover(self) -> bool:
        return self.report.handover_events > 0 and not self.spec.expect_handover


def _cycles(t: float, dt: float) -> int:
    return int(round(t / dt))


def _window(start: float, duration: float, dt: float) -> tuple[int, float]:
    first = _cycles(start, dt)
    last = math.inf if math.isinf(duration) else first + _cycles(duration, dt)
    return first, last


class _Faults:
    def __init__(self, spec: ScenarioSpec, dt: float):
        self.windows = [(f.kind, *_window(f.start, f.duration, dt)) for f in spec.faults]

    def active(self, kind: str, k: int) -> bool:
        return any(kd == kind and lo <= k < hi for kd, lo, hi in self.windows)

    def starting(self, k: int) -> list[str]:
        return [kd for kd, lo, _ in self.windows if lo == k]


def _row(t, res, loc_used, truth, traj_rx, loc_rx, traj_sent, traj_dropped, loc_sent, events) -> dict:
    info = res.info
    ref, out, cmd = res.ref, res.output, res.command
    row = {
        "t": t,
        "fsm": res.fsm.name,
        "mode": ControlMode(res.status.mode).name,
        "traj_rx": int(traj_rx),
        "loc_rx": int(loc_rx),
        "traj_ok": int(info.traj_valid),
        "loc_ok": int(info.loc_valid),
        "traj_seq": res.status.traj_seq,
        "loc_seq": res.status.loc_seq,
        "horizon": float(info.horizon_remaining) if math.isfinite(info.horizon_remaining) else NAN,
        "loc_x": loc_used.x if loc_used else NAN,
        "loc_y": loc_used.y if loc_used else NAN,
        "loc_theta": loc_used.theta if loc_used else NAN,
        "loc_v": loc_used.v if loc_used else NAN,
        "ref_source": "-" if ref is None else ref.source_mode.name[0],
    }
    for f in ("x", "y", "theta", "kappa", "s", "v", "a"):
        row["ref_" + f] = getattr(ref, f) if ref is not None else NAN
    for f in ("e_s", "d", "e_psi", "d_dot", "e_v"):
        row[f] = getattr(out.error, f) if out is not None else NAN
    row["accel_raw"] = out.accel_raw if out is not None else NAN
    row["steer_raw"] = out.steer_raw if out is not None else NAN
    row["cmd"] = int(cmd is not None)
    row["accel_cmd"] = cmd.accel_cmd if cmd else NAN
    row["steer_cmd"] = cmd.steer_wheel_cmd if cmd else NAN
    row["gear_cmd"] = cmd.gear_cmd if cmd else 0
    row["direct"] = int(cmd.direct_actuation) if cmd else 0
    row["throttle"] = cmd.throttle if cmd else NAN
    row["brake"] = cmd.brake if cmd else NAN
    row.update(
        true_x=truth.x,
        true_y=truth.y,
        true_theta=truth.theta,
        true_v=truth.v,
        true_delta=truth.delta_road,
        true_a=truth.a_act,
        traj_sent=int(traj_sent),
        traj_dropped=int(traj_dropped),
        loc_sent=int(loc_sent),
        events="|".join(events) if events else "-",
    )
    return row


class LimitChecker:
    """Checks every emitted command against absolute and rate limits."""

    def __init__(self, params: VehicleParams, dt: float):
        self.p = params
        self.dt = dt
        self.prev: Optional[ControlCommand] = None

    def check(self, fsm: FsmState, cmd: Optional[ControlCommand]) -> Optional[str]:
        p, dt = self.p, self.dt
        if cmd is None:
            self.prev = None
            return None
        if fsm not in ACTIVE:
            return f"command emitted in {fsm.name}"
        prev_a = self.prev.accel_cmd if self.prev else 0.0
        prev_s = self.prev.steer_wheel_cmd if self.prev else 0.0
        self.prev = cmd
        if not p.accel_min - RATE_SLACK <= cmd.accel_cmd <= p.accel_max + RATE_SLACK:
            return f"accel_cmd {cmd.accel_cmd} outside [{p.accel_min}, {p.accel_max}]"
        if abs(cmd.steer_wheel_cmd) > p.steer_wheel_max + RATE_SLACK:
            return f"steer_wheel_cmd {cmd.steer_wheel_cmd} beyond {p.steer_wheel_max}"
        if abs(cmd.accel_cmd - prev_a) > p.accel_rate * dt + RATE_SLACK:
            return f"accel rate {abs(cmd.accel_cmd - prev_a) / dt:.6g} beyond {p.accel_rate}"
        if abs(cmd.steer_wheel_cmd - prev_s) > p.steer_wheel_rate * dt + RATE_SLACK:
            return f"steer rate {abs(cmd.steer_wheel_cmd - prev_s) / dt:.6g} beyond {p.steer_wheel_rate}"
        if cmd.throttle * cmd.brake != 0.0:
            return "throttle and brake both applied"
        return None


def run_scenario(
    spec: ScenarioSpec,
    duration: Optional[float] = None,
    seed: Optional[int] = None,
    out_dir: Optional[Union[str, Path]] = None,
    paced: bool = False,
    udp: bool = False,
    ports: Optional[dict] = None,
    plots: bool = False,
    gains: ControlGains = ControlGains(),
    params: VehicleParams = VehicleParams(),
    sup_cfg: SupervisorConfig = SupervisorConfig(),
    dt: float = CYCLE,
) -> RunResult:
    """Run one closed-loop scenario and write ``log.csv``, ``capture.bin`` and ``report.json``.

    Everything ticks off the simulated clock ``t = k * dt``. ``paced`` only
    sleeps to keep that clock aligned with wall time.
    """
    if seed is not None:
        spec = replace(spec, seed=seed)
    duration = spec.duration if duration is None else duration
    out = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="trackbridge-"))
    out.mkdir(parents=True, exist_ok=True)
    log_path, capture_path = out / "log.csv", out / "capture.bin"

    rng = np.random.default_rng(spec.seed)
    planner = MockPlanner(spec)
    locsrc = MockLocalization(spec, rng, params.wheelbase)
    vehicle = SimulatedVehicle(initial_state(spec), ActuatorModel(params=params))
    controller = Controller(gains, params, sup_cfg, dt)
    faults = _Faults(spec, dt)
    checker = LimitChecker(params, dt)
    bus = Bus(udp=udp, ports=ports, background=paced and udp)
    replan = max(1, _cycles(spec.replan_period, dt))
    engage_cycle = _cycles(spec.engage_time, dt)
    # the operator holds the engage request until the supervisor accepts it
    engage_pending = False
    n_cycles = _cycles(duration, dt)
    hmi_seq = 0
    rows: list[dict] = []
    violation = None
    wall0 = time.monotonic()

    writer = LogWriter(log_path)
    capture = cap.CaptureWriter(open(capture_path, "wb"), dt)
    try:
        for k in range(n_cycles):
            t = k * dt
            if paced:
                delay = wall0 + t - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            truth = vehicle.state
            events = [f"fault:{kind}" for kind in faults.starting(k)]
            vehicle.act.fault = faults.active("actuator", k)

            loc_msg = locsrc.tick(t, truth)
            if loc_msg is not None and faults.active("loc_outage", k):
                loc_msg = None
            if loc_msg is not None and faults.active("loc_invalid", k):
                loc_msg = replace(loc_msg, status=LocStatus.INVALID)
            if loc_msg is not None:
                bus.send("localization", loc_msg)

            traj_sent = traj_dropped = False
            if k % replan == 0 and not faults.active("planner_outage", k):
                plan = planner.plan(t, truth)
                traj_sent = True
                if rng.random() < spec.traj_drop:
                    traj_dropped = True
                    events.append("drop:traj")
                else:
                    bus.send("trajectory", plan)

            actions = []
            if k == engage_cycle:
                engage_pending = True
                events.append("engage")
            if "disengage" in faults.starting(k) or "estop" in faults.starting(k):
                engage_pending = False
            if engage_pending:
                actions.append(HmiAction.ENGAGE)
            if "estop" in faults.starting(k):
                actions.append(HmiAction.EMERGENCY_STOP)
            if "disengage" in faults.starting(k):
                actions.append(HmiAction.DISENGAGE)
            for action in actions:
                hmi_seq += 1
                bus.send("hmi", HmiCommand(hmi_seq, t, int(action)))

            raw = {kind: bus.receive(kind) for kind in _CONTROLLER_INPUTS}
            for kind, msg_type in (
                ("trajectory", wire.MsgType.TRAJECTORY),
                ("localization", wire.MsgType.LOCALIZATION),
                ("hmi", wire.MsgType.HMI_COMMAND),
            ):
                for frame in raw[kind]:
                    capture.record(k, cap.RX, msg_type, frame)
            fault_flag = vehicle.fault
            if fault_flag:
                capture.record(k, cap.RX, cap.VEHICLE_STATUS, b"\x01")
            traj_in = wire.latest(raw["trajectory"], TrajectoryMsg)
            loc_in = wire.latest(raw["localization"], LocalizationMsg)
            hmi_in = wire.latest(raw["hmi"], HmiCommand)

            res = controller.cycle(
                CycleInputs(t, traj_in, loc_in, hmi_in.command if hmi_in else None, fault_flag)
            )
            if res.fsm != FsmState.INACTIVE:
                engage_pending = False
            if res.command is not None:
                capture.record(k, cap.TX, wire.MsgType.CONTROL_COMMAND, bus.send("command", res.command))
            capture.record(k, cap.TX, wire.MsgType.CONTROLLER_STATUS, bus.send("status", res.status))

            cmd = wire.latest(bus.receive("command"), ControlCommand)
            bus.receive("status")

            row = _row(
                t,
                res,
                controller.state.last_valid_loc,
                truth,
                traj_in is not None,
                loc_in is not None,
                traj_sent,
                traj_dropped,
                loc_msg is not None,
                events,
            )
            problem = checker.check(res.fsm, res.command)
            if problem:
                row["events"] = (row["events"] + "|" if row["events"] != "-" else "") + "violation"
                violation = InvariantViolation(k, t, problem)
            rows.append(row)
            writer.write(row)
            if violation:
                break
            vehicle.step(cmd, dt)
    finally:
        writer.close()
        capture.close()
        bus.close()

    report = compute_report(rows)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    result = RunResult(spec, out, log_path, capture_path, report, rows)
    if plots:
        from .plotting import render_all

        render_all(rows, out / "plots")
    if violation:
        violation.result = result
        raise violation
    return result


def replay_capture(
    path: Union[str, Path],
    gains: ControlGains = ControlGains(),
    params: VehicleParams = VehicleParams(),
    sup_cfg: SupervisorConfig = SupervisorConfig(),
) -> tuple[list[tuple[int, bytes]], list[tuple[int, bytes]]]:
    """Feed recorded controller inputs to a fresh controller (open loop).

    Returns ``(recorded, replayed)`` lists of ``(cycle, command frame)``.
    """
    dt, records = cap.load_capture(path)
    by_cycle: dict[int, list[cap.Record]] = {}
    recorded = []
    last_cycle = -1
    for r in records:
        last_cycle = max(last_cycle, r.cycle)
        if r.direction == cap.TX and r.channel == wire.MsgType.CONTROL_COMMAND:
            recorded.append((r.cycle, r.data))
        elif r.direction == cap.RX:
            by_cycle.setdefault(r.cycle, []).append(r)

    controller = Controller(gains, params, sup_cfg, dt)
    replayed = []
    for k in range(last_cycle + 1):
        recs = by_cycle.get(k, [])
        frames = {ch: [r.data for r in recs if r.channel == ch] for ch in wire.MsgType}
        fault = any(r.channel == cap.VEHICLE_STATUS and r.data == b"\x01" for r in recs)
        hmi = wire.latest(frames[wire.MsgType.HMI_COMMAND], HmiCommand)
        res = controller.cycle(
            CycleInputs(
                k * dt,
                wire.latest(frames[wire.MsgType.TRAJECTORY], TrajectoryMsg),
                wire.latest(frames[wire.MsgType.LOCALIZATION], LocalizationMsg),
                hmi.command if hmi else None,
                fault,
            )
        )
        if res.command is not None:
            replayed.append((k, wire.encode(res.command)))
    return recorded, replayed
