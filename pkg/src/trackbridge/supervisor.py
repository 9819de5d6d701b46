"""Supervisory state machine and the controller cycle it drives.

The transition table lives in :func:`transition`, a pure function of the
current state and a flat set of input flags, so it can be enumerated
exhaustively. :class:`Controller` turns raw mailbox contents into those flags,
steps the machine and runs the tracking law when the machine says so.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

from .control import ControlGains, ControlOutput, VehicleParams, compute
from .messages import (
    ControlCommand,
    ControlMode,
    ControllerStatus,
    FsmState,
    Gear,
    HmiAction,
    LocalizationMsg,
    ModeHint,
    Reason,
    TrajectoryMsg,
    WatchdogConfig,
    neutral_command,
    validate_localization,
)
from .reference import (
    HYSTERESIS_WINDOW,
    OutOfHorizon,
    ReferencePoint,
    TrajectoryStore,
    ref_by_projection,
    ref_by_time,
)

CYCLE = 0.01


class Directive(IntEnum):
    NEUTRAL = 0
    TRACK_TRAJECTORY = 1
    TRACK_PATH = 2
    STOP = 3


ENGAGED = (FsmState.ENGAGED_TRAJECTORY, FsmState.ENGAGED_PATH)
ACTIVE = ENGAGED + (FsmState.DEGRADED_STOP,)

_DIRECTIVE = {
    FsmState.INACTIVE: Directive.NEUTRAL,
    FsmState.ENGAGED_TRAJECTORY: Directive.TRACK_TRAJECTORY,
    FsmState.ENGAGED_PATH: Directive.TRACK_PATH,
    FsmState.DEGRADED_STOP: Directive.STOP,
    FsmState.HANDOVER: Directive.NEUTRAL,
}

_MODE_OF = {
    Directive.TRACK_TRAJECTORY: ControlMode.TRAJECTORY,
    Directive.TRACK_PATH: ControlMode.PATH,
    Directive.STOP: ControlMode.STOP,
}


@dataclass(frozen=True)
class SupervisorConfig:
    watchdog: WatchdogConfig = WatchdogConfig()
    path_speed_threshold: float = 2.0
    v_standstill: float = 0.05
    # acceleration lag assumed when budgeting a ramped stop
    actuator_lag: float = 0.2


def select_mode(traj: TrajectoryMsg, speed_threshold: float = 2.0) -> ControlMode:
    if traj.gear == Gear.REVERSE:
        return ControlMode.PATH
    if traj.mode_hint == ModeHint.TRAJECTORY:
        return ControlMode.TRAJECTORY
    if traj.mode_hint == ModeHint.PATH:
        return ControlMode.PATH
    if max(p.v for p in traj.points) < speed_threshold:
        return ControlMode.PATH
    return ControlMode.TRAJECTORY


def stop_time(speed: float, params: VehicleParams, cfg: SupervisorConfig) -> float:
    """Time to bring ``speed`` to zero with the ramped-stop profile."""
    return abs(speed) / params.stop_decel + params.stop_decel / params.accel_rate + cfg.actuator_lag


@dataclass(frozen=True)
class FsmInputs:
    hmi: Optional[int] = None
    loc_ok: bool = True
    loc_reason: Reason = Reason.NONE
    traj_ok: bool = True
    traj_reason: Reason = Reason.NONE
    actuator_fault: bool = False
    horizon_remaining: float = math.inf
    stop_time: float = 0.0
    speed: float = 0.0
    mode: ControlMode = ControlMode.TRAJECTORY


def _engaged(mode: ControlMode) -> FsmState:
    return FsmState.ENGAGED_PATH if mode == ControlMode.PATH else FsmState.ENGAGED_TRAJECTORY


def transition(fsm: FsmState, inp: FsmInputs, cfg: SupervisorConfig = SupervisorConfig()) -> tuple[FsmState, Reason]:
    """Next state and the cause to latch (``Reason.NONE`` when nothing failed)."""
    if inp.hmi == HmiAction.EMERGENCY_STOP:
        return FsmState.HANDOVER, Reason.OPERATOR
    if inp.hmi == HmiAction.DISENGAGE:
        return FsmState.INACTIVE, Reason.NONE

    if fsm == FsmState.INACTIVE:
        if inp.hmi != HmiAction.ENGAGE:
            return FsmState.INACTIVE, Reason.NONE
        if inp.actuator_fault:
            return FsmState.INACTIVE, Reason.ACTUATOR_FAULT
        if not inp.loc_ok:
            return FsmState.INACTIVE, inp.loc_reason
        if not inp.traj_ok:
            return FsmState.INACTIVE, inp.traj_reason
        return _engaged(inp.mode), Reason.NONE

    if fsm == FsmState.HANDOVER:
        return FsmState.HANDOVER, Reason.NONE

    if inp.actuator_fault:
        return FsmState.HANDOVER, Reason.ACTUATOR_FAULT
    if not inp.loc_ok:
        return FsmState.HANDOVER, inp.loc_reason
    if inp.horizon_remaining <= 0.0:
        return FsmState.HANDOVER, Reason.HORIZON_EXPIRED

    if fsm == FsmState.DEGRADED_STOP:
        if inp.speed < cfg.v_standstill:
            return FsmState.HANDOVER, Reason.STALE
        return FsmState.DEGRADED_STOP, Reason.NONE

    if inp.horizon_remaining < inp.stop_time + cfg.watchdog.stop_margin:
        if inp.horizon_remaining >= inp.stop_time:
            return FsmState.DEGRADED_STOP, Reason.STALE
        return FsmState.HANDOVER, Reason.HORIZON_EXPIRED
    return _engaged(inp.mode), Reason.NONE


@dataclass
class SupervisorState:
    fsm: FsmState = FsmState.INACTIVE
    last_valid_loc: Optional[LocalizationMsg] = None
    traj_store: TrajectoryStore = field(default_factory=TrajectoryStore)
    prev_cmd: ControlCommand = field(default_factory=neutral_command)
    error_latch: Reason = Reason.NONE
    last_match_s: Optional[float] = None


@dataclass(frozen=True)
class CycleInputs:
    now: float
    new_traj: Optional[TrajectoryMsg] = None
    new_loc: Optional[LocalizationMsg] = None
    hmi: Optional[int] = None
    actuator_fault: bool = False


@dataclass(frozen=True)
class StepInfo:
    """What the supervisor saw this cycle; logged alongside the command."""

    traj_accepted: bool
    traj_valid: bool
    loc_valid: bool
    loc_reason: Reason
    horizon_remaining: float


def fsm_step(
    state: SupervisorState,
    inputs: CycleInputs,
    cfg: SupervisorConfig = SupervisorConfig(),
    params: VehicleParams = VehicleParams(),
) -> tuple[SupervisorState, Directive, StepInfo]:
    """Validate fresh inputs, update the store and advance the state machine.

    Returns a new state; ``state`` itself is left untouched.
    """
    now = inputs.now
    wd = cfg.watchdog
    store = copy.copy(state.traj_store)
    last_loc = state.last_valid_loc

    accepted = False
    if inputs.new_traj is not None:
        accepted = store.update(inputs.new_traj, now, wd)

    loc_reason = Reason.NONE
    if inputs.new_loc is not None:
        res = validate_localization(inputs.new_loc, now, wd)
        if res and (last_loc is None or inputs.new_loc.timestamp >= last_loc.timestamp):
            last_loc = inputs.new_loc
        elif not res:
            loc_reason = res.reason
    if loc_reason == Reason.NONE:
        if last_loc is None:
            loc_reason = Reason.EMPTY
        else:
            loc_reason = validate_localization(last_loc, now, wd).reason
    loc_ok = loc_reason == Reason.NONE

    traj_reason = Reason.EMPTY
    mode = ControlMode.TRAJECTORY
    if store.current is not None:
        # point invariants were checked on acceptance; only age and horizon change
        cur = store.current
        if now - cur.timestamp > wd.traj_max_age:
            traj_reason = Reason.STALE
        elif cur.horizon_end < now + wd.min_forward_horizon:
            traj_reason = Reason.HORIZON_TOO_SHORT
        else:
            traj_reason = Reason.NONE
        mode = select_mode(store.current, cfg.path_speed_threshold)
    remaining = store.horizon_remaining(now)
    speed = abs(last_loc.v) if last_loc is not None else 0.0

    flags = FsmInputs(
        hmi=inputs.hmi,
        loc_ok=loc_ok,
        loc_reason=loc_reason,
        traj_ok=traj_reason == Reason.NONE,
        traj_reason=traj_reason,
        actuator_fault=inputs.actuator_fault,
        horizon_remaining=remaining,
        stop_time=stop_time(speed, params, cfg),
        speed=speed,
        mode=mode,
    )
    fsm, reason = transition(state.fsm, flags, cfg)

    latch = state.error_latch
    prev_cmd = state.prev_cmd
    match_s = state.last_match_s
    if fsm in ACTIVE and state.fsm not in ACTIVE:
        latch = Reason.NONE
        prev_cmd = neutral_command()
        match_s = None
    if reason != Reason.NONE:
        latch = reason

    new_state = replace(
        state,
        fsm=fsm,
        last_valid_loc=last_loc,
        traj_store=store,
        prev_cmd=prev_cmd,
        error_latch=latch,
        last_match_s=match_s,
    )
    info = StepInfo(accepted, traj_reason == Reason.NONE, loc_ok, loc_reason, remaining)
    return new_state, _DIRECTIVE[fsm], info


@dataclass(frozen=True)
class CycleResult:
    now: float
    fsm: FsmState
    directive: Directive
    info: StepInfo
    command: Optional[ControlCommand]
    ref: Optional[ReferencePoint]
    output: Optional[ControlOutput]
    status: ControllerStatus


class Controller:
    """Runs one supervised control cycle per call to :meth:`cycle`."""

    def __init__(
        self,
        gains: ControlGains = ControlGains(),
        params: VehicleParams = VehicleParams(),
        cfg: SupervisorConfig = SupervisorConfig(),
        dt: float = CYCLE,
    ):
        self.gains = gains
        self.params = params
        self.cfg = cfg
        self.dt = dt
        self.state = SupervisorState()
        self._cmd_seq = 0
        self._status_seq = 0

    def _reference(self, directive: Directive, traj: TrajectoryMsg, loc: LocalizationMsg) -> ReferencePoint:
        if directive == Directive.TRACK_TRAJECTORY:
            return ref_by_time(traj, loc.timestamp)
        window = None
        s_prev = self.state.last_match_s
        if s_prev is not None:
            window = (s_prev - HYSTERESIS_WINDOW, s_prev + HYSTERESIS_WINDOW)
        ref = ref_by_projection(traj, loc.x, loc.y, window)
        self.state.last_match_s = ref.s
        return ref

    def cycle(self, inputs: CycleInputs) -> CycleResult:
        self.state, directive, info = fsm_step(self.state, inputs, self.cfg, self.params)
        st = self.state
        command = ref = output = None
        if directive != Directive.NEUTRAL:
            traj = st.traj_store.current
            loc = st.last_valid_loc
            try:
                ref = self._reference(directive, traj, loc)
            except OutOfHorizon:
                # backward horizon too short for time interpolation
                st.fsm, st.error_latch = FsmState.HANDOVER, Reason.HORIZON_EXPIRED
                directive = Directive.NEUTRAL
            else:
                self._cmd_seq += 1
                output = compute(
                    loc,
                    ref,
                    _MODE_OF[directive],
                    self.gains,
                    self.params,
                    st.prev_cmd,
                    self.dt,
                    gear=traj.gear,
                    seq=self._cmd_seq,
                )
                command = output.command
                st.prev_cmd = command

        self._status_seq += 1
        traj = st.traj_store.current
        loc = st.last_valid_loc
        status = ControllerStatus(
            seq=self._status_seq,
            timestamp=inputs.now,
            fsm=int(st.fsm),
            mode=int(_MODE_OF.get(directive, ControlMode.NONE)),
            reason=int(st.error_latch),
            lateral_error=output.error.d if output is not None else 0.0,
            traj_seq=traj.seq if traj is not None else 0,
            loc_seq=loc.seq if loc is not None else 0,
        )
        return CycleResult(inputs.now, st.fsm, directive, info, command, ref, output, status)
