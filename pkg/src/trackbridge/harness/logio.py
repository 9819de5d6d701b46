"""Cycle log format, parser and run report.

One header line of column names followed by one comma-separated row per
control cycle. Reals are written with 17 significant digits so a parsed log
reproduces the in-memory values exactly. Cycles without an active reference
carry ``nan`` in the reference, error and command columns.

Columns
-------
t                 cycle time [s]
fsm               supervisor state name
mode              active control mode name (NONE when not actuating)
traj_rx, loc_rx   1 if a decodable message arrived this cycle
traj_ok, loc_ok   validity flags seen by the supervisor
traj_seq, loc_seq sequence numbers of the trajectory/localization in use
horizon           remaining trajectory horizon [s]
loc_*             localization in use (x, y, theta, v)
ref_*             reference point (x, y, theta, kappa, s, v, a) and source (T/P/-)
e_s .. e_v        Frenet errors
accel_raw, steer_raw   unlimited law outputs
cmd               1 if a command was emitted
accel_cmd .. brake     emitted command
true_*            plant ground truth before the step (x, y, theta, v, delta, a)
traj_sent, traj_dropped, loc_sent   mock-side channel activity this cycle
events            '|'-separated markers (engage, fault:<kind>, drop:traj, ...)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

COLUMNS: tuple[tuple[str, type], ...] = (
    ("t", float),
    ("fsm", str),
    ("mode", str),
    ("traj_rx", int),
    ("loc_rx", int),
    ("traj_ok", int),
    ("loc_ok", int),
    ("traj_seq", int),
    ("loc_seq", int),
    ("horizon", float),
    ("loc_x", float),
    ("loc_y", float),
    ("loc_theta", float),
    ("loc_v", float),
    ("ref_source", str),
    ("ref_x", float),
    ("ref_y", float),
    ("ref_theta", float),
    ("ref_kappa", float),
    ("ref_s", float),
    ("ref_v", float),
    ("ref_a", float),
    ("e_s", float),
    ("d", float),
    ("e_psi", float),
    ("d_dot", float),
    ("e_v", float),
    ("accel_raw", float),
    ("steer_raw", float),
    ("cmd", int),
    ("accel_cmd", float),
    ("steer_cmd", float),
    ("gear_cmd", int),
    ("direct", int),
    ("throttle", float),
    ("brake", float),
    ("true_x", float),
    ("true_y", float),
    ("true_theta", float),
    ("true_v", float),
    ("true_delta", float),
    ("true_a", float),
    ("traj_sent", int),
    ("traj_dropped", int),
    ("loc_sent", int),
    ("events", str),
)
NAMES = tuple(name for name, _ in COLUMNS)
HEADER = ",".join(NAMES)
CONVERGED = 0.05


class LogParseError(ValueError):
    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def format_row(row: dict) -> str:
    return ",".join(fmt(row[name]) for name in NAMES)


class LogWriter:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="\n", encoding="ascii")
        self._fh.write(HEADER + "\n")

    def write(self, row: dict) -> None:
        self._fh.write(format_row(row) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def parse_log(data: Union[bytes, str]) -> list[dict]:
    """Parse a complete log; every defect is reported with its byte offset."""
    if isinstance(data, str):
        data = data.encode("ascii")
    end = data.find(b"\n")
    if end < 0:
        raise LogParseError(len(data), "missing header line terminator")
    if data[:end].decode("ascii", "replace") != HEADER:
        raise LogParseError(0, "header does not match the expected columns")
    rows = []
    offset = end + 1
    n = len(NAMES)
    while offset < len(data):
        nl = data.find(b"\n", offset)
        if nl < 0:
            raise LogParseError(offset, "truncated row (no line terminator)")
        fields = data[offset:nl].split(b",")
        if len(fields) != n:
            raise LogParseError(offset, f"expected {n} fields, found {len(fields)}")
        row = {}
        pos = offset
        for (name, kind), raw in zip(COLUMNS, fields):
            text = raw.decode("ascii", "replace")
            try:
                row[name] = kind(text)
            except ValueError:
                raise LogParseError(pos, f"bad value {text!r} for column {name}") from None
            pos += len(raw) + 1
        rows.append(row)
        offset = nl + 1
    return rows


def read_log(path: Union[str, Path]) -> list[dict]:
    return parse_log(Path(path).read_bytes())


@dataclass(frozen=True)
class RunReport:
    cycles: int
    engaged_cycles: int
    rms_d: Optional[float]
    max_abs_d: Optional[float]
    rms_e_v: Optional[float]
    time_to_converge: Optional[float]
    handover_events: int
    final_position_error: Optional[float]
    final_heading_error: Optional[float]
    traj_sent: int
    traj_dropped: int
    traj_received: int
    loc_sent: int
    loc_received: int
    commands: int

    def to_dict(self) -> dict:
        return asdict(self)


def _rms(values: Sequence[float]) -> Optional[float]:
    if not values:
        return None
    return math.sqrt(math.fsum(v * v for v in values) / len(values))


def compute_report(rows: Sequence[dict]) -> RunReport:
    """Summary metrics over the cycles in which a command was emitted."""
    active = [r for r in rows if r["cmd"] == 1]
    ds = [r["d"] for r in active]
    evs = [r["e_v"] for r in active]

    ttc = None
    if active and abs(ds[-1]) < CONVERGED:
        i = len(ds) - 1
        while i > 0 and abs(ds[i - 1]) < CONVERGED:
            i -= 1
        ttc = active[i]["t"] - active[0]["t"]

    handovers = 0
    prev = None
    for r in rows:
        if r["fsm"] == "HANDOVER" and prev != "HANDOVER":
            handovers += 1
        prev = r["fsm"]

    final_pos = final_head = None
    if active:
        last = active[-1]
        final_pos = math.hypot(last["e_s"], last["d"])
        final_head = abs(last["e_psi"])

    return RunReport(
        cycles=len(rows),
        engaged_cycles=len(active),
        rms_d=_rms(ds),
        max_abs_d=max((abs(d) for d in ds), default=None),
        rms_e_v=_rms(evs),
        time_to_converge=ttc,
        handover_events=handovers,
        final_position_error=final_pos,
        final_heading_error=final_head,
        traj_sent=sum(r["traj_sent"] for r in rows),
        traj_dropped=sum(r["traj_dropped"] for r in rows),
        traj_received=sum(r["traj_rx"] for r in rows),
        loc_sent=sum(r["loc_sent"] for r in rows),
        loc_received=sum(r["loc_rx"] for r in rows),
        commands=len(active),
    )


def analyze(path: Union[str, Path], plots: Optional[Union[str, Path]] = None, fmt: str = "svg"):
    """Recompute the report from a log file alone and optionally render plots."""
    rows = read_log(path)
    report = compute_report(rows)
    files = []
    if plots is not None:
        from .plotting import render_all

        files = render_all(rows, plots, fmt=fmt)
    return report, files
