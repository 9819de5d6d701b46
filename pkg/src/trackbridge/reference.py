"""Reference point extraction from the latest valid trajectory."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .messages import (
    TrajectoryMsg,
    TrajectoryPoint,
    ValidationResult,
    WatchdogConfig,
    validate_trajectory,
    wrap_angle,
)

# arc-length half window around the previous match once one exists
HYSTERESIS_WINDOW = 20.0


class Source(IntEnum):
    TRAJECTORY = 1
    PATH = 2


class OutOfHorizon(ValueError):
    """Query time lies outside the sampled trajectory."""

    def __init__(self, tau: float, first: float, last: float):
        self.tau = tau
        super().__init__(f"tau={tau:.6g} outside [{first:.6g}, {last:.6g}]")


@dataclass(frozen=True)
class ReferencePoint:
    x: float
    y: float
    theta: float
    kappa: float
    s: float
    v: float
    a: float
    source_mode: Source


def _lerp(a: float, b: float, f: float) -> float:
    # exact at both ends
    return (1.0 - f) * a + f * b


def interpolate(p0: TrajectoryPoint, p1: TrajectoryPoint, f: float, source: Source) -> ReferencePoint:
    """Blend two samples; heading follows the shorter arc."""
    if f == 0.0:
        p = p0
        return ReferencePoint(p.x, p.y, p.theta, p.kappa, p.s, p.v, p.a, source)
    if f == 1.0:
        p = p1
        return ReferencePoint(p.x, p.y, p.theta, p.kappa, p.s, p.v, p.a, source)
    dtheta = wrap_angle(p1.theta - p0.theta)
    return ReferencePoint(
        _lerp(p0.x, p1.x, f),
        _lerp(p0.y, p1.y, f),
        wrap_angle(p0.theta + f * dtheta),
        _lerp(p0.kappa, p1.kappa, f),
        _lerp(p0.s, p1.s, f),
        _lerp(p0.v, p1.v, f),
        _lerp(p0.a, p1.a, f),
        source,
    )


def ref_by_time(traj: TrajectoryMsg, t: float) -> ReferencePoint:
    """Reference at absolute time ``t`` by linear interpolation in time."""
    pts = traj.points
    tau = t - traj.timestamp
    first, last = pts[0].relative_time, pts[-1].relative_time
    if not first <= tau <= last:
        raise OutOfHorizon(tau, first, last)
    times = [p.relative_time for p in pts]
    i = bisect.bisect_right(times, tau) - 1
    if i >= len(pts) - 1:
        i = len(pts) - 2
    t0, t1 = times[i], times[i + 1]
    if tau == t0:
        f = 0.0
    elif tau == t1:
        f = 1.0
    else:
        f = (tau - t0) / (t1 - t0)
    return interpolate(pts[i], pts[i + 1], f, Source.TRAJECTORY)


def project_segments(xy: np.ndarray, x: float, y: float) -> tuple[np.ndarray, np.ndarray]:
    """Squared distance and clamped fraction of the foot point on every segment."""
    a = xy[:-1]
    d = xy[1:] - a
    len2 = np.einsum("ij,ij->i", d, d)
    rel = np.array([x, y]) - a
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(len2 > 0.0, np.einsum("ij,ij->i", rel, d) / len2, 0.0)
    f = np.clip(f, 0.0, 1.0)
    foot = a + f[:, None] * d
    diff = foot - np.array([x, y])
    return np.einsum("ij,ij->i", diff, diff), f


def ref_by_projection(
    traj: TrajectoryMsg,
    x: float,
    y: float,
    s_window: Optional[tuple[float, float]] = None,
) -> ReferencePoint:
    """Closest point of the trajectory polyline to ``(x, y)``.

    Ties go to the lowest segment index. ``s_window`` restricts the search to
    segments overlapping that arc-length interval; if none overlap, the whole
    polyline is searched.
    """
    pts = traj.points
    if len(pts) == 1:
        p = pts[0]
        return ReferencePoint(p.x, p.y, p.theta, p.kappa, p.s, p.v, p.a, Source.PATH)
    xy = np.array([(p.x, p.y) for p in pts], dtype=float)
    dist2, frac = project_segments(xy, x, y)
    if s_window is not None:
        s = np.array([p.s for p in pts])
        lo, hi = s_window
        mask = (s[1:] >= lo) & (s[:-1] <= hi)
        if mask.any():
            dist2 = np.where(mask, dist2, np.inf)
    i = int(np.argmin(dist2))
    return interpolate(pts[i], pts[i + 1], float(frac[i]), Source.PATH)


class TrajectoryStore:
    """Holds the most recent trajectory that passed validation."""

    def __init__(self):
        self.current: Optional[TrajectoryMsg] = None
        self.received_at: Optional[float] = None
        self.last_result: ValidationResult = ValidationResult(True)

    def __bool__(self) -> bool:
        return self.current is not None

    def update(self, msg: TrajectoryMsg, now: float, cfg: WatchdogConfig) -> bool:
        res = validate_trajectory(msg, now, cfg)
        self.last_result = res
        if not res:
            return False
        if self.current is not None and msg.seq <= self.current.seq:
            return False
        self.current = msg
        self.received_at = now
        return True

    def horizon_remaining(self, now: float) -> float:
        if self.current is None:
            return -math.inf
        return self.current.horizon_end - now


def store_update(store: TrajectoryStore, msg: TrajectoryMsg, now: float, cfg: WatchdogConfig) -> bool:
    return store.update(msg, now, cfg)
