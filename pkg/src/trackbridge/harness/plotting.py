"""Line plots of a cycle log, written as vector graphics."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (7.0, 4.0)


def _col(rows: Sequence[dict], name: str) -> list[float]:
    return [r[name] for r in rows]


def _finish(fig, ax, path: Path) -> Path:
    ax.grid(True, alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_path(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(_col(rows, "ref_x"), _col(rows, "ref_y"), "--", lw=1.2, label="reference")
    ax.plot(_col(rows, "true_x"), _col(rows, "true_y"), lw=1.0, label="driven")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    return _finish(fig, ax, path)


def plot_lateral_error(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(_col(rows, "t"), _col(rows, "d"), lw=1.0, label="d")
    ax.axhline(0.05, color="k", lw=0.5, ls=":")
    ax.axhline(-0.05, color="k", lw=0.5, ls=":")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("lateral error [m]")
    return _finish(fig, ax, path)


def plot_speed(rows, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(_col(rows, "t"), _col(rows, "ref_v"), "--", lw=1.2, label="v_ref")
    ax.plot(_col(rows, "t"), [abs(v) for v in _col(rows, "true_v")], lw=1.0, label="|v|")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("speed [m/s]")
    return _finish(fig, ax, path)


def plot_commands(rows, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(FIGSIZE[0], FIGSIZE[1] * 1.5))
    t = _col(rows, "t")
    ax1.plot(t, _col(rows, "accel_raw"), lw=0.8, label="raw")
    ax1.plot(t, _col(rows, "accel_cmd"), lw=1.0, label="limited")
    ax1.set_ylabel("accel [m/s$^2$]")
    ax1.grid(True, alpha=0.3)
    ax1.legend(loc="best", fontsize=8)
    ax2.plot(t, _col(rows, "steer_raw"), lw=0.8, label="raw")
    ax2.plot(t, _col(rows, "steer_cmd"), lw=1.0, label="limited")
    ax2.set_ylabel("steering wheel [rad]")
    ax2.set_xlabel("t [s]")
    return _finish(fig, ax2, path)


PLOTS = {
    "path": plot_path,
    "lateral_error": plot_lateral_error,
    "speed": plot_speed,
    "commands": plot_commands,
}


def render_all(rows: Sequence[dict], out_dir: Union[str, Path], fmt: str = "svg") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # fixed hash salt keeps SVG output reproducible
    with matplotlib.rc_context({"svg.hashsalt": "trackbridge", "svg.fonttype": "none"}):
        return [fn(rows, out / f"{name}.{fmt}") for name, fn in PLOTS.items()]
