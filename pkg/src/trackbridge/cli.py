"""Command line entry point: ``trackbridge run|analyze|protocol-dump|replay``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import wire
from .harness import capture as cap
from .harness.logio import LogParseError, analyze
from .harness.runner import InvariantViolation, replay_capture, run_scenario
from .harness.scenario import ScenarioParseError, load_scenario


def _print_report(report) -> None:
    print(json.dumps(report.to_dict(), indent=2))


def cmd_run(args) -> int:
    try:
        spec = load_scenario(args.scenario)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    ports = {k: args.base_port + i for i, k in enumerate(wire.DEFAULT_PORTS)} if args.base_port else None
    try:
        result = run_scenario(
            spec,
            duration=args.duration,
            seed=args.seed,
            out_dir=args.out,
            paced=args.paced,
            udp=args.udp or args.paced,
            ports=ports,
            plots=not args.no_plots,
        )
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        if exc.result is not None:
            print(f"partial log: {exc.result.log_path}", file=sys.stderr)
        return 1
    except wire.TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3
    _print_report(result.report)
    print(f"log: {result.log_path}", file=sys.stderr)
    if result.never_engaged:
        print("controller never engaged", file=sys.stderr)
        return 1
    if result.unexpected_handover:
        print("unexpected handover", file=sys.stderr)
        return 1
    return 0


def cmd_analyze(args) -> int:
    try:
        report, files = analyze(args.log, plots=args.plots, fmt=args.format)
    except LogParseError as exc:
        print(f"error: {args.log}: {exc}", file=sys.stderr)
        return 2
    _print_report(report)
    for f in files:
        print(f"plot: {f}", file=sys.stderr)
    return 0


def cmd_protocol_dump(args) -> int:
    data = Path(args.file).read_bytes()
    if data.startswith(cap.MAGIC):
        try:
            _, records = cap.read_capture(data)
        except cap.CaptureError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        for r in records:
            print(cap.describe(r))
        return 0
    for i, frame in enumerate(cap.iter_frames(data)):
        print(cap.describe(cap.Record(i, cap.RX, 0, frame)))
    return 0


def cmd_replay(args) -> int:
    recorded, replayed = replay_capture(args.capture)
    same = recorded == replayed
    print(f"recorded {len(recorded)} commands, replayed {len(replayed)}: {'identical' if same else 'MISMATCH'}")
    return 0 if same else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackbridge", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file in closed loop")
    r.add_argument("scenario", help="scenario file (key = value lines)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--duration", type=float, help="override the scenario duration [s]")
    r.add_argument("--paced", action="store_true", help="pace the simulated clock to wall time (uses UDP)")
    r.add_argument("--udp", action="store_true", help="use loopback UDP sockets instead of the in-process bus")
    r.add_argument("--base-port", type=int, help="first of five consecutive ports (default 41001..41005)")
    r.add_argument("--out", default="runs/latest", help="output directory (default runs/latest)")
    r.add_argument("--no-plots", action="store_true", help="skip rendering SVG plots")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="recompute the report of a log and render plots")
    a.add_argument("log")
    a.add_argument("--plots", help="directory for plot files")
    a.add_argument("--format", default="svg", choices=("svg", "pdf", "eps"))
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("protocol-dump", help="decode a capture file or a raw concatenation of frames")
    d.add_argument("file")
    d.set_defaults(func=cmd_protocol_dump)

    rp = sub.add_parser("replay", help="feed a capture to a fresh controller and compare commands")
    rp.add_argument("capture")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except BrokenPipeError:
        # output piped into e.g. ``head``
        sys.stderr.close()
        return 0


if __name__ == "__main__":
    sys.exit(main())
