"""Raw frame capture of everything the controller received and sent.

File layout: ``b"FTNACAP1"``, f64 cycle period, then records of
``u32 cycle | u8 direction | u8 channel | u32 length | bytes``.
Channel is the wire message type, or ``VEHICLE_STATUS`` for the one-byte
actuator fault flag reported by the vehicle interface.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, Union

from .. import wire

MAGIC = b"FTNACAP1"
_HEAD = struct.Struct("<8sd")
_REC = struct.Struct("<IBBI")
RX, TX = 0, 1
VEHICLE_STATUS = 0xF0


class CaptureError(ValueError):
    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


@dataclass(frozen=True)
class Record:
    cycle: int
    direction: int
    channel: int
    data: bytes


class CaptureWriter:
    def __init__(self, fh: BinaryIO, dt: float):
        self._fh = fh
        fh.write(_HEAD.pack(MAGIC, dt))

    def record(self, cycle: int, direction: int, channel: int, data: bytes) -> None:
        self._fh.write(_REC.pack(cycle, direction, channel, len(data)))
        self._fh.write(data)

    def close(self) -> None:
        self._fh.close()


def read_capture(data: bytes) -> tuple[float, list[Record]]:
    if len(data) < _HEAD.size:
        raise CaptureError(0, "file shorter than capture header")
    magic, dt = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise CaptureError(0, f"bad capture magic {magic!r}")
    records = []
    off = _HEAD.size
    while off < len(data):
        if off + _REC.size > len(data):
            raise CaptureError(off, "truncated record header")
        cycle, direction, channel, n = _REC.unpack_from(data, off)
        start = off + _REC.size
        if start + n > len(data):
            raise CaptureError(off, f"record declares {n} bytes, {len(data) - start} remain")
        records.append(Record(cycle, direction, channel, data[start : start + n]))
        off = start + n
    return dt, records


def load_capture(path: Union[str, Path]) -> tuple[float, list[Record]]:
    return read_capture(Path(path).read_bytes())


def describe(record: Record) -> str:
    """One human-readable line for ``protocol-dump``."""
    head = f"{record.cycle:7d} {'rx' if record.direction == RX else 'tx'} {len(record.data):6d}B "
    if record.channel == VEHICLE_STATUS:
        return head + f"vehicle_status fault={record.data[0] if record.data else '?'}"
    try:
        msg = wire.decode(record.data)
    except wire.DecodeError as exc:
        return head + f"<{exc}>"
    name = type(msg).__name__
    if isinstance(msg, wire.TrajectoryMsg):
        return head + (
            f"{name} seq={msg.seq} t={msg.timestamp:.3f} gear={msg.gear} "
            f"hint={msg.mode_hint} points={len(msg.points)}"
        )
    fields = ", ".join(f"{k}={v!r}" for k, v in vars(msg).items())
    return head + f"{name}({fields})"


def iter_frames(data: bytes) -> Iterator[bytes]:
    """Split a plain concatenation of frames using their length fields."""
    off = 0
    while off < len(data):
        if off + wire.HEADER.size > len(data):
            yield data[off:]
            return
        _, _, _, n = wire.HEADER.unpack_from(data, off)
        end = min(len(data), off + wire.FRAME_OVERHEAD + n)
        yield data[off:end]
        off = end
