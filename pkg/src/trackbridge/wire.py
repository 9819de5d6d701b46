"""Fixed-layout binary framing for all messages and UDP endpoints.

Frame layout (little-endian)::

    magic "FTNA" | version u8 | msg_type u8 | payload_len u32 | payload | crc32 u32

The CRC covers everything from the magic through the last payload byte.
"""

from __future__ import annotations

import errno
import logging
import socket
import struct
import threading
import zlib
from collections import deque
from enum import IntEnum
from typing import Callable, Optional, Union

from .messages import (
    ControlCommand,
    ControlMode,
    ControllerStatus,
    FsmState,
    HmiAction,
    HmiCommand,
    LocalizationMsg,
    Reason,
    TrajectoryMsg,
    TrajectoryPoint,
    wrap_angle,
)

log = logging.getLogger(__name__)

MAGIC = b"FTNA"
VERSION = 0x01
MAX_PAYLOAD = 65536
HEADER = struct.Struct("<4sBBI")
CRC = struct.Struct("<I")
FRAME_OVERHEAD = HEADER.size + CRC.size

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORTS = {
    "trajectory": 41001,
    "localization": 41002,
    "command": 41003,
    "hmi": 41004,
    "status": 41005,
}

_TRAJ_HEAD = struct.Struct("<IdbBI")
_TRAJ_POINT = struct.Struct("<8d")
_LOC = struct.Struct("<I7dB")
_CMD = struct.Struct("<IdddbBddB")
_HMI = struct.Struct("<IdB")
_STATUS = struct.Struct("<IdBBBdII")


class MsgType(IntEnum):
    TRAJECTORY = 0x01
    LOCALIZATION = 0x02
    CONTROL_COMMAND = 0x03
    HMI_COMMAND = 0x04
    CONTROLLER_STATUS = 0x05


class DecodeErrorCode(IntEnum):
    BAD_MAGIC = 1
    BAD_VERSION = 2
    BAD_LENGTH = 3
    BAD_CRC = 4
    UNKNOWN_TYPE = 5
    # enumerated/boolean byte outside its value set
    BAD_FIELD = 6


class DecodeError(ValueError):
    def __init__(self, code: DecodeErrorCode, detail: str = ""):
        self.code = code
        super().__init__(f"{code.name}: {detail}" if detail else code.name)


class EncodeError(ValueError):
    pass


class TransportError(OSError):
    """Socket-level failure while sending or draining an endpoint."""


Message = Union[TrajectoryMsg, LocalizationMsg, ControlCommand, HmiCommand, ControllerStatus]

TYPE_OF = {
    TrajectoryMsg: MsgType.TRAJECTORY,
    LocalizationMsg: MsgType.LOCALIZATION,
    ControlCommand: MsgType.CONTROL_COMMAND,
    HmiCommand: MsgType.HMI_COMMAND,
    ControllerStatus: MsgType.CONTROLLER_STATUS,
}


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def _payload(msg: Message) -> bytes:
    if isinstance(msg, TrajectoryMsg):
        head = _TRAJ_HEAD.pack(msg.seq, msg.timestamp, msg.gear, msg.mode_hint, len(msg.points))
        body = b"".join(
            _TRAJ_POINT.pack(p.x, p.y, p.theta, p.kappa, p.s, p.v, p.a, p.relative_time)
            for p in msg.points
        )
        return head + body
    if isinstance(msg, LocalizationMsg):
        return _LOC.pack(
            msg.seq, msg.timestamp, msg.x, msg.y, msg.theta, msg.v, msg.yaw_rate, msg.a, msg.status
        )
    if isinstance(msg, ControlCommand):
        return _CMD.pack(
            msg.seq,
            msg.timestamp,
            msg.accel_cmd,
            msg.steer_wheel_cmd,
            msg.gear_cmd,
            int(msg.direct_actuation),
            msg.throttle,
            msg.brake,
            msg.mode,
        )
    if isinstance(msg, HmiCommand):
        return _HMI.pack(msg.seq, msg.timestamp, msg.command)
    if isinstance(msg, ControllerStatus):
        return _STATUS.pack(
            msg.seq,
            msg.timestamp,
            msg.fsm,
            msg.mode,
            msg.reason,
            msg.lateral_error,
            msg.traj_seq,
            msg.loc_seq,
        )
    raise EncodeError(f"cannot encode {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    """Serialize ``msg`` into one self-checking frame."""
    try:
        payload = _payload(msg)
    except struct.error as exc:
        raise EncodeError(str(exc)) from exc
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    head = HEADER.pack(MAGIC, VERSION, TYPE_OF[type(msg)], len(payload))
    body = head + payload
    return body + CRC.pack(crc32(body))


def _enum_byte(value: int, allowed, what: str) -> int:
    if value not in allowed:
        raise DecodeError(DecodeErrorCode.BAD_FIELD, f"{what}={value}")
    return value


_GEARS = (-1, 0, 1)
_HINTS = (0, 1, 2)
_LOC_STATUS = (0, 1, 2)
_MODES = frozenset(int(m) for m in ControlMode)
_HMI_ACTIONS = frozenset(int(m) for m in HmiAction)
_FSM = frozenset(int(m) for m in FsmState)
_REASONS = frozenset(int(m) for m in Reason)


def _expect_len(payload: bytes, n: int, what: str) -> None:
    if len(payload) != n:
        raise DecodeError(DecodeErrorCode.BAD_LENGTH, f"{what} payload {len(payload)} != {n}")


def _decode_trajectory(payload: bytes) -> TrajectoryMsg:
    if len(payload) < _TRAJ_HEAD.size:
        raise DecodeError(DecodeErrorCode.BAD_LENGTH, "trajectory header")
    seq, ts, gear, hint, count = _TRAJ_HEAD.unpack_from(payload)
    _expect_len(payload, _TRAJ_HEAD.size + count * _TRAJ_POINT.size, "trajectory")
    _enum_byte(gear, _GEARS, "gear")
    _enum_byte(hint, _HINTS, "mode_hint")
    points = tuple(
        TrajectoryPoint(x, y, wrap_angle(th), k, s, v, a, rt)
        for x, y, th, k, s, v, a, rt in _TRAJ_POINT.iter_unpack(payload[_TRAJ_HEAD.size :])
    )
    return TrajectoryMsg(seq, ts, gear, hint, points)


def _decode_localization(payload: bytes) -> LocalizationMsg:
    _expect_len(payload, _LOC.size, "localization")
    seq, ts, x, y, th, v, yr, a, status = _LOC.unpack(payload)
    _enum_byte(status, _LOC_STATUS, "status")
    return LocalizationMsg(seq, ts, x, y, wrap_angle(th), v, yr, a, status)


def _decode_command(payload: bytes) -> ControlCommand:
    _expect_len(payload, _CMD.size, "command")
    seq, ts, acc, steer, gear, direct, thr, brk, mode = _CMD.unpack(payload)
    _enum_byte(gear, _GEARS, "gear_cmd")
    _enum_byte(direct, (0, 1), "direct_actuation")
    _enum_byte(mode, _MODES, "mode")
    return ControlCommand(seq, ts, acc, steer, gear, bool(direct), thr, brk, mode)


def _decode_hmi(payload: bytes) -> HmiCommand:
    _expect_len(payload, _HMI.size, "hmi")
    seq, ts, cmd = _HMI.unpack(payload)
    _enum_byte(cmd, _HMI_ACTIONS, "command")
    return HmiCommand(seq, ts, cmd)


def _decode_status(payload: bytes) -> ControllerStatus:
    _expect_len(payload, _STATUS.size, "status")
    seq, ts, fsm, mode, reason, lat, tseq, lseq = _STATUS.unpack(payload)
    _enum_byte(fsm, _FSM, "fsm")
    _enum_byte(mode, _MODES, "mode")
    _enum_byte(reason, _REASONS, "reason")
    return ControllerStatus(seq, ts, fsm, mode, reason, lat, tseq, lseq)


_DECODERS: dict[int, Callable[[bytes], Message]] = {
    MsgType.TRAJECTORY: _decode_trajectory,
    MsgType.LOCALIZATION: _decode_localization,
    MsgType.CONTROL_COMMAND: _decode_command,
    MsgType.HMI_COMMAND: _decode_hmi,
    MsgType.CONTROLLER_STATUS: _decode_status,
}


def peek_type(frame: bytes) -> Optional[int]:
    """Message type byte of a frame, without any checking."""
    return frame[5] if len(frame) >= HEADER.size else None


def decode(frame: bytes) -> Message:
    """Parse and verify one frame. Raises DecodeError with a distinct code."""
    frame = bytes(frame)
    if len(frame) < FRAME_OVERHEAD:
        raise DecodeError(DecodeErrorCode.BAD_LENGTH, f"frame of {len(frame)} bytes")
    magic, version, msg_type, payload_len = HEADER.unpack_from(frame)
    if magic != MAGIC:
        raise DecodeError(DecodeErrorCode.BAD_MAGIC, repr(magic))
    if version != VERSION:
        raise DecodeError(DecodeErrorCode.BAD_VERSION, str(version))
    if payload_len > MAX_PAYLOAD or len(frame) != FRAME_OVERHEAD + payload_len:
        raise DecodeError(
            DecodeErrorCode.BAD_LENGTH, f"declared {payload_len}, frame holds {len(frame) - FRAME_OVERHEAD}"
        )
    end = HEADER.size + payload_len
    (crc,) = CRC.unpack_from(frame, end)
    if crc != crc32(frame[:end]):
        raise DecodeError(DecodeErrorCode.BAD_CRC)
    decoder = _DECODERS.get(msg_type)
    if decoder is None:
        raise DecodeError(DecodeErrorCode.UNKNOWN_TYPE, f"0x{msg_type:02x}")
    return decoder(frame[HEADER.size : end])


# ---------------------------------------------------------------- transport


class LoopbackNetwork:
    """In-process datagram fabric with socket-like endpoints.

    Used by the deterministic harness: a datagram sent before a drain is
    always visible to that drain, and ordering is preserved.
    """

    def __init__(self):
        self._queues: dict[tuple[str, int], deque] = {}

    def socket(self, port: int, host: str = DEFAULT_HOST) -> "LoopbackSocket":
        addr = (host, port)
        if addr in self._queues:
            raise TransportError(errno.EADDRINUSE, f"address {addr} already bound")
        self._queues[addr] = deque()
        return LoopbackSocket(self, addr)


class LoopbackSocket:
    def __init__(self, net: LoopbackNetwork, addr):
        self._net = net
        self.addr = addr

    def sendto(self, data: bytes, addr) -> int:
        q = self._net._queues.get(tuple(addr))
        if q is not None:
            q.append(bytes(data))
        return len(data)

    def recvfrom(self, bufsize: int):
        q = self._net._queues[self.addr]
        if not q:
            raise BlockingIOError(errno.EAGAIN, "no datagram")
        return q.popleft()[:bufsize], ("loopback", 0)

    def close(self) -> None:
        self._net._queues.pop(self.addr, None)

    def getsockname(self):
        return self.addr


def udp_socket(port: int, host: str = DEFAULT_HOST) -> socket.socket:
    """Non-blocking UDP socket bound to ``(host, port)``; port 0 picks a free one."""
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 21)
        sock.bind((host, port))
        sock.setblocking(False)
    except OSError as exc:
        raise TransportError(exc.errno, f"cannot bind {host}:{port}: {exc}") from exc
    return sock


def drain(sock) -> list[bytes]:
    """All datagrams currently queued on a non-blocking socket, oldest first."""
    out = []
    while True:
        try:
            data, _ = sock.recvfrom(MAX_PAYLOAD + FRAME_OVERHEAD + 1)
        except (BlockingIOError, InterruptedError):
            return out
        except OSError as exc:
            raise TransportError(exc.errno, f"receive failed: {exc}") from exc
        out.append(data)


def latest(frames, msg_type: type) -> Optional[Message]:
    """Newest (highest seq) valid message of ``msg_type`` among raw frames.

    Undecodable frames and frames of another type are dropped. On equal seq
    the first decoded frame wins.
    """
    best = None
    for raw in frames:
        try:
            msg = decode(raw)
        except DecodeError as exc:
            log.debug("dropping frame: %s", exc)
            continue
        if not isinstance(msg, msg_type):
            continue
        if best is None or msg.seq > best.seq:
            best = msg
    return best


def endpoint_recv_latest(sock, msg_type: type) -> Optional[Message]:
    return latest(drain(sock), msg_type)


def send(sock, msg: Message, addr) -> int:
    try:
        return sock.sendto(encode(msg), addr)
    except OSError as exc:
        raise TransportError(exc.errno, f"send failed: {exc}") from exc


class BackgroundReceiver:
    """Thread that keeps draining one socket into a latest-wins mailbox.

    ``take()`` hands over the newest message and clears the slot; it is the
    only synchronization point with the control loop.
    """

    def __init__(self, sock: socket.socket, msg_type: type, poll: float = 0.001):
        self.sock = sock
        self.msg_type = msg_type
        self._poll = poll
        self._lock = threading.Lock()
        self._slot: Optional[Message] = None
        self._raw: list[bytes] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.error: Optional[TransportError] = None

    def start(self) -> "BackgroundReceiver":
        self._thread.start()
        return self

    def _run(self) -> None:
        import select

        while not self._stop.is_set():
            ready, _, _ = select.select([self.sock], [], [], self._poll)
            if not ready:
                continue
            try:
                frames = drain(self.sock)
            except TransportError as exc:
                self.error = exc
                return
            msg = latest(frames, self.msg_type)
            with self._lock:
                self._raw.extend(frames)
                if msg is not None and (self._slot is None or msg.seq > self._slot.seq):
                    self._slot = msg

    def take(self) -> tuple[Optional[Message], list[bytes]]:
        with self._lock:
            msg, raw = self._slot, self._raw
            self._slot, self._raw = None, []
        return msg, raw

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
