import math
import struct

from hypothesis import given
from hypothesis import strategies as st
import pytest

from oracles import crc32_bitwise
from strategies import any_msg, localization_msgs
from trackbridge import wire
from trackbridge.messages import (
    ControlCommand,
    HmiCommand,
    LocalizationMsg,
    TrajectoryMsg,
    TrajectoryPoint,
)
from trackbridge.wire import DecodeError, DecodeErrorCode as E


def loc(seq, theta=0.0):
    return LocalizationMsg(seq, 1.0, 2.0, 3.0, theta, 4.0, 0.1, 0.2, 0)


# ------------------------------------------------------------------- CRC


def test_crc_oracle_check_values():
    # the oracle itself against the published CRC-32 check value
    assert crc32_bitwise(b"") == 0x00000000
    assert crc32_bitwise(b"123456789") == 0xCBF43926


def test_crc_frozen_values():
    assert wire.crc32(b"") == 0x00000000
    assert wire.crc32(b"123456789") == 0xCBF43926


@given(st.binary(max_size=512))
def test_crc_matches_bitwise_oracle(data):
    assert wire.crc32(data) == crc32_bitwise(data)
    assert wire.crc32(data) == wire.crc32(data)


# ------------------------------------------------------------- encoding


def test_empty_trajectory_frame_is_32_bytes():
    frame = wire.encode(TrajectoryMsg(7, 1.5, -1, 2, ()))
    assert len(frame) == 32
    magic, version, mtype, n = wire.HEADER.unpack_from(frame)
    assert (magic, version, mtype, n) == (b"FTNA", 1, 0x01, 18)
    assert struct.unpack_from("<IdbBI", frame, 10) == (7, 1.5, -1, 2, 0)
    assert struct.unpack_from("<I", frame, 28)[0] == crc32_bitwise(frame[:28])


def test_frame_sizes_follow_field_widths():
    pts = tuple(TrajectoryPoint(*([float(i)] * 8)) for i in range(3))
    assert len(wire.encode(TrajectoryMsg(1, 0.0, 1, 0, pts))) == 32 + 3 * 64
    assert len(wire.encode(loc(1))) == 14 + 4 + 7 * 8 + 1
    cmd = ControlCommand(1, 0.0, 0.5, -1.0, 1, True, 0.25, 0.0, 2)
    assert len(wire.encode(cmd)) == 14 + 4 + 3 * 8 + 1 + 1 + 2 * 8 + 1
    assert len(wire.encode(HmiCommand(1, 0.0, 1))) == 14 + 4 + 8 + 1


def test_localization_layout_is_little_endian_in_field_order():
    frame = wire.encode(loc(0x01020304, theta=0.5))
    assert frame[10:14] == bytes([4, 3, 2, 1])
    assert struct.unpack_from("<7d", frame, 14) == (1.0, 2.0, 3.0, 0.5, 4.0, 0.1, 0.2)


@given(any_msg)
def test_round_trip_bit_exact(msg):
    frame = wire.encode(msg)
    back = wire.decode(frame)
    assert back == msg
    assert wire.encode(back) == frame
    assert wire.encode(msg) == frame


def test_decode_wraps_theta():
    raw = bytearray(wire.encode(loc(1, theta=0.0)))
    struct.pack_into("<d", raw, 14 + 3 * 8, 3 * math.pi)
    raw[-4:] = struct.pack("<I", wire.crc32(bytes(raw[:-4])))
    assert wire.decode(bytes(raw)).theta == pytest.approx(math.pi)


def test_encode_rejects_oversized_payload():
    pts = tuple(TrajectoryPoint(0, 0, 0, 0, 0, 0, 0, float(i)) for i in range(1025))
    with pytest.raises(wire.EncodeError):
        wire.encode(TrajectoryMsg(1, 0.0, 1, 0, pts))


# ----------------------------------------------------------- error codes


def _reseal(frame: bytearray) -> bytes:
    frame[-4:] = struct.pack("<I", wire.crc32(bytes(frame[:-4])))
    return bytes(frame)


def _code(frame) -> E:
    with pytest.raises(DecodeError) as info:
        wire.decode(frame)
    return info.value.code


def test_distinct_error_codes():
    good = bytearray(wire.encode(loc(1)))
    bad_magic = bytearray(good)
    bad_magic[0:4] = b"XTNA"
    assert _code(_reseal(bad_magic)) == E.BAD_MAGIC
    bad_version = bytearray(good)
    bad_version[4] = 2
    assert _code(_reseal(bad_version)) == E.BAD_VERSION
    assert _code(bytes(good[:-1])) == E.BAD_LENGTH
    assert _code(bytes(good) + b"\0") == E.BAD_LENGTH
    assert _code(b"") == E.BAD_LENGTH
    unknown = bytearray(good)
    unknown[5] = 0x09
    assert _code(_reseal(unknown)) == E.UNKNOWN_TYPE
    corrupt = bytearray(good)
    corrupt[20] ^= 0x10
    assert _code(bytes(corrupt)) == E.BAD_CRC
    bad_status = bytearray(good)
    bad_status[-5] = 9
    assert _code(_reseal(bad_status)) == E.BAD_FIELD


def test_declared_length_above_max_is_bad_length():
    frame = bytearray(wire.encode(loc(1)))
    struct.pack_into("<I", frame, 6, wire.MAX_PAYLOAD + 1)
    assert _code(bytes(frame)) == E.BAD_LENGTH


@given(localization_msgs, st.data())
def test_any_single_payload_bit_flip_is_bad_crc(msg, data):
    frame = bytearray(wire.encode(msg))
    bit = data.draw(st.integers(10 * 8, (len(frame) - 4) * 8 - 1))
    frame[bit // 8] ^= 1 << (bit % 8)
    assert _code(bytes(frame)) == E.BAD_CRC


@given(st.binary(max_size=2048))
def test_fuzz_never_crashes(data):
    try:
        wire.decode(data)
    except DecodeError:
        pass


@given(any_msg, st.data())
def test_fuzz_mutated_frames(msg, data):
    frame = bytearray(wire.encode(msg))
    for _ in range(data.draw(st.integers(1, 4))):
        i = data.draw(st.integers(0, len(frame) - 1))
        frame[i] = data.draw(st.integers(0, 255))
    cut = data.draw(st.integers(0, len(frame)))
    try:
        wire.decode(bytes(frame[:cut]))
    except DecodeError:
        pass


def test_fuzz_large_input_does_not_over_read():
    blob = bytearray(70_000)
    blob[0:10] = wire.HEADER.pack(b"FTNA", 1, 1, 69_986)
    with pytest.raises(DecodeError) as info:
        wire.decode(bytes(blob))
    assert info.value.code == E.BAD_LENGTH


# ------------------------------------------------------------- endpoints


def test_latest_wins_max_seq():
    frames = [wire.encode(loc(s)) for s in (3, 5, 4)]
    assert wire.latest(frames, LocalizationMsg).seq == 5


def test_latest_first_wins_on_tie_and_ignores_other_types():
    a, b = loc(2), LocalizationMsg(2, 9.0, 0, 0, 0, 0, 0, 0, 0)
    frames = [wire.encode(HmiCommand(10, 0.0, 1)), wire.encode(a), wire.encode(b)]
    assert wire.latest(frames, LocalizationMsg) == a


def test_latest_none_cases():
    assert wire.latest([], LocalizationMsg) is None
    assert wire.latest([b"junk", wire.encode(loc(1))[:-1]], LocalizationMsg) is None


def test_loopback_endpoint():
    net = wire.LoopbackNetwork()
    rx = net.socket(41002)
    tx = net.socket(50000)
    assert wire.endpoint_recv_latest(rx, LocalizationMsg) is None
    for s in (3, 5, 4):
        wire.send(tx, loc(s), rx.getsockname())
    tx.sendto(b"corrupt", rx.getsockname())
    assert wire.endpoint_recv_latest(rx, LocalizationMsg).seq == 5
    assert wire.endpoint_recv_latest(rx, LocalizationMsg) is None
    with pytest.raises(wire.TransportError):
        net.socket(41002)


def test_udp_endpoint_latest_wins():
    rx = wire.udp_socket(0)
    tx = wire.udp_socket(0)
    try:
        for s in (3, 5, 4):
            wire.send(tx, loc(s), rx.getsockname())
        tx.sendto(b"\xff" * 20, rx.getsockname())
        got = None
        for _ in range(200):
            frames = wire.drain(rx)
            got = wire.latest(frames, LocalizationMsg) or got
            if got is not None and got.seq == 5:
                break
            import time

            time.sleep(0.005)
        assert got is not None and got.seq == 5
    finally:
        rx.close()
        tx.close()


def test_udp_bind_conflict_is_transport_error():
    a = wire.udp_socket(0)
    try:
        with pytest.raises(wire.TransportError):
            wire.udp_socket(a.getsockname()[1])
    finally:
        a.close()


def test_background_receiver_hands_over_newest():
    import time

    rx = wire.udp_socket(0)
    tx = wire.udp_socket(0)
    recv = wire.BackgroundReceiver(rx, LocalizationMsg).start()
    try:
        for s in (1, 3, 2):
            wire.send(tx, loc(s), rx.getsockname())
        msg = None
        for _ in range(200):
            m, _ = recv.take()
            msg = m or msg
            if msg is not None and msg.seq == 3:
                break
            time.sleep(0.005)
        assert msg.seq == 3
        assert recv.take()[0] is None
    finally:
        recv.stop()
        rx.close()
        tx.close()
