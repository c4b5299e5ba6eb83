import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciip.errors import ChecksumMismatch, PayloadTooLarge, ReservedBitsSet, Truncated
from ciip.frame import Frame, FrameFlags, compute_checksum, decode_frame, encode_frame


def naive_sum16(data):
    total = 0
    for b in data:
        total = (total + b) % 65536
    return total


frames = st.builds(
    Frame,
    identifier=st.integers(0, 0xFFFFFFFF),
    flags=st.sampled_from([FrameFlags(v) for v in range(0, 0x100, 0x20)]),
    payload=st.binary(max_size=255),
)


@pytest.mark.parametrize(
    "frame, wire",
    [
        (Frame(0), "00 00 00 00 00 00 00 00"),
        (Frame(0x0A, FrameFlags.NONE, b"AB"), "00 00 00 0A 00 02 00 8F 41 42"),
        (Frame(0x01, FrameFlags.DIR | FrameFlags.ACK), "00 00 00 01 A0 00 00 A1"),
    ],
)
def test_encode_examples(frame, wire):
    assert encode_frame(frame) == bytes.fromhex(wire)
    assert decode_frame(bytes.fromhex(wire)) == frame


def test_decode_corrupted_payload():
    with pytest.raises(ChecksumMismatch) as exc:
        decode_frame(bytes.fromhex("00 00 00 0A 00 02 00 8F 41 43"))
    assert exc.value.stored == 0x8F
    assert exc.value.computed == 0x90
    assert exc.value.field == "checksum"


@pytest.mark.parametrize(
    "data, expected",
    [(b"", 0x0000), (b"\xff\xff\xff", 0x02FD), (b"\xff" * 256, 0xFF00)],
)
def test_compute_checksum(data, expected):
    assert compute_checksum(data) == expected
    assert naive_sum16(data) == expected


def test_checksum_wraps():
    assert compute_checksum(b"\xff" * 258) == (258 * 255) % 65536


def test_payload_too_large():
    with pytest.raises(PayloadTooLarge):
        Frame(1, FrameFlags.NONE, b"x" * 256)


@pytest.mark.parametrize(
    "hexdata, field",
    [
        ("", "header"),
        ("00 00 00 0A 00 02 00", "header"),
        ("00 00 00 0A 00 02 00 8F 41", "size"),
        ("00 00 00 0A 00 02 00 8F 41 42 43", "size"),
    ],
)
def test_truncated(hexdata, field):
    with pytest.raises(Truncated) as exc:
        decode_frame(bytes.fromhex(hexdata))
    assert exc.value.field == field


def test_reserved_bits_rejected():
    buf = bytearray(encode_frame(Frame(5)))
    buf[4] = 0x01
    buf[7] += 1  # keep the checksum valid so only the flag check can fire
    with pytest.raises(ReservedBitsSet) as exc:
        decode_frame(bytes(buf))
    assert exc.value.field == "flags"


def test_content_checksum_ignores_ret():
    f = Frame(0x0A, FrameFlags.NONE, b"AB")
    r = f.with_ret()
    assert r.ret and not f.ret
    assert r.checksum == f.checksum + 0x40
    assert r.content_checksum == f.checksum


@settings(max_examples=500)
@given(frames)
def test_round_trip(frame):
    wire = encode_frame(frame)
    assert len(wire) == 8 + frame.size
    assert wire[4] & 0x1F == 0
    assert wire[5] == frame.size
    assert int.from_bytes(wire[6:8], "big") == naive_sum16(wire[:6] + wire[8:])
    assert decode_frame(wire) == frame


@settings(max_examples=200)
@given(frames, st.data())
def test_single_byte_substitution_detected(frame, data):
    wire = bytearray(encode_frame(frame))
    positions = [i for i in range(len(wire)) if i not in (6, 7)]
    pos = data.draw(st.sampled_from(positions))
    new = data.draw(st.integers(0, 255).filter(lambda v: v != wire[pos]))
    wire[pos] = new
    with pytest.raises((ChecksumMismatch, Truncated, ReservedBitsSet)):
        decode_frame(bytes(wire))


def test_exhaustive_corruption_small_payloads():
    for payload in (b"", b"\x00", b"AB", b"\xff\x00\x7f"):
        wire = encode_frame(Frame(0x0102A0FF, FrameFlags.DIR | FrameFlags.RET, payload))
        for pos in range(len(wire)):
            if pos in (6, 7):
                continue
            for value in range(256):
                if value == wire[pos]:
                    continue
                bad = bytearray(wire)
                bad[pos] = value
                with pytest.raises((ChecksumMismatch, Truncated, ReservedBitsSet)):
                    decode_frame(bytes(bad))
