"""CIIP frame codec.

Wire layout (big-endian)::

    0      4       5      6          8
    +------+-------+------+----------+-----------------+
    | CID  | flags | size | checksum | payload (size)  |
    +------+-------+------+----------+-----------------+

``flags``: bit 7 DIR (set on frames sent by the adapter), bit 6 RET
(frame is a retransmission), bit 5 ACK. Bits 4-0 are reserved and must be
zero. ``checksum`` is the 16-bit sum of every frame byte, computed with the
checksum field itself zeroed.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

from .errors import ChecksumMismatch, PayloadTooLarge, ReservedBitsSet, Truncated

HEADER = struct.Struct(">IBBH")
HEADER_LEN = HEADER.size
MAX_PAYLOAD = 255
CID_MAX = 0xFFFFFFFF
UNASSIGNED_CID = 0


class FrameFlags(enum.IntFlag):
    NONE = 0
    DIR = 0x80
    RET = 0x40
    ACK = 0x20


RESERVED_MASK = 0x1F


def check_cid(cid: int) -> int:
    """Validate a device identity (non-zero, fits in 32 bits) and return it."""
    if not isinstance(cid, int) or not 0 < cid <= CID_MAX:
        raise ValueError(f"invalid device cid {cid!r}")
    return cid


_ADLER_CHUNK = 256


def compute_checksum(buffer: bytes | bytearray | memoryview) -> int:
    """16-bit sum of all bytes."""
    # Adler-32's low half is 1 + sum(bytes) mod 65521, exact while the sum
    # stays below 65521, i.e. for chunks of at most 256 bytes.
    if len(buffer) <= _ADLER_CHUNK:
        return ((zlib.adler32(buffer) & 0xFFFF) - 1) & 0xFFFF
    total = 0
    for start in range(0, len(buffer), _ADLER_CHUNK):
        total += (zlib.adler32(buffer[start:start + _ADLER_CHUNK]) & 0xFFFF) - 1
    return total & 0xFFFF


@dataclass(frozen=True)
class Frame:
    identifier: int
    flags: FrameFlags = FrameFlags.NONE
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.identifier <= CID_MAX:
            raise ValueError(f"identifier {self.identifier!r} out of 32-bit range")
        if len(self.payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(len(self.payload))
        object.__setattr__(self, "flags", FrameFlags(self.flags))
        object.__setattr__(self, "payload", bytes(self.payload))

    @property
    def size(self) -> int:
        return len(self.payload)

    @property
    def dir(self) -> bool:
        return bool(self.flags & FrameFlags.DIR)

    @property
    def ret(self) -> bool:
        return bool(self.flags & FrameFlags.RET)

    @property
    def ack(self) -> bool:
        return bool(self.flags & FrameFlags.ACK)

    @property
    def checksum(self) -> int:
        return _checksum_of(self.identifier, int(self.flags), self.payload)

    @property
    def content_checksum(self) -> int:
        """Checksum of the frame with RET cleared.

        Retransmissions differ from the original only in the RET bit, so this
        value is what duplicate suppression compares.
        """
        return _checksum_of(self.identifier, int(self.flags & ~FrameFlags.RET), self.payload)

    @property
    def is_heartbeat(self) -> bool:
        return self.size == 0 and not self.ack

    @property
    def is_ack(self) -> bool:
        return self.size == 0 and self.ack

    def with_ret(self) -> Frame:
        return Frame(self.identifier, self.flags | FrameFlags.RET, self.payload)

    def encode(self) -> bytes:
        return encode_frame(self)


def _checksum_of(identifier: int, flags: int, payload: bytes) -> int:
    header = HEADER.pack(identifier, flags, len(payload), 0)
    return (compute_checksum(header) + compute_checksum(payload)) & 0xFFFF


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(len(frame.payload))
    flags = int(frame.flags)
    return HEADER.pack(frame.identifier, flags, frame.size, frame.checksum) + frame.payload


def decode_frame(buffer: bytes | bytearray | memoryview) -> Frame:
    length = len(buffer)
    if length < HEADER_LEN:
        raise Truncated(HEADER_LEN, length, "header")
    size = buffer[5]
    if length != HEADER_LEN + size:
        raise Truncated(HEADER_LEN + size, length, "size")
    flags = buffer[4]
    if flags & RESERVED_MASK:
        raise ReservedBitsSet(flags)
    hi, lo = buffer[6], buffer[7]
    if length <= _ADLER_CHUNK:
        total = (zlib.adler32(buffer) & 0xFFFF) - 1
    else:
        total = compute_checksum(buffer)
    computed = (total - hi - lo) & 0xFFFF
    stored = hi << 8 | lo
    if computed != stored:
        raise ChecksumMismatch(stored, computed)
    identifier = int.from_bytes(buffer[:4], "big")
    return Frame(identifier, FrameFlags(flags), bytes(buffer[HEADER_LEN:]))


def heartbeat(cid: int) -> Frame:
    return Frame(cid)


def ack_frame(cid: int, *, from_adapter: bool) -> Frame:
    flags = FrameFlags.ACK | (FrameFlags.DIR if from_adapter else FrameFlags.NONE)
    return Frame(cid, flags)
