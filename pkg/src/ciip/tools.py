"""Frame dissector and the per-packet overhead comparator."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import FrameError, PayloadTooLarge
from .frame import HEADER, HEADER_LEN, MAX_PAYLOAD, RESERVED_MASK, Frame, compute_checksum, decode_frame

IPV4_MIN_HEADER = 20
TCP_MIN_HEADER = 20


@dataclass(frozen=True)
class OverheadReport:
    payload_len: int
    ciip_frame_bytes: int
    tcpip_segment_bytes: int
    savings_fraction: float

    def as_dict(self) -> dict:
        return {
            "payload_len": self.payload_len,
            "ciip_frame_bytes": self.ciip_frame_bytes,
            "tcpip_segment_bytes": self.tcpip_segment_bytes,
            "savings_fraction": round(self.savings_fraction, 6),
        }


def overhead(payload_len: int) -> OverheadReport:
    """CIIP frame size vs. a minimal TCP/IPv4 segment carrying the same payload."""
    if payload_len < 0:
        raise ValueError("payload_len must be >= 0")
    if payload_len > MAX_PAYLOAD:
        raise PayloadTooLarge(payload_len)
    ciip = HEADER_LEN + payload_len
    tcpip = IPV4_MIN_HEADER + TCP_MIN_HEADER + payload_len
    return OverheadReport(payload_len, ciip, tcpip, 1 - ciip / tcpip)


def parse_hex(text: str) -> bytes:
    cleaned = "".join(text.split())
    if cleaned[:2].lower() == "0x":
        cleaned = cleaned[2:]
    if len(cleaned) % 2:
        raise ValueError("odd number of hex digits")
    return bytes.fromhex(cleaned)


@dataclass
class Dissection:
    raw: bytes
    frame: Frame | None = None
    error: FrameError | None = None
    identifier: int | None = None
    flags_byte: int | None = None
    size: int | None = None
    stored_checksum: int | None = None
    computed_checksum: int | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def as_dict(self) -> dict:
        out = {
            "ok": self.ok,
            "length": len(self.raw),
            "identifier": None if self.identifier is None else f"{self.identifier:08x}",
            "flags": None if self.flags_byte is None else {
                "raw": f"0x{self.flags_byte:02x}",
                "dir": bool(self.flags_byte & 0x80),
                "ret": bool(self.flags_byte & 0x40),
                "ack": bool(self.flags_byte & 0x20),
                "reserved": self.flags_byte & RESERVED_MASK,
            },
            "size": self.size,
            "checksum": None if self.stored_checksum is None else {
                "stored": f"0x{self.stored_checksum:04x}",
                "computed": f"0x{self.computed_checksum:04x}",
            },
            "payload": self.raw[HEADER_LEN:].hex(),
        }
        if self.error is not None:
            out["error"] = {"kind": type(self.error).__name__, "field": self.error.field,
                            "message": str(self.error)}
        return out


def dissect(data: bytes) -> Dissection:
    d = Dissection(raw=bytes(data))
    if len(data) >= HEADER_LEN:
        d.identifier, d.flags_byte, d.size, d.stored_checksum = HEADER.unpack_from(data)
        d.computed_checksum = (
            compute_checksum(data) - (d.stored_checksum >> 8) - (d.stored_checksum & 0xFF)
        ) & 0xFFFF
    try:
        d.frame = decode_frame(data)
    except FrameError as exc:
        d.error = exc
    return d


def _preview(payload: bytes, limit: int = 32) -> str:
    shown = payload[:limit]
    text = "".join(chr(b) if 32 <= b < 127 else "." for b in shown)
    more = f" ... (+{len(payload) - limit} bytes)" if len(payload) > limit else ""
    return f"{shown.hex(' ')}  |{text}|{more}"


def format_dissection(d: Dissection) -> str:
    lines = []
    if d.identifier is not None:
        f = d.flags_byte
        lines.append(f"identifier : {d.identifier:08x}")
        lines.append(
            f"flags      : 0x{f:02x}  dir={f >> 7 & 1} ret={f >> 6 & 1} ack={f >> 5 & 1}"
            + (f" reserved=0x{f & RESERVED_MASK:02x}" if f & RESERVED_MASK else "")
        )
        lines.append(f"size       : {d.size}")
        verdict = "OK" if d.stored_checksum == d.computed_checksum else "MISMATCH"
        lines.append(
            f"checksum   : stored 0x{d.stored_checksum:04x} computed 0x{d.computed_checksum:04x}  {verdict}"
        )
        lines.append(f"payload    : {_preview(d.raw[HEADER_LEN:])}")
    else:
        lines.append(f"raw        : {d.raw.hex(' ')}")
    if d.error is not None:
        lines.append(f"error      : {type(d.error).__name__} ({d.error.field}): {d.error}")
    return "\n".join(lines) + "\n"
