"""Request and response models for the HTTP management API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, field_validator


def _cid(value: str) -> str:
    cid = int(value, 16)
    if not 0 < cid <= 0xFFFFFFFF:
        raise ValueError("cid must be a non-zero 32-bit hex value")
    return f"{cid:08x}"


class DissectRequest(BaseModel):
    hex: str


class FlagsOut(BaseModel):
    raw: str
    dir: bool
    ret: bool
    ack: bool
    reserved: int


class ChecksumOut(BaseModel):
    stored: str
    computed: str


class FrameErrorOut(BaseModel):
    kind: str
    field: str
    message: str


class DissectResponse(BaseModel):
    ok: bool
    length: int
    identifier: Optional[str] = None
    flags: Optional[FlagsOut] = None
    size: Optional[int] = None
    checksum: Optional[ChecksumOut] = None
    payload: str
    error: Optional[FrameErrorOut] = None


class OverheadResponse(BaseModel):
    payload_len: int
    ciip_frame_bytes: int
    tcpip_segment_bytes: int
    savings_fraction: float


class RegisterRequest(BaseModel):
    cid: str
    location: str = Field(min_length=1)
    now_ms: Optional[int] = None

    _check_cid = field_validator("cid")(_cid)


class HeartbeatRequest(BaseModel):
    cid: str
    now_ms: Optional[int] = None

    _check_cid = field_validator("cid")(_cid)


class SweepRequest(BaseModel):
    now_ms: Optional[int] = None


class DeviceOut(BaseModel):
    cid: str
    location: str
    last_heartbeat: int
    state: str


class SweepResponse(BaseModel):
    now_ms: int
    evicted: list[str]


class ScenarioRequest(BaseModel):
    scenario: str = Field(description="scenario file contents")
    seed: Optional[int] = Field(default=None, ge=0, le=2**64 - 1)
    duration_ms: Optional[int] = Field(default=None, ge=0)
    include_log: bool = False


class ScenarioResponse(BaseModel):
    report: dict
    event_log: Optional[str] = None
