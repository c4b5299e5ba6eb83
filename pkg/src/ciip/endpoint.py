"""CIIP end-point: register-style host interface over a stop-and-wait engine.

The host only ever touches :class:`EndpointRegisters`: it writes a payload and
strobes ACT to send, polls PPD and reads the received payload, and watches
RETR for exhausted retransmissions. Everything else (framing, timers,
duplicate suppression, heartbeats) happens inside :class:`Endpoint`.

All methods take an explicit ``now`` in virtual milliseconds and never block.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

from .errors import Busy, NothingPending, NotForMe, PayloadTooLarge, UnexpectedAck
from .frame import MAX_PAYLOAD, Frame, FrameFlags, ack_frame, check_cid, heartbeat

log = logging.getLogger(__name__)

DEFAULT_ACK_TIMEOUT_MS = 200
DEFAULT_MAX_RETRIES = 3
DEFAULT_HEARTBEAT_INTERVAL_MS = 1000


@dataclass
class EndpointRegisters:
    tx_payload: bytes = b""
    rx_payload: bytes = b""
    act: bool = False
    retr: bool = False
    ppd: bool = False


@dataclass(frozen=True)
class EndpointConfig:
    cid: int
    ack_timeout: int = DEFAULT_ACK_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES
    heartbeat_interval: int = DEFAULT_HEARTBEAT_INTERVAL_MS

    def __post_init__(self):
        check_cid(self.cid)
        if self.ack_timeout <= 0:
            raise ValueError("ack_timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.heartbeat_interval <= self.ack_timeout:
            raise ValueError("heartbeat_interval must exceed ack_timeout")


class Phase(enum.Enum):
    IDLE = "Idle"
    AWAITING_ACK = "AwaitingAck"


@dataclass
class EndpointState:
    next_heartbeat_at: int
    phase: Phase = Phase.IDLE
    in_flight: Frame | None = None
    retries_used: int = 0
    last_delivered_checksum: int | None = None
    timer_deadline: int | None = None


@dataclass
class EndpointStats:
    frames_out: int = 0
    frames_in: int = 0
    sent: int = 0
    acked: int = 0
    retransmissions: int = 0
    exhausted: int = 0
    heartbeats: int = 0
    delivered: int = 0
    duplicates: int = 0
    overruns: int = 0
    unexpected_acks: int = 0


class Endpoint:
    def __init__(self, config: EndpointConfig, start: int = 0):
        self.config = config
        self.registers = EndpointRegisters()
        # First heartbeat goes out at boot so the adapter learns the link early.
        self.state = EndpointState(next_heartbeat_at=start)
        self.stats = EndpointStats()

    @property
    def cid(self) -> int:
        return self.config.cid

    @property
    def idle(self) -> bool:
        return self.state.phase is Phase.IDLE

    def host_write_and_act(self, payload: bytes, now: int) -> Frame:
        if self.state.phase is Phase.AWAITING_ACK:
            raise Busy(f"cid {self.cid:08x} still awaiting ack")
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(len(payload))
        regs = self.registers
        regs.tx_payload = bytes(payload)
        regs.act = True
        regs.retr = False
        frame = Frame(self.cid, FrameFlags.NONE, regs.tx_payload)
        regs.act = False
        st = self.state
        st.phase = Phase.AWAITING_ACK
        st.in_flight = frame
        st.retries_used = 0
        st.timer_deadline = now + self.config.ack_timeout
        self.stats.sent += 1
        return self._emit(frame)

    def on_timer(self, now: int) -> Frame | None:
        st = self.state
        if st.phase is Phase.AWAITING_ACK and now >= st.timer_deadline:
            if st.retries_used < self.config.max_retries:
                st.retries_used += 1
                st.timer_deadline = now + self.config.ack_timeout
                self.stats.retransmissions += 1
                return self._emit(st.in_flight.with_ret())
            log.debug("cid %08x: retries exhausted, raising RETR", self.cid)
            self.registers.retr = True
            self.stats.exhausted += 1
            self._to_idle()
        if st.phase is Phase.IDLE and now >= st.next_heartbeat_at:
            st.next_heartbeat_at += self.config.heartbeat_interval
            if st.next_heartbeat_at <= now:
                st.next_heartbeat_at = now + self.config.heartbeat_interval
            self.stats.heartbeats += 1
            return self._emit(heartbeat(self.cid))
        return None

    def on_frame(self, frame: Frame, now: int | None = None) -> Frame | None:
        if frame.identifier != self.cid:
            raise NotForMe(f"frame for {frame.identifier:08x} seen by {self.cid:08x}")
        if not frame.dir:
            raise NotForMe("endpoint received an endpoint-originated frame")
        self.stats.frames_in += 1
        st = self.state
        if frame.size == 0:
            if not frame.ack:
                return None
            if st.phase is not Phase.AWAITING_ACK:
                self.stats.unexpected_acks += 1
                raise UnexpectedAck(f"ack for {self.cid:08x} while idle")
            self.stats.acked += 1
            self._to_idle()
            return None

        regs = self.registers
        content = frame.content_checksum
        if frame.ret and content == st.last_delivered_checksum:
            self.stats.duplicates += 1
            return self._emit(ack_frame(self.cid, from_adapter=False))
        if regs.ppd:
            # Host has not drained the last payload; withhold the ack so the
            # adapter retransmits later.
            self.stats.overruns += 1
            return None
        regs.rx_payload = frame.payload
        regs.ppd = True
        st.last_delivered_checksum = content
        self.stats.delivered += 1
        return self._emit(ack_frame(self.cid, from_adapter=False))

    def host_read(self) -> bytes:
        regs = self.registers
        if not regs.ppd:
            raise NothingPending(f"no payload pending on {self.cid:08x}")
        regs.ppd = False
        return regs.rx_payload

    def next_deadline(self) -> int:
        st = self.state
        if st.phase is Phase.AWAITING_ACK:
            return st.timer_deadline
        return st.next_heartbeat_at

    def _to_idle(self):
        st = self.state
        st.phase = Phase.IDLE
        st.in_flight = None
        st.retries_used = 0
        st.timer_deadline = None

    def _emit(self, frame: Frame) -> Frame:
        self.stats.frames_out += 1
        return frame
