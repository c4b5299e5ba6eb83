"""CIIP adapter: CID <-> IP:PORT translation and CID-keyed L4 routing.

The adapter terminates the CIIP link. Uplink data frames lose their header and
leave as datagrams addressed to the peer configured for the sending CID;
datagrams coming back are wrapped in a DIR=1 frame and sent down the link the
CID is attached to, with the same stop-and-wait discipline the endpoints use.
Heartbeats never leave the adapter; they are handed to ``on_heartbeat``.

Like :mod:`ciip.endpoint` this is sans-IO: every entry point takes ``now`` and
returns a list of :class:`LinkSend` / :class:`Datagram` emissions for the
caller to put on the wire.
"""

from __future__ import annotations

import ipaddress
import threading
from collections import deque
from collections.abc import Callable, Hashable, Iterable
from dataclasses import dataclass, field
from pathlib import Path

from .endpoint import DEFAULT_ACK_TIMEOUT_MS, DEFAULT_MAX_RETRIES
from .errors import (
    ConfigError,
    DuplicateAddress,
    DuplicateCid,
    FrameError,
    NotEndpointFrame,
    PayloadTooLarge,
    UnknownCid,
)
from .frame import MAX_PAYLOAD, Frame, FrameFlags, ack_frame, check_cid, decode_frame

DEFAULT_QUEUE_LIMIT = 32


@dataclass(frozen=True, order=True)
class ExternalAddress:
    ip: str
    port: int

    def __post_init__(self):
        try:
            addr = ipaddress.ip_address(self.ip)
        except ValueError as exc:
            raise ValueError(f"invalid IP address {self.ip!r}") from exc
        object.__setattr__(self, "ip", str(addr))
        if not 0 < self.port <= 0xFFFF:
            raise ValueError(f"invalid port {self.port!r}")

    @classmethod
    def parse(cls, text: str) -> ExternalAddress:
        """Parse ``1.2.3.4:80`` or ``[::1]:80``."""
        text = text.strip()
        if text.startswith("["):
            host, sep, port = text[1:].partition("]:")
        else:
            host, sep, port = text.rpartition(":")
        if not sep or not port.isdigit():
            raise ValueError(f"expected IP:PORT, got {text!r}")
        return cls(host, int(port))

    @property
    def sockaddr(self) -> tuple[str, int]:
        return (self.ip, self.port)

    def __str__(self):
        if ":" in self.ip:
            return f"[{self.ip}]:{self.port}"
        return f"{self.ip}:{self.port}"


@dataclass
class MappingEntry:
    cid: int
    external: ExternalAddress
    link: Hashable | None = None
    registered_at: int = 0
    bind_port: int | None = None


@dataclass(frozen=True)
class LinkSend:
    link: Hashable
    frame: Frame

    @property
    def data(self) -> bytes:
        return self.frame.encode()


@dataclass(frozen=True)
class Datagram:
    address: ExternalAddress
    body: bytes
    cid: int


@dataclass
class AdapterStats:
    frames_in: int = 0
    frames_out: int = 0
    datagrams_in: int = 0
    datagrams_out: int = 0
    frames_accepted: int = 0
    datagrams_accepted: int = 0
    unknown_cid_up: int = 0
    unknown_cid_down: int = 0
    malformed_up: int = 0
    malformed_down: int = 0
    heartbeats: int = 0
    duplicates: int = 0
    retransmissions: int = 0
    downlink_exhausted: int = 0
    downlink_overflow: int = 0
    unexpected_acks: int = 0

    @property
    def dropped_unknown_cid(self) -> int:
        return self.unknown_cid_up + self.unknown_cid_down

    @property
    def dropped_malformed(self) -> int:
        return self.malformed_up + self.malformed_down

    def as_dict(self) -> dict[str, int]:
        out = dict(vars(self))
        out["dropped_unknown_cid"] = self.dropped_unknown_cid
        out["dropped_malformed"] = self.dropped_malformed
        return out


@dataclass
class _Downlink:
    queue: deque[Frame] = field(default_factory=deque)
    in_flight: Frame | None = None
    retries_used: int = 0
    deadline: int | None = None
    last_delivered_checksum: int | None = None


Emission = LinkSend | Datagram


class Adapter:
    def __init__(
        self,
        ack_timeout: int = DEFAULT_ACK_TIMEOUT_MS,
        max_retries: int = DEFAULT_MAX_RETRIES,
        *,
        on_heartbeat: Callable[[int, int], None] | None = None,
        on_attach: Callable[[MappingEntry, int], None] | None = None,
        queue_limit: int = DEFAULT_QUEUE_LIMIT,
    ):
        if ack_timeout <= 0 or max_retries < 0:
            raise ValueError("ack_timeout must be > 0 and max_retries >= 0")
        self.ack_timeout = ack_timeout
        self.max_retries = max_retries
        self.queue_limit = queue_limit
        self.on_heartbeat = on_heartbeat
        self.on_attach = on_attach
        self.stats = AdapterStats()
        self._lock = threading.RLock()
        self._by_cid: dict[int, MappingEntry] = {}
        self._by_address: dict[ExternalAddress, int] = {}
        self._by_link: dict[Hashable, int] = {}
        self._downlinks: dict[int, _Downlink] = {}

    # -- mapping table -----------------------------------------------------

    def map_insert(
        self,
        cid: int,
        external: ExternalAddress,
        link: Hashable | None = None,
        now: int = 0,
        *,
        bind_port: int | None = None,
    ) -> MappingEntry:
        check_cid(cid)
        with self._lock:
            if cid in self._by_cid:
                raise DuplicateCid(f"cid {cid:08x} already mapped")
            if external in self._by_address:
                raise DuplicateAddress(f"{external} already mapped to {self._by_address[external]:08x}")
            if link is not None and link in self._by_link:
                raise DuplicateCid(f"link {link!r} already carries cid {self._by_link[link]:08x}")
            entry = MappingEntry(cid, external, link, now, bind_port)
            self._by_cid[cid] = entry
            self._by_address[external] = cid
            if link is not None:
                self._by_link[link] = cid
            self._downlinks[cid] = _Downlink()
            return entry

    def map_remove(self, cid: int) -> MappingEntry:
        with self._lock:
            entry = self._by_cid.pop(cid, None)
            if entry is None:
                raise UnknownCid(cid)
            del self._by_address[entry.external]
            if entry.link is not None:
                self._by_link.pop(entry.link, None)
            self._downlinks.pop(cid, None)
            return entry

    def attach(self, cid: int, link: Hashable, now: int = 0) -> MappingEntry:
        """Bind ``link`` as the attachment point of an already mapped ``cid``."""
        with self._lock:
            entry = self._by_cid.get(cid)
            if entry is None:
                raise UnknownCid(cid)
            if entry.link == link:
                return entry
            other = self._by_link.get(link)
            if other is not None and other != cid:
                raise DuplicateCid(f"link {link!r} already carries cid {other:08x}")
            if entry.link is not None:
                self._by_link.pop(entry.link, None)
            entry.link = link
            self._by_link[link] = cid
        if self.on_attach is not None:
            self.on_attach(entry, now)
        return entry

    def detach(self, link: Hashable):
        with self._lock:
            cid = self._by_link.pop(link, None)
            if cid is not None:
                self._by_cid[cid].link = None

    def lookup_by_cid(self, cid: int) -> ExternalAddress | None:
        with self._lock:
            entry = self._by_cid.get(cid)
            return entry.external if entry else None

    def lookup_by_address(self, address: ExternalAddress) -> int | None:
        with self._lock:
            return self._by_address.get(address)

    def entry(self, cid: int) -> MappingEntry | None:
        with self._lock:
            return self._by_cid.get(cid)

    def entries(self) -> list[MappingEntry]:
        with self._lock:
            return sorted(self._by_cid.values(), key=lambda e: e.cid)

    # -- single-frame operations ------------------------------------------

    def route(self, frame: Frame) -> Hashable | None:
        """Link handle for a DIR=1 frame; ``None`` while the CID is unattached."""
        if not frame.dir:
            raise ValueError("route() takes adapter-originated (DIR=1) frames")
        with self._lock:
            entry = self._by_cid.get(frame.identifier)
        if entry is None:
            self.stats.unknown_cid_down += 1
            raise UnknownCid(frame.identifier)
        return entry.link

    def outbound(self, frame: Frame, link: Hashable | None = None) -> tuple[Datagram, Frame]:
        """Translate an uplink data frame into a datagram plus the link-level ack."""
        entry = self._check_uplink(frame, link)
        return self._translate(entry, frame)

    def inbound(self, cid: int, body: bytes, now: int = 0) -> Frame:
        """Wrap a datagram addressed to ``cid`` and queue it for its link."""
        with self._lock:
            entry = self._by_cid.get(cid)
            down = self._downlinks.get(cid)
        if entry is None:
            self.stats.unknown_cid_down += 1
            raise UnknownCid(cid)
        if len(body) > MAX_PAYLOAD:
            self.stats.malformed_down += 1
            raise PayloadTooLarge(len(body))
        frame = Frame(cid, FrameFlags.DIR, body)
        self.stats.datagrams_accepted += 1
        if len(down.queue) >= self.queue_limit:
            down.queue.popleft()
            self.stats.downlink_overflow += 1
        down.queue.append(frame)
        return frame

    # -- pipelines ---------------------------------------------------------

    def receive_from_link(self, link: Hashable, data: bytes, now: int) -> list[Emission]:
        self.stats.frames_in += 1
        try:
            frame = decode_frame(data)
        except FrameError:
            self.stats.malformed_up += 1
            return []
        try:
            entry = self._check_uplink(frame, link, now)
        except (NotEndpointFrame, UnknownCid):
            return []
        self.stats.frames_accepted += 1
        cid = entry.cid
        down = self._downlinks[cid]
        out: list[Emission] = []

        if frame.is_ack:
            if down.in_flight is None:
                self.stats.unexpected_acks += 1
            else:
                down.in_flight = None
                down.retries_used = 0
                down.deadline = None
                out += self._pump(cid, now)
            return out
        if frame.is_heartbeat:
            self.stats.heartbeats += 1
            if self.on_heartbeat is not None:
                self.on_heartbeat(cid, now)
            return out

        content = frame.content_checksum
        if frame.ret and content == down.last_delivered_checksum:
            self.stats.duplicates += 1
            out.append(self._send(entry.link, ack_frame(cid, from_adapter=True)))
            return out
        down.last_delivered_checksum = content
        datagram, ack = self._translate(entry, frame)
        self.stats.datagrams_out += 1
        out.append(datagram)
        out.append(self._send(entry.link, ack))
        return out

    def receive_datagram(
        self,
        body: bytes,
        now: int,
        *,
        cid: int | None = None,
        source: ExternalAddress | None = None,
    ) -> list[Emission]:
        """Accept a datagram either on the per-CID port (``cid``) or the shared
        port, where the CID is recovered from the ``source`` address."""
        self.stats.datagrams_in += 1
        if cid is None:
            cid = self.lookup_by_address(source) if source is not None else None
            if cid is None:
                self.stats.unknown_cid_down += 1
                return []
        try:
            self.inbound(cid, body, now)
        except (UnknownCid, PayloadTooLarge):
            return []
        return self._pump(cid, now)

    def on_timer(self, now: int) -> list[Emission]:
        out: list[Emission] = []
        with self._lock:
            cids = sorted(self._downlinks)
        for cid in cids:
            down = self._downlinks.get(cid)
            if down is None:
                continue
            if down.in_flight is not None and now >= down.deadline:
                if down.retries_used < self.max_retries:
                    down.retries_used += 1
                    down.deadline = now + self.ack_timeout
                    down.in_flight = down.in_flight.with_ret()
                    self.stats.retransmissions += 1
                    link = self._by_cid[cid].link
                    if link is not None:
                        out.append(self._send(link, down.in_flight))
                    continue
                self.stats.downlink_exhausted += 1
                down.in_flight = None
                down.retries_used = 0
                down.deadline = None
            out += self._pump(cid, now)
        return out

    def next_deadline(self) -> int | None:
        deadlines = [d.deadline for d in self._downlinks.values() if d.deadline is not None]
        return min(deadlines, default=None)

    # -- helpers -----------------------------------------------------------

    def _check_uplink(self, frame: Frame, link: Hashable | None, now: int = 0) -> MappingEntry:
        if frame.dir:
            self.stats.malformed_up += 1
            raise NotEndpointFrame(f"DIR=1 frame for {frame.identifier:08x} arrived from a link")
        with self._lock:
            entry = self._by_cid.get(frame.identifier)
            owner = self._by_link.get(link) if link is not None else None
        if entry is None:
            self.stats.unknown_cid_up += 1
            raise UnknownCid(frame.identifier)
        if link is not None:
            if entry.link is None and owner is None:
                self.attach(entry.cid, link, now)
            elif entry.link != link:
                self.stats.malformed_up += 1
                raise NotEndpointFrame(
                    f"cid {frame.identifier:08x} arrived on a link owned by another device"
                )
        return entry

    def _translate(self, entry: MappingEntry, frame: Frame) -> tuple[Datagram, Frame]:
        if frame.size == 0 or frame.ack:
            raise ValueError("only data frames are translated to datagrams")
        return Datagram(entry.external, frame.payload, entry.cid), ack_frame(entry.cid, from_adapter=True)

    def _pump(self, cid: int, now: int) -> list[Emission]:
        down = self._downlinks[cid]
        if down.in_flight is not None or not down.queue:
            return []
        frame = down.queue[0]
        link = self.route(frame)
        if link is None:
            return []
        down.queue.popleft()
        down.in_flight = frame
        down.retries_used = 0
        down.deadline = now + self.ack_timeout
        return [self._send(link, frame)]

    def _send(self, link: Hashable, frame: Frame) -> LinkSend:
        self.stats.frames_out += 1
        return LinkSend(link, frame)


# -- mapping file ------------------------------------------------------------


def parse_mapping_lines(lines: Iterable[str]) -> list[tuple[int, ExternalAddress, int | None]]:
    """Parse ``<cid-hex> <ip>:<port> [bind-port]`` lines; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ConfigError(f"line {lineno}: expected '<cid-hex> <ip>:<port> [bind-port]'")
        try:
            cid = check_cid(int(parts[0], 16))
            address = ExternalAddress.parse(parts[1])
            bind_port = int(parts[2]) if len(parts) == 3 else None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        if bind_port is not None and not 0 <= bind_port <= 0xFFFF:
            raise ConfigError(f"line {lineno}: bind port {bind_port} out of range")
        out.append((cid, address, bind_port))
    return out


def load_mapping(path: str | Path, adapter: Adapter, now: int = 0) -> list[MappingEntry]:
    text = Path(path).read_text()
    entries = []
    for cid, address, bind_port in parse_mapping_lines(text.splitlines()):
        try:
            entries.append(adapter.map_insert(cid, address, None, now, bind_port=bind_port))
        except (DuplicateCid, DuplicateAddress) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return entries


def format_mapping(entries: Iterable[MappingEntry]) -> str:
    lines = ["# cid       peer  [bind-port]"]
    for e in entries:
        suffix = f" {e.bind_port}" if e.bind_port is not None else ""
        lines.append(f"{e.cid:08x} {e.external}{suffix}")
    return "\n".join(lines) + "\n"
