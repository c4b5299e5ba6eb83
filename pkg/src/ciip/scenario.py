"""Scenario files and the end-to-end runner.

A scenario wires endpoints, one adapter and one registry over a shared
simulated radio link, with external peers behind a loss-free datagram link.
See ``docs/config-formats.md`` for the file grammar.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

from .adapter import Adapter, Datagram, ExternalAddress, LinkSend
from .endpoint import (
    DEFAULT_ACK_TIMEOUT_MS,
    DEFAULT_HEARTBEAT_INTERVAL_MS,
    DEFAULT_MAX_RETRIES,
    Endpoint,
    EndpointConfig,
)
from .errors import CiipError, ConfigError, UnknownDevice
from .frame import MAX_PAYLOAD, check_cid, decode_frame
from .netsim import MASK64, Link, LinkConfig, SimClock, trace_line
from .registry import Registry, RegistryConfig

PEER_MODES = ("echo", "sink")


@dataclass
class DeviceSpec:
    cid: int
    peer: ExternalAddress
    heartbeat_interval: int = DEFAULT_HEARTBEAT_INTERVAL_MS
    ack_timeout: int = DEFAULT_ACK_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES
    location: str = ""
    peer_mode: str = "echo"
    schedule: list[tuple[int, bytes]] = field(default_factory=list)
    dies_at: int | None = None


@dataclass
class Scenario:
    devices: list[DeviceSpec]
    link: LinkConfig = field(default_factory=LinkConfig)
    duration: int = 10_000
    adapter_ack_timeout: int = DEFAULT_ACK_TIMEOUT_MS
    adapter_max_retries: int = DEFAULT_MAX_RETRIES
    eviction_timeout: int | None = None
    sweep_period: int = 100
    external_delay: int = 1

    def __post_init__(self):
        seen_cids, seen_peers = set(), set()
        for dev in self.devices:
            check_cid(dev.cid)
            if dev.cid in seen_cids:
                raise ConfigError(f"device {dev.cid:08x} defined twice")
            if dev.peer in seen_peers:
                raise ConfigError(f"device.{dev.cid:08x}: peer {dev.peer} shared with another device")
            seen_cids.add(dev.cid)
            seen_peers.add(dev.peer)
            if dev.peer_mode not in PEER_MODES:
                raise ConfigError(f"device.{dev.cid:08x}: peer_mode must be one of {PEER_MODES}")
            for t, payload in dev.schedule:
                if not 0 < len(payload) <= MAX_PAYLOAD:
                    raise ConfigError(f"device.{dev.cid:08x}: payload at t={t} must be 1-255 bytes")
        if self.duration < 0 or self.sweep_period <= 0:
            raise ConfigError("duration_ms must be >= 0 and sweep_period_ms > 0")

    @property
    def effective_eviction_timeout(self) -> int:
        if self.eviction_timeout is not None:
            return self.eviction_timeout
        longest = max((d.heartbeat_interval for d in self.devices), default=DEFAULT_HEARTBEAT_INTERVAL_MS)
        return 3 * longest


# -- parsing -------------------------------------------------------------------

_KEYS = {
    "scenario": {"duration_ms", "sweep_period_ms", "external_delay_ms"},
    "link": {"loss_rate", "delay_ms", "jitter_ms", "reorder_rate", "seed"},
    "adapter": {"ack_timeout_ms", "max_retries"},
    "registry": {"eviction_timeout_ms", "sweep_period_ms"},
    "device": {
        "peer", "peer_mode", "heartbeat_interval_ms", "ack_timeout_ms", "max_retries",
        "location", "schedule", "count", "interval_ms", "start_ms", "size", "dies_at_ms",
    },
}


def _get(section, key, conv, default):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {raw!r}") from None


def _int(text: str) -> int:
    return int(text, 0)


def _parse_schedule(section) -> list[tuple[int, bytes]]:
    items: list[tuple[int, bytes]] = []
    for chunk in section.get("schedule", "").split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        t, sep, text = chunk.partition(":")
        if not sep or not t.strip().isdigit():
            raise ConfigError(f"[{section.name}] schedule: expected '<t-ms>:<payload>', got {chunk!r}")
        text = text.strip()
        if text.startswith("hex:"):
            try:
                payload = bytes.fromhex(text[4:])
            except ValueError:
                raise ConfigError(f"[{section.name}] schedule: bad hex in {chunk!r}") from None
        else:
            payload = text.encode()
        items.append((int(t), payload))
    count = _get(section, "count", _int, 0)
    if count:
        cid = int(section.name.split(".", 1)[1], 16)
        start = _get(section, "start_ms", _int, 0)
        interval = _get(section, "interval_ms", _int, 100)
        size = _get(section, "size", _int, None)
        for i in range(count):
            payload = f"{cid:08x}:{i:06d}".encode()
            if size is not None:
                payload = payload[:size].ljust(size, b".")
            items.append((start + i * interval, payload))
    items.sort(key=lambda item: item[0])
    return items


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    for name in parser.sections():
        kind = name.split(".", 1)[0]
        if kind not in _KEYS or (kind == "device") != ("." in name):
            raise ConfigError(f"{source}: unknown section [{name}]")
        extra = set(parser[name]) - _KEYS[kind]
        if extra:
            raise ConfigError(f"{source}: [{name}] unknown key {sorted(extra)[0]!r}")

    def opt(section: str, key: str, default, conv=_int):
        if not parser.has_section(section):
            return default
        return _get(parser[section], key, conv, default)

    try:
        link = LinkConfig(
            loss_rate=opt("link", "loss_rate", 0.0, float),
            delay=opt("link", "delay_ms", 0),
            jitter=opt("link", "jitter_ms", 0),
            reorder_rate=opt("link", "reorder_rate", 0.0, float),
            seed=opt("link", "seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: [link] {exc}") from None

    devices = []
    for name in parser.sections():
        if not name.startswith("device."):
            continue
        s = parser[name]
        try:
            cid = check_cid(int(name.split(".", 1)[1], 16))
        except ValueError:
            raise ConfigError(f"{source}: [{name}] section suffix must be a non-zero hex cid") from None
        if "peer" not in s:
            raise ConfigError(f"{source}: [{name}] missing key 'peer'")
        peer = _get(s, "peer", ExternalAddress.parse, None)
        devices.append(DeviceSpec(
            cid=cid,
            peer=peer,
            heartbeat_interval=_get(s, "heartbeat_interval_ms", _int, DEFAULT_HEARTBEAT_INTERVAL_MS),
            ack_timeout=_get(s, "ack_timeout_ms", _int, DEFAULT_ACK_TIMEOUT_MS),
            max_retries=_get(s, "max_retries", _int, DEFAULT_MAX_RETRIES),
            location=s.get("location", f"link/{cid:08x}").strip(),
            peer_mode=s.get("peer_mode", "echo").strip(),
            schedule=_parse_schedule(s),
            dies_at=_get(s, "dies_at_ms", _int, None),
        ))
    devices.sort(key=lambda d: d.cid)

    sweep = opt("registry", "sweep_period_ms", opt("scenario", "sweep_period_ms", 100))
    return Scenario(
        devices=devices,
        link=link,
        duration=opt("scenario", "duration_ms", 10_000),
        adapter_ack_timeout=opt("adapter", "ack_timeout_ms", DEFAULT_ACK_TIMEOUT_MS),
        adapter_max_retries=opt("adapter", "max_retries", DEFAULT_MAX_RETRIES),
        eviction_timeout=opt("registry", "eviction_timeout_ms", None),
        sweep_period=sweep,
        external_delay=opt("scenario", "external_delay_ms", 1),
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text, str(path))


# -- running -------------------------------------------------------------------


@dataclass
class DeviceResult:
    cid: int
    written: list[bytes] = field(default_factory=list)
    acked: list[bytes] = field(default_factory=list)
    failed: list[bytes] = field(default_factory=list)
    read: list[bytes] = field(default_factory=list)
    at_peer: list[bytes] = field(default_factory=list)
    retransmissions: int = 0
    heartbeats: int = 0
    duplicates_suppressed: int = 0


@dataclass
class ScenarioResult:
    devices: dict[int, DeviceResult]
    totals: dict[str, int]
    events: list[str]
    evictions: list[tuple[int, int]]
    adapter_stats: dict[str, int]

    @property
    def event_log(self) -> str:
        return "\n".join(self.events) + ("\n" if self.events else "")

    def report(self) -> dict:
        return {
            "totals": dict(self.totals),
            "evictions": [{"t_ms": t, "cid": f"{c:08x}"} for t, c in self.evictions],
            "devices": {
                f"{cid:08x}": {
                    "written": len(d.written),
                    "acked": len(d.acked),
                    "failed": len(d.failed),
                    "delivered_to_peer": len(d.at_peer),
                    "read": len(d.read),
                    "retransmissions": d.retransmissions,
                    "heartbeats": d.heartbeats,
                    "duplicates_suppressed": d.duplicates_suppressed,
                }
                for cid, d in sorted(self.devices.items())
            },
            "adapter": dict(self.adapter_stats),
            "event_log_sha256": hashlib.sha256(self.event_log.encode()).hexdigest(),
        }


def format_report(report: dict) -> str:
    lines = ["totals:"]
    lines += [f"  {k} = {v}" for k, v in report["totals"].items()]
    lines.append("evictions:")
    lines += [f"  t={e['t_ms']} cid={e['cid']}" for e in report["evictions"]] or ["  (none)"]
    for cid, d in report["devices"].items():
        lines.append(f"device {cid}:")
        lines += [f"  {k} = {v}" for k, v in d.items()]
    lines.append("adapter:")
    lines += [f"  {k} = {v}" for k, v in report["adapter"].items()]
    lines.append(f"event_log_sha256 = {report['event_log_sha256']}")
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


class _Runner:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.clock = SimClock()
        self.radio = Link(scenario.link, self.clock, "radio")
        self.external = Link(LinkConfig(delay=scenario.external_delay), self.clock, "external")
        self.registry = Registry(RegistryConfig(scenario.effective_eviction_timeout))
        self.adapter = Adapter(
            scenario.adapter_ack_timeout,
            scenario.adapter_max_retries,
            on_heartbeat=self._heartbeat,
        )
        self.events: list[str] = []
        self.endpoints: dict[int, Endpoint] = {}
        self.specs = {d.cid: d for d in scenario.devices}
        self.results = {d.cid: DeviceResult(d.cid) for d in scenario.devices}
        self.backlog: dict[int, deque[bytes]] = {d.cid: deque() for d in scenario.devices}
        self.pending: dict[int, deque[tuple[int, bytes]]] = {
            d.cid: deque(d.schedule) for d in scenario.devices
        }
        self.in_flight_payload: dict[int, bytes | None] = {}
        self.peers = {d.peer: d for d in scenario.devices}
        for dev in scenario.devices:
            self.endpoints[dev.cid] = Endpoint(
                EndpointConfig(dev.cid, dev.ack_timeout, dev.max_retries, dev.heartbeat_interval)
            )
            self.adapter.map_insert(dev.cid, dev.peer, ("link", dev.cid), 0)
            self.registry.register(dev.cid, dev.location, 0)

    def _heartbeat(self, cid: int, now: int):
        try:
            self.registry.heartbeat(cid, now)
        except UnknownDevice:
            self.registry.register(cid, self.specs[cid].location, now)

    def _alive(self, cid: int, now: int) -> bool:
        dies_at = self.specs[cid].dies_at
        return dies_at is None or now <= dies_at

    def _radio(self, direction: str, cid: int, data: bytes, dest, now: int):
        at = self.radio.submit(data, dest, now)
        verdict = "DROPPED" if at is None else "DELIVERED"
        self.events.append(trace_line(now, direction, data, verdict, cid))

    def _emit_adapter(self, emissions, now: int):
        for em in emissions:
            if isinstance(em, LinkSend):
                cid = em.link[1]
                self._radio("DOWN", cid, em.data, ("ep", cid), now)
            elif isinstance(em, Datagram):
                self.external.submit(em.body, ("peer", em.address), now)

    def _deliver(self, data: bytes, dest, now: int):
        kind, key = dest
        if kind == "ad":
            self._emit_adapter(self.adapter.receive_from_link(("link", key), data, now), now)
        elif kind == "ep":
            if not self._alive(key, now):
                return
            ep = self.endpoints[key]
            was_busy = not ep.idle
            try:
                reply = ep.on_frame(decode_frame(data), now)
            except CiipError:
                return
            finally:
                if was_busy and ep.idle:
                    self.results[key].acked.append(self.in_flight_payload.pop(key))
            if reply is not None:
                self._send_up(key, reply, now)
        elif kind == "peer":
            device = self.peers[key]
            self.results[device.cid].at_peer.append(data)
            if device.peer_mode == "echo":
                self.external.submit(data, ("adx", key), now)
        elif kind == "adx":
            self._emit_adapter(self.adapter.receive_datagram(data, now, source=key), now)

    def _send_up(self, cid: int, frame, now: int):
        self._radio("UP", cid, frame.encode(), ("ad", cid), now)

    def _device_step(self, cid: int, now: int):
        ep = self.endpoints[cid]
        res = self.results[cid]
        was_busy = not ep.idle
        frame = ep.on_timer(now)
        if frame is not None:
            self._send_up(cid, frame, now)
        while ep.registers.ppd:
            res.read.append(ep.host_read())
        if was_busy and ep.idle and ep.registers.retr:
            res.failed.append(self.in_flight_payload.pop(cid))
            ep.registers.retr = False
        queue = self.pending[cid]
        while queue and queue[0][0] <= now:
            self.backlog[cid].append(queue.popleft()[1])
        if ep.idle and self.backlog[cid]:
            payload = self.backlog[cid].popleft()
            self.in_flight_payload[cid] = payload
            res.written.append(payload)
            self._send_up(cid, ep.host_write_and_act(payload, now), now)

    def run(self) -> ScenarioResult:
        sc = self.sc
        now = 0
        next_sweep = sc.sweep_period
        while True:
            for data, dest in self.clock.advance(now):
                self._deliver(data, dest, now)
            self._emit_adapter(self.adapter.on_timer(now), now)
            for cid in sorted(self.endpoints):
                if self._alive(cid, now):
                    self._device_step(cid, now)
            if now >= next_sweep:
                self.registry.sweep(now)
                next_sweep += sc.sweep_period
            candidates = [next_sweep]
            for t in (self.clock.next_time(), self.adapter.next_deadline()):
                if t is not None:
                    candidates.append(t)
            for cid, ep in self.endpoints.items():
                if self._alive(cid, now):
                    candidates.append(ep.next_deadline())
                    if self.pending[cid]:
                        candidates.append(self.pending[cid][0][0])
            nxt = max(min(candidates), now + 1)
            if nxt > sc.duration:
                break
            now = nxt
        return self._result()

    def _result(self) -> ScenarioResult:
        for cid, ep in self.endpoints.items():
            res = self.results[cid]
            res.retransmissions = ep.stats.retransmissions
            res.heartbeats = ep.stats.heartbeats
            res.duplicates_suppressed = ep.stats.duplicates
        a = self.adapter.stats
        frames = len(self.events)
        wire_bytes = 0
        for line in self.events:
            wire_bytes += 8 + int(line.split()[4])
        totals = {
            "payloads_written": sum(len(r.written) for r in self.results.values()),
            "payloads_delivered": sum(len(r.at_peer) for r in self.results.values()),
            "payloads_read": sum(len(r.read) for r in self.results.values()),
            "payloads_failed": sum(len(r.failed) for r in self.results.values()),
            "retransmissions": sum(r.retransmissions for r in self.results.values()) + a.retransmissions,
            "heartbeats": sum(r.heartbeats for r in self.results.values()),
            "evictions": len(self.registry.evicted_log),
            "frames_on_wire": frames,
            "bytes_on_wire": wire_bytes,
            "frames_dropped": self.radio.dropped,
            "downlink_exhausted": a.downlink_exhausted,
        }
        return ScenarioResult(
            devices=self.results,
            totals=totals,
            events=self.events,
            evictions=list(self.registry.evicted_log),
            adapter_stats=a.as_dict(),
        )


def run_scenario(scenario: Scenario, *, seed: int | None = None, duration: int | None = None) -> ScenarioResult:
    if seed is not None or duration is not None:
        link = scenario.link
        if seed is not None:
            link = LinkConfig(link.loss_rate, link.delay, link.jitter, link.reorder_rate, seed & MASK64)
        scenario = replace(scenario, link=link, duration=scenario.duration if duration is None else duration)
    return _Runner(scenario).run()
