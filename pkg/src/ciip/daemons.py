"""Long-running adapter and registry services, plus the sensor emulator.

Endpoint links are TCP byte streams carrying one CIIP frame per record, each
record prefixed by its 2-byte big-endian length. All protocol state is touched
from the event loop thread only.
"""

from __future__ import annotations

import asyncio
import configparser
import json
import logging
import struct
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .adapter import Adapter, Datagram, ExternalAddress, LinkSend, MappingEntry, load_mapping
from .endpoint import (
    DEFAULT_ACK_TIMEOUT_MS,
    DEFAULT_HEARTBEAT_INTERVAL_MS,
    DEFAULT_MAX_RETRIES,
    Endpoint,
    EndpointConfig,
)
from .errors import BindError, CiipError, ConfigError, FrameError, UnknownDevice
from .frame import decode_frame
from .registry import DEFAULT_EVICTION_TIMEOUT_MS, Registry, RegistryConfig, handle_line

log = logging.getLogger(__name__)

LENGTH_PREFIX = struct.Struct(">H")


def stream_record(data: bytes) -> bytes:
    return LENGTH_PREFIX.pack(len(data)) + data


async def read_record(reader: asyncio.StreamReader) -> bytes | None:
    try:
        head = await reader.readexactly(LENGTH_PREFIX.size)
        (length,) = LENGTH_PREFIX.unpack(head)
        return await reader.readexactly(length)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None


class _Clock:
    def __init__(self):
        self._t0 = asyncio.get_running_loop().time()

    def __call__(self) -> int:
        return int((asyncio.get_running_loop().time() - self._t0) * 1000)


def _parse_hostport(text: str, key: str) -> tuple[str, int]:
    host, sep, port = text.strip().rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"{key}: expected HOST:PORT, got {text!r}")
    return host.strip("[]"), int(port)


# -- registry ------------------------------------------------------------------


@dataclass
class RegistryDaemonConfig:
    listen: tuple[str, int] = ("127.0.0.1", 7200)
    eviction_timeout: int = DEFAULT_EVICTION_TIMEOUT_MS
    sweep_period: int = 100


class RegistryDaemon:
    """Serves the line protocol over TCP and sweeps on a fixed period."""

    def __init__(self, config: RegistryDaemonConfig):
        self.config = config
        self.registry = Registry(RegistryConfig(config.eviction_timeout))
        self.server: asyncio.base_events.Server | None = None
        self.clock: _Clock | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server.sockets[0].getsockname()[:2]

    async def start(self):
        self.clock = _Clock()
        try:
            self.server = await asyncio.start_server(self._client, *self.config.listen)
        except OSError as exc:
            raise BindError(f"registry cannot bind {self.config.listen}: {exc}") from None
        log.info("registry listening on %s:%s", *self.address)

    async def _client(self, reader, writer):
        try:
            while line := await reader.readline():
                reply = handle_line(self.registry, line.decode(errors="replace"), self.clock())
                writer.write(reply.encode() + b"\n")
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    async def run(self, stop: asyncio.Event):
        await self.start()
        period = self.config.sweep_period / 1000
        try:
            while not stop.is_set():
                try:
                    await asyncio.wait_for(stop.wait(), period)
                except asyncio.TimeoutError:
                    for cid in self.registry.sweep(self.clock()):
                        log.info("evicted %08x", cid)
        finally:
            self.server.close()
            await self.server.wait_closed()

    def stats(self) -> dict:
        return {
            "registry": vars(self.registry.stats),
            "alive": [f"{e.cid:08x}" for e in self.registry.alive()],
        }


class RegistryClient:
    """Forwards heartbeats to a remote registry, re-registering after eviction."""

    def __init__(self, address: tuple[str, int]):
        self.address = address
        self.locations: dict[int, str] = {}
        self._queue: asyncio.Queue[str] = asyncio.Queue()
        self._task: asyncio.Task | None = None

    def start(self):
        self._task = asyncio.create_task(self._pump())

    async def close(self):
        if self._task:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass

    def register(self, cid: int, location: str):
        self.locations[cid] = location
        self._queue.put_nowait(f"REGISTER {cid:08x} {location}")

    def heartbeat(self, cid: int):
        self._queue.put_nowait(f"HEARTBEAT {cid:08x}")

    async def _pump(self):
        reader = writer = None
        while True:
            line = await self._queue.get()
            try:
                if writer is None:
                    reader, writer = await asyncio.open_connection(*self.address)
                writer.write(line.encode() + b"\n")
                await writer.drain()
                reply = (await reader.readline()).decode().strip()
            except OSError as exc:
                log.warning("registry %s unreachable: %s", self.address, exc)
                writer = None
                continue
            if reply.startswith("ERR UnknownDevice"):
                cid = int(reply.split()[2], 16)
                if cid in self.locations:
                    self.register(cid, self.locations[cid])


# -- adapter -------------------------------------------------------------------


@dataclass
class AdapterDaemonConfig:
    mappings: list[tuple[int, ExternalAddress, int | None]] = field(default_factory=list)
    udp_listen: tuple[str, int] = ("0.0.0.0", 7000)
    link_listen: tuple[str, int] = ("127.0.0.1", 7100)
    bind_ip: str = "0.0.0.0"
    ack_timeout: int = DEFAULT_ACK_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES
    tick: int = 10
    registry: tuple[str, int] | None = None
    eviction_timeout: int = DEFAULT_EVICTION_TIMEOUT_MS
    sweep_period: int = 100
    mapping_path: Path | None = None


def load_adapter_config(path: str | Path) -> AdapterDaemonConfig:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section("adapter"):
        raise ConfigError(f"{path}: missing [adapter] section")
    s = parser["adapter"]
    allowed = {"udp_listen", "link_listen", "bind_ip", "mappings", "ack_timeout_ms",
               "max_retries", "tick_ms", "registry", "eviction_timeout_ms", "sweep_period_ms"}
    extra = set(s) - allowed
    if extra:
        raise ConfigError(f"{path}: [adapter] unknown key {sorted(extra)[0]!r}")
    cfg = AdapterDaemonConfig()
    try:
        if "udp_listen" in s:
            cfg.udp_listen = _parse_hostport(s["udp_listen"], "udp_listen")
        if "link_listen" in s:
            cfg.link_listen = _parse_hostport(s["link_listen"], "link_listen")
        if "registry" in s:
            cfg.registry = _parse_hostport(s["registry"], "registry")
        cfg.bind_ip = s.get("bind_ip", cfg.bind_ip)
        cfg.ack_timeout = s.getint("ack_timeout_ms", cfg.ack_timeout)
        cfg.max_retries = s.getint("max_retries", cfg.max_retries)
        cfg.tick = s.getint("tick_ms", cfg.tick)
        cfg.eviction_timeout = s.getint("eviction_timeout_ms", cfg.eviction_timeout)
        cfg.sweep_period = s.getint("sweep_period_ms", cfg.sweep_period)
    except ValueError as exc:
        raise ConfigError(f"{path}: [adapter] {exc}") from None
    if "mappings" in s:
        cfg.mapping_path = (path.parent / s["mappings"].strip()).resolve()
    return cfg


class _Datagrams(asyncio.DatagramProtocol):
    def __init__(self, on_datagram: Callable[[bytes, tuple], None]):
        self.on_datagram = on_datagram

    def datagram_received(self, data, addr):
        self.on_datagram(data, addr)

    def error_received(self, exc):
        log.debug("datagram error: %s", exc)


class AdapterDaemon:
    def __init__(self, config: AdapterDaemonConfig):
        self.config = config
        self.adapter = Adapter(
            config.ack_timeout,
            config.max_retries,
            on_heartbeat=self._heartbeat,
            on_attach=self._attached,
        )
        if config.mapping_path is not None:
            load_mapping(config.mapping_path, self.adapter)
        for cid, address, bind_port in config.mappings:
            self.adapter.map_insert(cid, address, None, bind_port=bind_port)
        self.registry: Registry | None = None
        self.registry_client: RegistryClient | None = None
        if config.registry is None:
            self.registry = Registry(RegistryConfig(config.eviction_timeout))
        self.clock: _Clock | None = None
        self._shared = None
        self._per_cid: dict[int, asyncio.DatagramTransport] = {}
        self._writers: dict[tuple, asyncio.StreamWriter] = {}
        self._link_server = None
        self._link_seq = 0

    @property
    def udp_address(self) -> tuple[str, int]:
        return self._shared.get_extra_info("sockname")[:2]

    @property
    def link_address(self) -> tuple[str, int]:
        return self._link_server.sockets[0].getsockname()[:2]

    def cid_address(self, cid: int) -> tuple[str, int]:
        return self._per_cid[cid].get_extra_info("sockname")[:2]

    async def start(self):
        loop = asyncio.get_running_loop()
        self.clock = _Clock()
        try:
            self._shared, _ = await loop.create_datagram_endpoint(
                lambda: _Datagrams(self._shared_datagram), local_addr=self.config.udp_listen
            )
            for entry in self.adapter.entries():
                transport, _ = await loop.create_datagram_endpoint(
                    lambda cid=entry.cid: _Datagrams(lambda d, a: self._cid_datagram(cid, d)),
                    local_addr=(self.config.bind_ip, entry.bind_port or 0),
                )
                self._per_cid[entry.cid] = transport
            self._link_server = await asyncio.start_server(self._link, *self.config.link_listen)
        except OSError as exc:
            self._close_transports()
            raise BindError(f"adapter cannot bind: {exc}") from None
        if self.config.registry is not None:
            self.registry_client = RegistryClient(self.config.registry)
            self.registry_client.start()
        log.info("adapter udp %s:%s, links %s:%s", *self.udp_address, *self.link_address)

    async def run(self, stop: asyncio.Event):
        await self.start()
        tick = self.config.tick / 1000
        next_sweep = self.config.sweep_period
        try:
            while not stop.is_set():
                try:
                    await asyncio.wait_for(stop.wait(), tick)
                except asyncio.TimeoutError:
                    pass
                now = self.clock()
                self._dispatch(self.adapter.on_timer(now))
                if self.registry is not None and now >= next_sweep:
                    self.registry.sweep(now)
                    next_sweep = now + self.config.sweep_period
        finally:
            await self.close()

    async def close(self):
        if self.registry_client is not None:
            await self.registry_client.close()
        for writer in list(self._writers.values()):
            writer.close()
        if self._link_server is not None:
            self._link_server.close()
            await self._link_server.wait_closed()
        self._close_transports()

    def _close_transports(self):
        if self._shared is not None:
            self._shared.close()
        for transport in self._per_cid.values():
            transport.close()

    def stats(self) -> dict:
        out = {"adapter": self.adapter.stats.as_dict()}
        if self.registry is not None:
            out["registry"] = vars(self.registry.stats)
        return out

    # -- callbacks --

    def _shared_datagram(self, data: bytes, addr: tuple):
        try:
            source = ExternalAddress(addr[0], addr[1])
        except ValueError:
            source = None
        self._dispatch(self.adapter.receive_datagram(data, self.clock(), source=source))

    def _cid_datagram(self, cid: int, data: bytes):
        self._dispatch(self.adapter.receive_datagram(data, self.clock(), cid=cid))

    async def _link(self, reader, writer):
        self._link_seq += 1
        link = ("tcp", self._link_seq)
        self._writers[link] = writer
        try:
            while (data := await read_record(reader)) is not None:
                self._dispatch(self.adapter.receive_from_link(link, data, self.clock()))
        finally:
            self.adapter.detach(link)
            self._writers.pop(link, None)
            writer.close()

    def _dispatch(self, emissions):
        for em in emissions:
            if isinstance(em, LinkSend):
                writer = self._writers.get(em.link)
                if writer is not None and not writer.is_closing():
                    writer.write(stream_record(em.data))
            elif isinstance(em, Datagram):
                transport = self._per_cid.get(em.cid, self._shared)
                transport.sendto(em.body, em.address.sockaddr)

    def _attached(self, entry: MappingEntry, now: int):
        writer = self._writers.get(entry.link)
        peer = writer.get_extra_info("peername") if writer else None
        location = f"adapter-link/{peer[0]}:{peer[1]}" if peer else "adapter-link"
        log.info("cid %08x attached (%s)", entry.cid, location)
        if self.registry is not None:
            self.registry.register(entry.cid, location, now)
        elif self.registry_client is not None:
            self.registry_client.register(entry.cid, location)

    def _heartbeat(self, cid: int, now: int):
        if self.registry is not None:
            try:
                self.registry.heartbeat(cid, now)
            except UnknownDevice:
                self.registry.register(cid, f"adapter/{cid:08x}", now)
        elif self.registry_client is not None:
            self.registry_client.heartbeat(cid)


# -- sensor emulator -------------------------------------------------------------


async def emulate(
    adapter: tuple[str, int],
    cid: int,
    payloads: Sequence[bytes] = (),
    *,
    interval: int = 100,
    heartbeat_interval: int = DEFAULT_HEARTBEAT_INTERVAL_MS,
    ack_timeout: int = DEFAULT_ACK_TIMEOUT_MS,
    max_retries: int = DEFAULT_MAX_RETRIES,
    duration: int | None = None,
    expect: int | None = None,
    on_receive: Callable[[bytes], None] | None = None,
    tick: int = 5,
) -> dict:
    """Run one emulated sensor over a stream link until ``duration`` elapses
    or ``expect`` payloads have been read back."""
    try:
        reader, writer = await asyncio.open_connection(*adapter)
    except OSError as exc:
        raise ConfigError(f"cannot reach adapter link at {adapter}: {exc}") from None
    clock = _Clock()
    ep = Endpoint(EndpointConfig(cid, ack_timeout, max_retries, heartbeat_interval), start=clock())
    backlog = list(payloads)
    received: list[bytes] = []
    failed: list[bytes] = []
    next_send = 0
    in_flight: bytes | None = None

    def send(frame):
        writer.write(stream_record(frame.encode()))

    async def rx():
        while (data := await read_record(reader)) is not None:
            try:
                reply = ep.on_frame(decode_frame(data), clock())
            except (FrameError, CiipError) as exc:
                log.debug("emulator dropped frame: %s", exc)
                continue
            if reply is not None:
                send(reply)

    rx_task = asyncio.create_task(rx())
    try:
        while True:
            now = clock()
            frame = ep.on_timer(now)
            if frame is not None:
                send(frame)
            while ep.registers.ppd:
                payload = ep.host_read()
                received.append(payload)
                if on_receive is not None:
                    on_receive(payload)
            if ep.registers.retr:
                failed.append(in_flight)
                ep.registers.retr = False
            if ep.idle:
                in_flight = None
            if ep.idle and backlog and now >= next_send:
                in_flight = backlog.pop(0)
                send(ep.host_write_and_act(in_flight, now))
                next_send = now + interval
            await writer.drain()
            if expect is not None and len(received) >= expect:
                break
            if duration is not None and now >= duration:
                break
            if rx_task.done():
                break
            await asyncio.sleep(tick / 1000)
    finally:
        rx_task.cancel()
        writer.close()
    return {
        "cid": f"{cid:08x}",
        "acked": ep.stats.acked,
        "failed": len(failed),
        "received": received,
        "retransmissions": ep.stats.retransmissions,
        "heartbeats": ep.stats.heartbeats,
    }


def stats_json(stats: dict) -> str:
    return json.dumps(stats, indent=2, sort_keys=True, default=str)
