import asyncio
import json
import socket

import pytest

from ciip.adapter import ExternalAddress
from ciip.daemons import (
    AdapterDaemon,
    AdapterDaemonConfig,
    RegistryDaemon,
    RegistryDaemonConfig,
    emulate,
    load_adapter_config,
    read_record,
    stream_record,
)
from ciip.errors import BindError
from ciip.frame import Frame, FrameFlags, decode_frame


class Echo(asyncio.DatagramProtocol):
    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        self.transport.sendto(data, addr)


async def _start(daemon):
    stop = asyncio.Event()
    task = asyncio.create_task(daemon.run(stop))
    for _ in range(200):
        if getattr(daemon, "_link_server", None) or getattr(daemon, "server", None):
            break
        await asyncio.sleep(0.005)
    return stop, task


def _config(peer, **kw):
    return AdapterDaemonConfig(
        mappings=[(0x0A, peer, None)],
        udp_listen=("127.0.0.1", 0),
        link_listen=("127.0.0.1", 0),
        bind_ip="127.0.0.1",
        tick=5,
        **kw,
    )


def test_stream_record_round_trip():
    async def main():
        reader = asyncio.StreamReader()
        reader.feed_data(stream_record(b"abc") + stream_record(b""))
        reader.feed_eof()
        return [await read_record(reader), await read_record(reader), await read_record(reader)]

    assert asyncio.run(main()) == [b"abc", b"", None]
    assert stream_record(b"\x01" * 300)[:2] == b"\x01\x2c"


def test_emulated_sensor_echo_loopback():
    async def main():
        loop = asyncio.get_running_loop()
        echo, _ = await loop.create_datagram_endpoint(Echo, local_addr=("127.0.0.1", 0))
        peer = ExternalAddress(*echo.get_extra_info("sockname")[:2])
        daemon = AdapterDaemon(_config(peer))
        stop, task = await _start(daemon)
        result = await asyncio.wait_for(
            emulate(daemon.link_address, 0x0A, [b"AB", b"CD"], interval=10, expect=2, duration=5000),
            timeout=10,
        )
        stop.set()
        await task
        echo.close()
        return result, daemon

    result, daemon = asyncio.run(main())
    assert result["received"] == [b"AB", b"CD"]
    stats = daemon.stats()
    assert stats["adapter"]["datagrams_out"] == 2
    assert stats["registry"]["registrations"] >= 1
    json.dumps(stats)


def test_unknown_source_dropped_on_shared_port():
    async def main():
        daemon = AdapterDaemon(AdapterDaemonConfig(
            udp_listen=("127.0.0.1", 0), link_listen=("127.0.0.1", 0), tick=5
        ))
        stop, task = await _start(daemon)
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            s.sendto(b"hello", daemon.udp_address)
        for _ in range(200):
            if daemon.adapter.stats.dropped_unknown_cid:
                break
            await asyncio.sleep(0.005)
        stop.set()
        await task
        return daemon

    daemon = asyncio.run(main())
    assert daemon.stats()["adapter"]["dropped_unknown_cid"] == 1


def test_adapter_bind_error():
    async def main():
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
            s.bind(("127.0.0.1", 0))
            s.listen()
            taken = s.getsockname()
            cfg = AdapterDaemonConfig(udp_listen=("127.0.0.1", 0), link_listen=taken)
            with pytest.raises(BindError):
                await AdapterDaemon(cfg).start()

    asyncio.run(main())


def test_registry_daemon_line_protocol():
    async def main():
        daemon = RegistryDaemon(RegistryDaemonConfig(listen=("127.0.0.1", 0), sweep_period=10))
        stop, task = await _start(daemon)
        reader, writer = await asyncio.open_connection(*daemon.address)
        replies = []
        for line in ("REGISTER 0a bldg-3/panel-7", "LOOKUP 0a", "HEARTBEAT 0b"):
            writer.write(line.encode() + b"\n")
            await writer.drain()
            replies.append((await reader.readline()).decode().strip())
        writer.close()
        stop.set()
        await task
        return replies, daemon.stats()

    replies, stats = asyncio.run(main())
    assert replies[0].startswith("OK 0000000a ")
    assert replies[1].startswith("OK 0000000a ") and replies[1].endswith(" bldg-3/panel-7")
    assert replies[2] == "ERR UnknownDevice 0000000b"
    assert stats["alive"] == ["0000000a"]


def test_adapter_forwards_heartbeats_to_remote_registry():
    async def main():
        registry = RegistryDaemon(RegistryDaemonConfig(listen=("127.0.0.1", 0)))
        rstop, rtask = await _start(registry)
        loop = asyncio.get_running_loop()
        echo, _ = await loop.create_datagram_endpoint(Echo, local_addr=("127.0.0.1", 0))
        peer = ExternalAddress(*echo.get_extra_info("sockname")[:2])
        daemon = AdapterDaemon(_config(peer, registry=registry.address))
        stop, task = await _start(daemon)
        await emulate(daemon.link_address, 0x0A, heartbeat_interval=300, ack_timeout=100, duration=700)
        for _ in range(200):
            if registry.registry.stats.heartbeats >= 1:
                break
            await asyncio.sleep(0.005)
        stop.set()
        await task
        rstop.set()
        await rtask
        echo.close()
        return registry

    registry = asyncio.run(main())
    entry = registry.registry.lookup(0x0A)
    assert entry is not None and entry.location.startswith("adapter-link/127.0.0.1:")
    assert registry.registry.stats.heartbeats >= 1


def test_raw_link_frames_through_daemon():
    """A client speaking the stream framing directly gets the adapter's ack."""

    async def main():
        loop = asyncio.get_running_loop()
        echo, _ = await loop.create_datagram_endpoint(Echo, local_addr=("127.0.0.1", 0))
        peer = ExternalAddress(*echo.get_extra_info("sockname")[:2])
        daemon = AdapterDaemon(_config(peer))
        stop, task = await _start(daemon)
        reader, writer = await asyncio.open_connection(*daemon.link_address)
        writer.write(stream_record(Frame(0x0A, FrameFlags.NONE, b"AB").encode()))
        await writer.drain()
        frames = [decode_frame(await read_record(reader)) for _ in range(2)]
        writer.close()
        stop.set()
        await task
        echo.close()
        return frames

    ack, echoed = asyncio.run(main())
    assert ack == Frame(0x0A, FrameFlags.DIR | FrameFlags.ACK)
    assert echoed == Frame(0x0A, FrameFlags.DIR, b"AB")


def test_load_adapter_config(tmp_path):
    (tmp_path / "map.txt").write_text("0a 127.0.0.1:9000\n")
    cfg = tmp_path / "adapter.ini"
    cfg.write_text("[adapter]\nudp_listen = 127.0.0.1:0\nmappings = map.txt\nregistry = 127.0.0.1:7200\n")
    loaded = load_adapter_config(cfg)
    assert loaded.registry == ("127.0.0.1", 7200)
    daemon = AdapterDaemon(loaded)
    assert daemon.adapter.lookup_by_cid(0x0A) == ExternalAddress("127.0.0.1", 9000)
