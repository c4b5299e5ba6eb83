"""Exit criteria for the stack. Each test prints one PASS/FAIL line."""

import hashlib
import random
import time
from pathlib import Path

import pytest

from ciip.adapter import Adapter, ExternalAddress
from ciip.errors import ChecksumMismatch, ReservedBitsSet, Truncated, UnknownCid
from ciip.frame import Frame, FrameFlags, decode_frame, encode_frame
from ciip.registry import Registry, RegistryConfig
from ciip.scenario import load_scenario, parse_scenario, run_scenario
from ciip.tools import overhead

HERE = Path(__file__).parent
SCENARIOS = HERE / "scenarios"
GOLDEN = HERE / "golden"
FLAG_VALUES = [FrameFlags(v) for v in range(0, 0x100, 0x20)]


@pytest.fixture
def criterion(request, acceptance_report):
    name = request.node.get_closest_marker("criterion").args[0]
    outcome = {"ok": False, "detail": ""}
    yield outcome
    acceptance_report.append((name, outcome["ok"], outcome["detail"]))
    print(f"\n[{'PASS' if outcome['ok'] else 'FAIL'}] {name} {outcome['detail']}")


def random_frame(rng):
    return Frame(rng.getrandbits(32), rng.choice(FLAG_VALUES), rng.randbytes(rng.randint(0, 255)))


@pytest.mark.criterion("C1 codec round-trip (10k frames, <5 s)")
def test_c1_round_trip(criterion):
    rng = random.Random(20240101)
    frames = [random_frame(rng) for _ in range(10_000)]
    start = time.perf_counter()
    for f in frames:
        assert decode_frame(encode_frame(f)) == f
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    criterion.update(ok=True, detail=f"{elapsed:.2f}s")


@pytest.mark.criterion("C2 corruption detection (1k frames, exhaustive substitutions, <60 s)")
def test_c2_corruption_detection(criterion):
    rng = random.Random(20240102)
    start = time.perf_counter()
    checked = 0
    for _ in range(1000):
        wire = bytearray(encode_frame(random_frame(rng)))
        for pos in range(len(wire)):
            if pos in (6, 7):
                continue
            original = wire[pos]
            for value in range(256):
                if value == original:
                    continue
                wire[pos] = value
                try:
                    decode_frame(wire)
                except (ChecksumMismatch, Truncated, ReservedBitsSet):
                    checked += 1
                else:
                    pytest.fail(f"substitution at byte {pos} -> {value:#04x} was accepted")
            wire[pos] = original
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    criterion.update(ok=True, detail=f"{checked} substitutions rejected in {elapsed:.1f}s")


@pytest.fixture(scope="module")
def exactly_once_runs():
    sc = load_scenario(SCENARIOS / "exactly_once.ini")
    return run_scenario(sc), run_scenario(sc)


@pytest.mark.criterion("C3 exactly-once delivery (loss 0.3, 200 payloads, max_retries 10)")
def test_c3_exactly_once(criterion, exactly_once_runs):
    first, second = exactly_once_runs
    dev = first.devices[0x0A]
    assert len(dev.written) == 200
    assert len(set(dev.written)) == 200
    assert dev.at_peer == dev.written
    assert dev.read == dev.written
    assert dev.failed == []
    assert second.devices[0x0A].read == dev.read
    lost = sum(line.endswith(" DROPPED 0000000a") for line in first.events)
    assert lost > 0
    criterion.update(ok=True, detail=f"200/200 in order, {first.totals['retransmissions']} retransmissions, {lost} frames lost")


@pytest.mark.criterion("C4 liveness (no false eviction, one eviction in (13 s, 13.1 s], strict boundary)")
def test_c4_liveness(criterion):
    text = (SCENARIOS / "liveness.ini").read_text()
    healthy = parse_scenario(text.replace("dies_at_ms = 10000\n", ""))
    assert run_scenario(healthy).totals["evictions"] == 0

    sc = parse_scenario(text)
    result = run_scenario(sc)
    assert result.totals["evictions"] == 1
    ((t, cid),) = result.evictions
    assert cid == 0x0B
    assert 13_000 < t <= 13_000 + sc.sweep_period

    registry = Registry(RegistryConfig(3000))
    registry.register(0x0B, "x", 0)
    registry.heartbeat(0x0B, 10_000)
    assert registry.sweep(13_000) == []
    assert registry.sweep(13_001) == [0x0B]
    criterion.update(ok=True, detail=f"evicted {cid:08x} at t={t} ms")


@pytest.mark.criterion("C5 overhead comparator (0/32/255 bytes)")
def test_c5_overhead(criterion):
    expected = {0: (8, 40, 0.800), 32: (40, 72, 0.444), 255: (263, 295, 0.108)}
    for n, (ciip, tcpip, savings) in expected.items():
        r = overhead(n)
        assert (r.ciip_frame_bytes, r.tcpip_segment_bytes) == (ciip, tcpip)
        assert r.savings_fraction == pytest.approx(savings, abs=0.001)
    for n in range(256):
        r = overhead(n)
        assert r.ciip_frame_bytes == n + 8 and r.tcpip_segment_bytes == n + 40
        assert r.savings_fraction == pytest.approx(1 - (n + 8) / (n + 40))
    criterion.update(ok=True, detail="8/40 0.800, 40/72 0.444, 263/295 0.108")


@pytest.mark.criterion("C6 direction/identifier law over the C3 event log")
def test_c6_direction_law(criterion, exactly_once_runs):
    events = exactly_once_runs[0].events
    counts = {"UP": 0, "DOWN": 0}
    for line in events:
        _, direction, cid, flags, _, _, link = line.split()
        assert direction in counts
        counts[direction] += 1
        assert ("D" in flags) == (direction == "DOWN"), line
        assert cid == link, line
    assert counts["UP"] and counts["DOWN"]
    criterion.update(ok=True, detail=f"{counts['UP']} UP / {counts['DOWN']} DOWN frames checked")


@pytest.mark.criterion("C7 routing oracle (16 entries, 1000 frames)")
def test_c7_routing_oracle(criterion):
    rng = random.Random(20240107)
    adapter = Adapter()
    table = []
    for i, cid in enumerate(rng.sample(range(1, 2**32), 16)):
        link = ("link", i)
        adapter.map_insert(cid, ExternalAddress(f"10.0.{i}.1", 5000 + i), link)
        table.append((cid, link))
    known = [cid for cid, _ in table]
    unknown = 0
    for _ in range(1000):
        cid = rng.choice(known) if rng.random() < 0.8 else rng.randrange(1, 2**32)
        frame = Frame(cid, FrameFlags.DIR, rng.randbytes(rng.randint(0, 16)))
        oracle = None
        for entry_cid, link in table:
            if entry_cid == cid:
                oracle = link
                break
        if oracle is None:
            unknown += 1
            with pytest.raises(UnknownCid):
                adapter.route(frame)
        else:
            assert adapter.route(frame) == oracle
    assert unknown > 0
    assert adapter.stats.unknown_cid_down == unknown
    criterion.update(ok=True, detail=f"1000 agree ({unknown} UnknownCid)")


@pytest.mark.criterion("C8 determinism of the C3 event log (repeat run + committed golden)")
def test_c8_determinism(criterion, exactly_once_runs):
    first, second = exactly_once_runs
    assert first.event_log == second.event_log
    golden = (GOLDEN / "exactly_once_events.log").read_text()
    assert first.event_log == golden
    digest = hashlib.sha256(first.event_log.encode()).hexdigest()
    criterion.update(ok=True, detail=f"{len(first.events)} lines, sha256 {digest[:16]}")
