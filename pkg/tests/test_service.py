from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from ciip.registry import Registry, RegistryConfig
from ciip.service import create_app

SCENARIOS = Path(__file__).parent / "scenarios"


@pytest.fixture
def client():
    now = {"t": 0}
    app = create_app(Registry(RegistryConfig(3000)), clock=lambda: now["t"])
    c = TestClient(app)
    c.now = now
    return c


def test_health(client):
    assert client.get("/health").json() == {"status": "ok", "alive_devices": 0}


def test_dissect(client):
    body = client.post("/frames/dissect", json={"hex": "0000000A 00 02 008F 4142"}).json()
    assert body["ok"] and body["identifier"] == "0000000a" and body["payload"] == "4142"
    bad = client.post("/frames/dissect", json={"hex": "0000000A0002008F4143"}).json()
    assert bad["error"]["kind"] == "ChecksumMismatch"
    assert bad["checksum"] == {"stored": "0x008f", "computed": "0x0090"}
    assert client.post("/frames/dissect", json={"hex": "xyz"}).status_code == 422


def test_overhead(client):
    assert client.get("/overhead/32").json() == {
        "payload_len": 32, "ciip_frame_bytes": 40, "tcpip_segment_bytes": 72,
        "savings_fraction": pytest.approx(0.444444, abs=1e-6),
    }
    assert client.get("/overhead/256").status_code == 422


def test_registry_lifecycle(client):
    r = client.post("/registry/devices", json={"cid": "0a", "location": "bldg-3/panel-7"})
    assert r.status_code == 201 and r.json()["cid"] == "0000000a"
    client.now["t"] = 1000
    assert client.post("/registry/heartbeat", json={"cid": "0a"}).json()["last_heartbeat"] == 1000
    assert client.post("/registry/heartbeat", json={"cid": "0b"}).status_code == 404
    assert client.get("/registry/devices/0a").json()["state"] == "Alive"
    assert client.post("/registry/sweep", json={"now_ms": 4000}).json()["evicted"] == []
    assert client.post("/registry/sweep", json={"now_ms": 4001}).json()["evicted"] == ["0000000a"]
    assert client.get("/registry/devices/0a").status_code == 404
    assert client.get("/registry/devices").json() == []


def test_registry_validation(client):
    assert client.post("/registry/devices", json={"cid": "0", "location": "x"}).status_code == 422
    assert client.post("/registry/devices", json={"cid": "zz", "location": "x"}).status_code == 422
    assert client.get("/registry/devices/zz").status_code == 422


def test_run_scenario(client):
    text = (SCENARIOS / "liveness.ini").read_text()
    body = client.post("/scenarios/run", json={"scenario": text, "include_log": True}).json()
    assert body["report"]["totals"]["evictions"] == 1
    assert body["event_log"].startswith("0 UP ")
    bad = client.post("/scenarios/run", json={"scenario": "[link]\nloss_rate = 9\n"})
    assert bad.status_code == 422
