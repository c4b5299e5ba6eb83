"""HTTP management API over a registry instance and the stateless tools."""

from __future__ import annotations

import time
from collections.abc import Callable

from fastapi import FastAPI, HTTPException

from ..errors import ConfigError, PayloadTooLarge, UnknownDevice
from ..registry import Registry, RegistryEntry
from ..scenario import parse_scenario, run_scenario
from ..tools import dissect, overhead, parse_hex
from .schemas import (
    DeviceOut,
    DissectRequest,
    DissectResponse,
    HeartbeatRequest,
    OverheadResponse,
    RegisterRequest,
    ScenarioRequest,
    ScenarioResponse,
    SweepRequest,
    SweepResponse,
)


def _monotonic_ms() -> Callable[[], int]:
    t0 = time.monotonic()
    return lambda: int((time.monotonic() - t0) * 1000)


def _device(entry: RegistryEntry) -> DeviceOut:
    return DeviceOut(
        cid=f"{entry.cid:08x}",
        location=entry.location,
        last_heartbeat=entry.last_heartbeat,
        state=entry.state.value,
    )


def create_app(registry: Registry | None = None, clock: Callable[[], int] | None = None) -> FastAPI:
    registry = registry if registry is not None else Registry()
    clock = clock or _monotonic_ms()
    app = FastAPI(title="ciip", version="0.1.0")
    app.state.registry = registry

    @app.get("/health")
    def health():
        return {"status": "ok", "alive_devices": len(registry.alive())}

    @app.post("/frames/dissect", response_model=DissectResponse)
    def dissect_frame(req: DissectRequest):
        try:
            data = parse_hex(req.hex)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=f"bad hex: {exc}")
        return dissect(data).as_dict()

    @app.get("/overhead/{payload_len}", response_model=OverheadResponse)
    def overhead_report(payload_len: int):
        try:
            return overhead(payload_len).as_dict()
        except (PayloadTooLarge, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/registry/devices", response_model=DeviceOut, status_code=201)
    def register(req: RegisterRequest):
        now = clock() if req.now_ms is None else req.now_ms
        return _device(registry.register(int(req.cid, 16), req.location, now))

    @app.post("/registry/heartbeat", response_model=DeviceOut)
    def heartbeat(req: HeartbeatRequest):
        now = clock() if req.now_ms is None else req.now_ms
        cid = int(req.cid, 16)
        try:
            registry.heartbeat(cid, now)
        except UnknownDevice as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return _device(registry.lookup(cid))

    @app.get("/registry/devices", response_model=list[DeviceOut])
    def list_devices():
        return [_device(e) for e in registry.alive()]

    @app.get("/registry/devices/{cid}", response_model=DeviceOut)
    def lookup(cid: str):
        try:
            entry = registry.lookup(int(cid, 16))
        except ValueError:
            raise HTTPException(status_code=422, detail=f"bad cid {cid!r}")
        if entry is None:
            raise HTTPException(status_code=404, detail=f"device {cid} not found")
        return _device(entry)

    @app.post("/registry/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        now = clock() if req.now_ms is None else req.now_ms
        return SweepResponse(now_ms=now, evicted=[f"{c:08x}" for c in registry.sweep(now)])

    @app.post("/scenarios/run", response_model=ScenarioResponse)
    def run(req: ScenarioRequest):
        try:
            scenario = parse_scenario(req.scenario, "<request>")
            result = run_scenario(scenario, seed=req.seed, duration=req.duration_ms)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ScenarioResponse(
            report=result.report(),
            event_log=result.event_log if req.include_log else None,
        )

    return app
