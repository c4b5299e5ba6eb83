"""Registration server: device locations plus heartbeat-driven eviction.

Evicted devices are kept as tombstones so eviction stays observable, but
:meth:`Registry.lookup` treats them as absent.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, replace

from .errors import UnknownDevice
from .frame import check_cid

DEFAULT_EVICTION_TIMEOUT_MS = 3000


class DeviceState(enum.Enum):
    ALIVE = "Alive"
    EVICTED = "Evicted"


@dataclass(frozen=True)
class RegistryEntry:
    cid: int
    location: str
    last_heartbeat: int
    state: DeviceState = DeviceState.ALIVE


@dataclass(frozen=True)
class RegistryConfig:
    eviction_timeout: int = DEFAULT_EVICTION_TIMEOUT_MS

    def __post_init__(self):
        if self.eviction_timeout <= 0:
            raise ValueError("eviction_timeout must be positive")

    @classmethod
    def for_heartbeat_interval(cls, interval: int) -> RegistryConfig:
        return cls(eviction_timeout=3 * interval)


@dataclass
class RegistryStats:
    registrations: int = 0
    heartbeats: int = 0
    unknown_heartbeats: int = 0
    evictions: int = 0


class Registry:
    def __init__(self, config: RegistryConfig | None = None):
        self.config = config or RegistryConfig()
        self.stats = RegistryStats()
        self.evicted_log: list[tuple[int, int]] = []
        self._entries: dict[int, RegistryEntry] = {}
        self._lock = threading.Lock()

    def register(self, cid: int, location: str, now: int) -> RegistryEntry:
        check_cid(cid)
        entry = RegistryEntry(cid, location, now)
        with self._lock:
            self._entries[cid] = entry
            self.stats.registrations += 1
        return entry

    def heartbeat(self, cid: int, now: int) -> None:
        with self._lock:
            entry = self._entries.get(cid)
            if entry is None or entry.state is DeviceState.EVICTED:
                self.stats.unknown_heartbeats += 1
                raise UnknownDevice(cid)
            self._entries[cid] = replace(entry, last_heartbeat=now)
            self.stats.heartbeats += 1

    def sweep(self, now: int) -> list[int]:
        timeout = self.config.eviction_timeout
        evicted = []
        with self._lock:
            for cid in sorted(self._entries):
                entry = self._entries[cid]
                if entry.state is DeviceState.ALIVE and now - entry.last_heartbeat > timeout:
                    self._entries[cid] = replace(entry, state=DeviceState.EVICTED)
                    evicted.append(cid)
                    self.evicted_log.append((now, cid))
            self.stats.evictions += len(evicted)
        return evicted

    def lookup(self, cid: int) -> RegistryEntry | None:
        with self._lock:
            entry = self._entries.get(cid)
        if entry is None or entry.state is not DeviceState.ALIVE:
            return None
        return entry

    def entries(self) -> list[RegistryEntry]:
        """All entries including tombstones, ordered by CID."""
        with self._lock:
            return [self._entries[c] for c in sorted(self._entries)]

    def alive(self) -> list[RegistryEntry]:
        return [e for e in self.entries() if e.state is DeviceState.ALIVE]


# -- text protocol -------------------------------------------------------------


def _parse_cid(token: str) -> int:
    return check_cid(int(token, 16))


def handle_line(registry: Registry, line: str, now: int) -> str:
    """Apply one protocol request and return the single response line.

    ``now`` is the server clock; ``SWEEP`` carries its own timestamp.
    """
    parts = line.strip().split(None, 2)
    if not parts:
        return "ERR BadRequest empty line"
    verb = parts[0].upper()
    try:
        if verb == "REGISTER":
            if len(parts) < 3:
                return "ERR BadRequest usage: REGISTER <cid-hex> <location>"
            entry = registry.register(_parse_cid(parts[1]), parts[2].strip(), now)
            return f"OK {entry.cid:08x} {entry.last_heartbeat}"
        if verb == "HEARTBEAT":
            if len(parts) != 2:
                return "ERR BadRequest usage: HEARTBEAT <cid-hex>"
            cid = _parse_cid(parts[1])
            registry.heartbeat(cid, now)
            return f"OK {cid:08x} {now}"
        if verb == "LOOKUP":
            if len(parts) != 2:
                return "ERR BadRequest usage: LOOKUP <cid-hex>"
            cid = _parse_cid(parts[1])
            entry = registry.lookup(cid)
            if entry is None:
                return f"NOTFOUND {cid:08x}"
            return f"OK {entry.cid:08x} {entry.last_heartbeat} {entry.location}"
        if verb == "SWEEP":
            if len(parts) != 2 or not parts[1].isdigit():
                return "ERR BadRequest usage: SWEEP <now-ms>"
            evicted = registry.sweep(int(parts[1]))
            return " ".join(["OK", str(len(evicted)), *(f"{c:08x}" for c in evicted)])
    except UnknownDevice as exc:
        return f"ERR UnknownDevice {exc.cid:08x}"
    except ValueError as exc:
        return f"ERR BadRequest {exc}"
    return f"ERR BadRequest unknown verb {parts[0]}"
