"""Deterministic link simulator on a virtual millisecond clock.

Randomness comes from SplitMix64 (Steele, Lea, Flood 2014), chosen because it
is tiny and trivially reproducible in any language. Each submission consumes
draws in this fixed order:

1. loss: ``u < loss_rate`` drops the frame; nothing else is drawn.
2. jitter: extra latency ``floor(u * (jitter + 1))`` ms.
3. reorder: if ``u < reorder_rate`` one more draw ``u`` adds
   ``1 + floor(u * (delay + jitter + 1))`` ms, letting later traffic overtake.

``u`` is ``(next_u64() >> 11) * 2**-53``. Events fire ordered by
``(deliver_at, submission sequence)``.
"""

from __future__ import annotations

import heapq
import itertools
from collections.abc import Hashable
from dataclasses import dataclass, field

from .errors import TimeRegression
from .frame import HEADER

MASK64 = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class LinkConfig:
    loss_rate: float = 0.0
    delay: int = 0
    jitter: int = 0
    reorder_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError("loss_rate must lie in [0, 1]")
        if not 0.0 <= self.reorder_rate <= 1.0:
            raise ValueError("reorder_rate must lie in [0, 1]")
        if self.delay < 0 or self.jitter < 0:
            raise ValueError("delay and jitter must be >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be an unsigned 64-bit value")


@dataclass(order=True)
class SimEvent:
    deliver_at: int
    seq: int
    data: bytes = field(compare=False)
    destination: Hashable = field(compare=False)
    link: Link | None = field(default=None, compare=False, repr=False)


class SimClock:
    """Virtual clock and the single event queue every link feeds."""

    def __init__(self, start: int = 0):
        self.now = start
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()

    def schedule(
        self, deliver_at: int, data: bytes, destination: Hashable, link: Link | None = None
    ) -> SimEvent:
        event = SimEvent(deliver_at, next(self._seq), bytes(data), destination, link)
        heapq.heappush(self._queue, event)
        return event

    def advance(self, to: int) -> list[tuple[bytes, Hashable]]:
        if to < self.now:
            raise TimeRegression(f"cannot move clock from {self.now} back to {to}")
        out = []
        while self._queue and self._queue[0].deliver_at <= to:
            event = heapq.heappop(self._queue)
            if event.link is not None:
                event.link.delivered += 1
            out.append((event.data, event.destination))
        self.now = to
        return out

    def next_time(self) -> int | None:
        return self._queue[0].deliver_at if self._queue else None

    @property
    def pending(self) -> int:
        return len(self._queue)


class Link:
    def __init__(self, config: LinkConfig, clock: SimClock, name: str = "link"):
        self.config = config
        self.clock = clock
        self.name = name
        self.rng = SplitMix64(config.seed)
        self.submitted = 0
        self.dropped = 0
        self.delivered = 0

    def submit(self, data: bytes, destination: Hashable, now: int | None = None) -> int | None:
        """Queue ``data`` for ``destination``; returns the delivery time, or
        ``None`` if the frame was lost."""
        cfg = self.config
        now = self.clock.now if now is None else now
        self.submitted += 1
        if self.rng.random() < cfg.loss_rate:
            self.dropped += 1
            return None
        latency = cfg.delay + int(self.rng.random() * (cfg.jitter + 1))
        if self.rng.random() < cfg.reorder_rate:
            latency += 1 + int(self.rng.random() * (cfg.delay + cfg.jitter + 1))
        return self.clock.schedule(now + latency, data, destination, self).deliver_at

    @property
    def in_flight(self) -> int:
        return self.submitted - self.dropped - self.delivered


def trace_line(t: int, direction: str, data: bytes, verdict: str, link_cid: int) -> str:
    """One event-log line: ``<t-ms> <direction> <cid-hex> <flags> <size> <verdict> <link-cid-hex>``.

    Header fields are read raw so malformed frames still log.
    """
    if len(data) >= HEADER.size:
        cid, flags, size, _ = HEADER.unpack_from(data)
        flag_text = "".join(
            ch if flags & bit else "-" for ch, bit in (("D", 0x80), ("R", 0x40), ("A", 0x20))
        )
        return f"{t} {direction} {cid:08x} {flag_text} {size} {verdict} {link_cid:08x}"
    return f"{t} {direction} ???????? ??? {len(data)} {verdict} {link_cid:08x}"
