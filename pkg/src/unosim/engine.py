"""Discrete-event core: integer-nanosecond clock, ordered event heap, labeled RNG streams."""

from __future__ import annotations

import hashlib
import heapq
import random
from enum import Enum
from typing import Any, Callable

NS = 1
US = 1_000
MS = 1_000_000
SEC = 1_000_000_000


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class EventKind(Enum):
    PACKET_ARRIVAL = "packet-arrival"
    TIMER = "timer"
    FLOW_START = "flow-start"
    LINK_STATE = "link-state-change"


class Event:
    """Handle returned by :meth:`Simulator.schedule`; ``cancel()`` suppresses execution."""

    __slots__ = ("fire_at", "sequence", "kind", "fn", "args", "cancelled")

    def __init__(self, fire_at: int, sequence: int, kind: EventKind, fn: Callable, args: tuple):
        self.fire_at = fire_at
        self.sequence = sequence
        self.kind = kind
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __repr__(self) -> str:
        return f"Event(t={self.fire_at}, seq={self.sequence}, kind={self.kind.value})"


class RngStream:
    """A labeled pseudo-random stream.

    The generator seed is derived from ``(label, seed)`` with SHA-256, so the
    sequence does not depend on ``PYTHONHASHSEED`` or on creation order.
    """

    def __init__(self, label: str, seed: int):
        self.label = label
        self.seed = seed
        digest = hashlib.sha256(f"{label}:{seed}".encode()).digest()
        self._rng = random.Random(int.from_bytes(digest[:8], "little"))

    def uniform(self) -> float:
        return self._rng.random()

    def randrange(self, n: int) -> int:
        return self._rng.randrange(n)

    def choice(self, seq):
        return seq[self._rng.randrange(len(seq))]

    def expovariate(self, rate: float) -> float:
        return self._rng.expovariate(rate)

    def shuffle(self, seq: list) -> None:
        self._rng.shuffle(seq)

    def sample(self, population, k: int) -> list:
        return self._rng.sample(population, k)

    def randint(self, a: int, b: int) -> int:
        return self._rng.randint(a, b)


def rng_uniform(stream: RngStream) -> float:
    return stream.uniform()


class Simulator:
    """Single-threaded event loop.

    Events execute in ``(fire_at, sequence)`` order; ``sequence`` is the
    insertion counter, which makes ties deterministic.
    """

    def __init__(self, seed: int = 0):
        self.now = 0
        self.seed = seed
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._streams: dict[str, RngStream] = {}
        self.executed = 0

    def rng(self, label: str) -> RngStream:
        stream = self._streams.get(label)
        if stream is None:
            stream = self._streams[label] = RngStream(label, self.seed)
        return stream

    def schedule(self, fire_at: int, fn: Callable, *args: Any, kind: EventKind = EventKind.TIMER) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"event at {fire_at} ns scheduled in the past (now={self.now})")
        self._seq += 1
        ev = Event(fire_at, self._seq, kind, fn, args)
        heapq.heappush(self._heap, (fire_at, self._seq, ev))
        return ev

    def after(self, delay: int, fn: Callable, *args: Any, kind: EventKind = EventKind.TIMER) -> Event:
        return self.schedule(self.now + delay, fn, *args, kind=kind)

    def pending(self) -> list[Event]:
        return [ev for _, _, ev in self._heap if not ev.cancelled]

    def peek_time(self) -> int | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def run_until(self, t_end: int) -> int:
        """Execute every event with ``fire_at <= t_end``; returns the number executed."""
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before now={self.now}")
        heap = self._heap
        pop = heapq.heappop
        count = 0
        while heap and heap[0][0] <= t_end:
            t, _, ev = pop(heap)
            if ev.cancelled:
                continue
            self.now = t
            ev.fn(*ev.args)
            count += 1
        self.now = t_end
        self.executed += count
        return count

    def run(self, stop: Callable[[], bool] | None = None, t_max: int | None = None) -> int:
        """Run until the heap empties, ``stop()`` is true, or ``t_max`` is reached."""
        heap = self._heap
        pop = heapq.heappop
        count = 0
        while heap:
            t = heap[0][0]
            if t_max is not None and t > t_max:
                self.now = t_max
                break
            _, _, ev = pop(heap)
            if ev.cancelled:
                continue
            self.now = t
            ev.fn(*ev.args)
            count += 1
            if stop is not None and stop():
                break
        self.executed += count
        return count
