"""Output-port model: drop-tail FIFO, RED ECN marking, optional phantom queue.

Transmission is computed analytically: a FIFO port with a known line rate
has deterministic departure times, so the port keeps ``(tx_end, size)``
pairs and retires them lazily instead of scheduling a per-packet
"transmission complete" event.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass


@dataclass(frozen=True)
class RedParams:
    min_thresh: float
    max_thresh: float

    def __post_init__(self):
        if not 0 < self.min_thresh < self.max_thresh:
            raise ValueError(f"RED thresholds must satisfy 0 < min < max, got {self.min_thresh}, {self.max_thresh}")

    @classmethod
    def fractions(cls, capacity: float, lo: float = 0.25, hi: float = 0.75) -> "RedParams":
        return cls(lo * capacity, hi * capacity)


def red_mark_probability(occupancy: float, min_thresh: float, max_thresh: float) -> float:
    if occupancy < min_thresh:
        return 0.0
    if occupancy >= max_thresh:
        return 1.0
    return (occupancy - min_thresh) / (max_thresh - min_thresh)


def serialization_ns(size_bytes: int, bw_bps: int) -> int:
    """Wire time rounded up to whole nanoseconds."""
    return -(-size_bytes * 8 * 1_000_000_000 // bw_bps)


class PhantomQueue:
    """Virtual counter: grows with every physical enqueue, drains at ``drain_rate``."""

    __slots__ = ("capacity", "drain_rate", "occupancy", "last_update", "_bytes_per_ns")

    def __init__(self, capacity: float, drain_rate: float):
        if capacity <= 0:
            raise ValueError("phantom capacity must be positive")
        self.capacity = float(capacity)
        self.drain_rate = drain_rate
        self.occupancy = 0.0
        self.last_update = 0
        self._bytes_per_ns = drain_rate / 8e9

    def drain_to(self, now: int) -> float:
        if now > self.last_update:
            occ = self.occupancy - (now - self.last_update) * self._bytes_per_ns
            self.occupancy = occ if occ > 0.0 else 0.0
            self.last_update = now
        return self.occupancy

    def add(self, size: int) -> None:
        occ = self.occupancy + size
        self.occupancy = occ if occ < self.capacity else self.capacity


class SwitchPort:
    """Egress queue of one directed link.

    ``enqueue`` returns the transmission end time of the packet, or ``-1`` when
    the packet is dropped for lack of buffer.
    """

    __slots__ = (
        "port_id", "line_rate", "prop_delay", "capacity", "red", "phantom", "marking",
        "occupancy", "busy_until", "_backlog", "up", "fail_epoch", "loss_model",
        "is_border", "enqueued_bytes", "dequeued_bytes", "dropped_bytes", "drops",
        "marks", "dst_node", "src_node", "link_id",
    )

    def __init__(self, port_id: str, line_rate: int, prop_delay: int, capacity: int,
                 red: RedParams | None = None, phantom: PhantomQueue | None = None,
                 marking: bool = True):
        if line_rate <= 0:
            raise ValueError("line rate must be positive")
        if prop_delay < 0:
            raise ValueError("propagation delay must be non-negative")
        if phantom is not None and phantom.drain_rate >= line_rate:
            raise ValueError("phantom drain rate must be below line rate")
        self.port_id = port_id
        self.line_rate = line_rate
        self.prop_delay = prop_delay
        self.capacity = capacity
        self.phantom = phantom
        marking_cap = phantom.capacity if phantom is not None else capacity
        self.red = red if red is not None else RedParams.fractions(marking_cap)
        self.marking = marking
        self.occupancy = 0
        self.busy_until = 0
        self._backlog: deque[tuple[int, int]] = deque()
        self.up = True
        self.fail_epoch = 0
        self.loss_model = None
        self.is_border = False
        self.enqueued_bytes = 0
        self.dequeued_bytes = 0
        self.dropped_bytes = 0
        self.drops = 0
        self.marks = 0
        self.src_node = None
        self.dst_node = None
        self.link_id = None

    def drain_step(self, now: int) -> int:
        """Retire packets whose transmission has finished by ``now``; returns bytes released."""
        released = 0
        backlog = self._backlog
        while backlog and backlog[0][0] <= now:
            released += backlog.popleft()[1]
        if released:
            self.occupancy -= released
            self.dequeued_bytes += released
        if self.phantom is not None:
            self.phantom.drain_to(now)
        return released

    def physical_bytes(self, now: int) -> int:
        self.drain_step(now)
        return self.occupancy

    def phantom_bytes(self, now: int) -> float:
        if self.phantom is None:
            return 0.0
        return self.phantom.drain_to(now)

    def enqueue(self, now: int, size: int, rand) -> tuple[int, bool]:
        """Admit a packet of ``size`` bytes at ``now``.

        ``rand`` is a zero-argument callable returning a uniform draw; it is
        only consulted between the RED thresholds.  Returns ``(tx_end, ce)``;
        ``tx_end == -1`` means the packet was dropped.
        """
        backlog = self._backlog
        if backlog and backlog[0][0] <= now:
            released = 0
            while backlog and backlog[0][0] <= now:
                released += backlog.popleft()[1]
            self.occupancy -= released
            self.dequeued_bytes += released
        occ = self.occupancy + size
        if occ > self.capacity:
            self.drops += 1
            self.dropped_bytes += size
            return -1, False
        self.occupancy = occ
        self.enqueued_bytes += size
        ph = self.phantom
        if ph is not None:
            ph.drain_to(now)
            ph.add(size)
            mark_occ = ph.occupancy
        else:
            mark_occ = occ
        ce = False
        if self.marking:
            red = self.red
            if mark_occ >= red.min_thresh:
                if mark_occ >= red.max_thresh or rand() < (mark_occ - red.min_thresh) / (red.max_thresh - red.min_thresh):
                    ce = True
                    self.marks += 1
        start = self.busy_until if self.busy_until > now else now
        tx_end = start + -(-size * 8_000_000_000 // self.line_rate)
        self.busy_until = tx_end
        backlog.append((tx_end, size))
        return tx_end, ce

    def resident_bytes(self) -> int:
        return self.occupancy

    def __repr__(self) -> str:
        return f"SwitchPort({self.port_id})"
