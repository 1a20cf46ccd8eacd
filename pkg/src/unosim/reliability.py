"""Erasure-coded block framing, receiver block tracking, and load balancers.

Parity packets carry no coded payload: an MDS code recovers a block from any
``x`` of its ``n`` packets, so decodability is the count predicate alone.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from enum import Enum

from .config import ConfigError
from .switchport import serialization_ns


@dataclass(frozen=True)
class EcBlock:
    block_id: int
    x: int
    y: int
    data_bytes: int  # application bytes carried; the last block may be short

    @property
    def n(self) -> int:
        return self.x + self.y

    def decodable(self, received: int) -> bool:
        return received >= self.x


def frame_blocks(message_bytes: int, x: int, y: int, mtu: int) -> list[EcBlock]:
    if x < 1 or y < 0:
        raise ValueError("need x >= 1 and y >= 0")
    per_block = x * mtu
    count = max(1, -(-message_bytes // per_block))
    blocks = [EcBlock(i, x, y, per_block) for i in range(count - 1)]
    blocks.append(EcBlock(count - 1, x, y, message_bytes - per_block * (count - 1)))
    return blocks


def wire_overhead(blocks: list[EcBlock], mtu: int, message_bytes: int) -> float:
    return sum(b.n for b in blocks) * mtu / message_bytes


class BlockStatus(Enum):
    PENDING = "pending"
    DECODED = "decoded"
    NACKED = "nacked"


class BlockState:
    """Receiver-side tracker for one block."""

    __slots__ = ("block_id", "x", "n", "received", "count", "status", "deadline", "timer", "nacks")

    def __init__(self, block_id: int, x: int, n: int):
        self.block_id = block_id
        self.x = x
        self.n = n
        self.received = bytearray(n)
        self.count = 0
        self.status = BlockStatus.PENDING
        self.deadline: int | None = None
        self.timer = None
        self.nacks = 0

    def missing(self) -> list[int]:
        return [i for i, r in enumerate(self.received) if not r]


def on_block_packet(state: BlockState, pos: int) -> BlockStatus | None:
    """Record arrival of ``pos``; returns DECODED exactly once, None when already decoded."""
    if state.status is BlockStatus.DECODED:
        return None
    if not state.received[pos]:
        state.received[pos] = 1
        state.count += 1
        if state.count >= state.x:
            state.status = BlockStatus.DECODED
            return BlockStatus.DECODED
    return state.status


def block_deadline(n: int, mtu: int, bottleneck_bw: int, hops: int, buffer_bytes: int,
                   line_rate: int, factor: float = 2.0) -> int:
    """Receiver timer: ``factor * (n * serialization + worst-case queuing over all hops)``."""
    max_queuing = hops * buffer_bytes * 8 * 1_000_000_000 / line_rate
    return int(factor * (n * serialization_ns(mtu, bottleneck_bw) + max_queuing))


# ---------------------------------------------------------------- load balancers

class LoadBalancer:
    """Chooses a path index for every packet of one flow."""

    name = "base"

    def __init__(self, topo, src: str, dst: str, flow_id: int, base_rtt: int, rng, seed: int):
        self.topo = topo
        self.src, self.dst, self.flow_id = src, dst, flow_id
        self.base_rtt = base_rtt
        self.rng = rng
        self.seed = seed
        self.count = topo.path_count(src, dst)
        self._paths: dict[int, tuple] = {}
        self.reroutes: list[int] = []

    def path(self, idx: int) -> tuple:
        p = self._paths.get(idx)
        if p is None:
            p = self._paths[idx] = self.topo.path_at(self.src, self.dst, idx)
        return p

    def _hash(self, *salt) -> int:
        key = f"{self.src}|{self.dst}|{self.flow_id}|{self.seed}|" + "|".join(map(str, salt))
        return zlib.crc32(key.encode())

    def on_send(self, pkt) -> tuple:
        raise NotImplementedError

    def on_ack(self, subflow: int, ce: bool, now: int) -> None:
        pass

    def on_round(self, marked: int, acked: int, now: int) -> None:
        pass

    def on_nack_or_timeout(self, subflow: int, now: int) -> bool:
        return False


class EcmpLB(LoadBalancer):
    name = "ecmp"

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.idx = self._hash("ecmp") % self.count

    def on_send(self, pkt):
        pkt.subflow = 0
        return self.path(self.idx)


class SprayLB(LoadBalancer):
    name = "spray"

    def on_send(self, pkt):
        pkt.subflow = 0
        return self.path(self.rng.randrange(self.count))


class PlbLB(LoadBalancer):
    """One path per flow; repath after ``rounds`` consecutive RTTs above ``threshold`` marks."""

    name = "plb"

    def __init__(self, *a, threshold: float = 0.5, rounds: int = 2, **kw):
        super().__init__(*a, **kw)
        self.threshold = threshold
        self.rounds = rounds
        self.repaths = 0
        self.idx = self._hash("plb", 0) % self.count
        self.congested_rounds = 0
        self.last_reroute = -(1 << 62)

    def on_send(self, pkt):
        pkt.subflow = 0
        return self.path(self.idx)

    def _repath(self, now: int) -> bool:
        if now - self.last_reroute <= self.base_rtt:
            return False
        self.repaths += 1
        self.idx = self._hash("plb", self.repaths) % self.count
        self.last_reroute = now
        self.congested_rounds = 0
        self.reroutes.append(now)
        return True

    def on_round(self, marked: int, acked: int, now: int) -> None:
        if acked and marked / acked > self.threshold:
            self.congested_rounds += 1
            if self.congested_rounds >= self.rounds:
                self._repath(now)
        else:
            self.congested_rounds = 0

    def on_nack_or_timeout(self, subflow: int, now: int) -> bool:
        return self._repath(now)


@dataclass
class Subflow:
    path_idx: int
    last_ack_time: int = -(1 << 62)


@dataclass
class SubflowTable:
    flow_id: int
    subflows: list[Subflow]
    index: int = 0
    last_reroute: int = -(1 << 62)

    @property
    def total(self) -> int:
        return len(self.subflows)


class UnoLB(LoadBalancer):
    """Round-robin over ``n_sf`` subflows with rate-limited rerouting away from bad paths."""

    name = "unolb"

    def __init__(self, *a, n_subflows: int = 8, **kw):
        super().__init__(*a, **kw)
        self.table = SubflowTable(self.flow_id, [Subflow(i) for i in self._initial_paths(n_subflows)])

    def _initial_paths(self, n: int) -> list[int]:
        topo = self.topo
        if topo.is_inter(self.src, self.dst):
            # distinct border links first, random choices inside each DC
            L = topo.params.border_links
            offset = self.rng.randrange(L)
            h2 = topo.half * topo.half
            return [topo.path_index_via(self.src, self.dst, (offset + i) % L,
                                        self.rng.randrange(h2), self.rng.randrange(h2))
                    for i in range(n)]
        order = list(range(self.count))
        self.rng.shuffle(order)
        return [order[i % self.count] for i in range(n)]

    def on_send(self, pkt):
        t = self.table
        sf = t.index
        pkt.subflow = sf
        t.index = (sf + 1) % len(t.subflows)
        return self.path(t.subflows[sf].path_idx)

    def on_ack(self, subflow: int, ce: bool, now: int) -> None:
        self.table.subflows[subflow].last_ack_time = now

    def on_nack_or_timeout(self, subflow: int, now: int) -> bool:
        t = self.table
        if now - t.last_reroute <= self.base_rtt:
            return False
        recent = [i for i, s in enumerate(t.subflows)
                  if i != subflow and now - s.last_ack_time <= self.base_rtt]
        if recent:
            new_idx = t.subflows[self.rng.choice(recent)].path_idx
        else:
            used = {s.path_idx for s in t.subflows}
            free = [i for i in range(self.count) if i not in used] or list(range(self.count))
            new_idx = self.rng.choice(free)
        t.subflows[subflow].path_idx = new_idx
        t.last_reroute = now
        self.reroutes.append(now)
        return True


def lb_baseline(kind: str, topo, src: str, dst: str, flow_id: int, base_rtt: int, rng, seed: int,
                n_subflows: int = 8, plb_threshold: float = 0.5, plb_rounds: int = 2) -> LoadBalancer:
    if kind == "ecmp":
        return EcmpLB(topo, src, dst, flow_id, base_rtt, rng, seed)
    if kind == "spray":
        return SprayLB(topo, src, dst, flow_id, base_rtt, rng, seed)
    if kind == "plb":
        return PlbLB(topo, src, dst, flow_id, base_rtt, rng, seed, threshold=plb_threshold, rounds=plb_rounds)
    if kind == "unolb":
        return UnoLB(topo, src, dst, flow_id, base_rtt, rng, seed, n_subflows=n_subflows)
    raise ConfigError(f"reliability.lb: unknown load balancer {kind!r}")
