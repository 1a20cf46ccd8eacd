"""Congestion control (UnoCC and two baselines) and the sender/receiver endpoints."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .config import ConfigError
from .reliability import BlockState, BlockStatus, frame_blocks, on_block_packet

US = 1_000


@dataclass(slots=True)
class AckInfo:
    bytes_acked: int
    ecn_echo: bool
    pkt_send_time: int
    rtt_sample: int


@dataclass(slots=True)
class FlowState:
    """Per-sender congestion state.  Times are ns, windows bytes."""

    flow_id: int
    cls: str
    cwnd: float
    base_rtt: int
    alpha: float
    beta: float
    K: float
    bdp: float
    epoch_period: int
    mtu: int = 4096
    max_cwnd: float = float("inf")
    ewma_gain: float = 0.125
    md_scale_floor: float = 0.05
    gentle_factor: float = 0.3
    delay_epsilon: int = 5 * US
    qa_period: int = 0
    epoch_time: int | None = None
    md_scale: float = 1.0
    ewma_ecn: float = 0.0
    epoch_ecn_marked: int = 0
    epoch_acks: int = 0
    epoch_min_delay: int = 1 << 62
    qa_window_start: int | None = None
    qa_cwnd_ref: float = 0.0
    bytes_acked_in_qa: int = 0
    qa_cooldown_until: int = -1
    inflight: int = 0
    trace: list | None = None

    def __post_init__(self):
        if self.qa_period <= 0:
            self.qa_period = self.base_rtt

    def clamp(self) -> None:
        if self.cwnd < self.mtu:
            self.cwnd = self.mtu
        elif self.cwnd > self.max_cwnd:
            self.cwnd = self.max_cwnd


def relative_delay(rtt_sample: int, base_rtt: int) -> int:
    d = rtt_sample - base_rtt
    return d if d > 0 else 0


class UnoCC:
    """Per-ACK additive increase, per-epoch ECN multiplicative decrease with gentle
    reduction for phantom-only congestion, and Quick Adapt."""

    name = "uno"
    quick_adapt = True
    gentle = True

    def on_ack(self, f: FlowState, ack: AckInfo, now: int) -> bool:
        """Returns True when the ACK closed an epoch."""
        if f.epoch_time is None:
            f.epoch_time = now
            f.qa_window_start = now
            f.qa_cwnd_ref = f.cwnd
        if not ack.ecn_echo:
            f.cwnd += f.alpha * ack.bytes_acked / f.cwnd
            if f.cwnd > f.max_cwnd:
                f.cwnd = f.max_cwnd
        else:
            f.epoch_ecn_marked += 1
        f.epoch_acks += 1
        d = ack.rtt_sample - f.base_rtt
        if d < f.epoch_min_delay:
            f.epoch_min_delay = d
        f.bytes_acked_in_qa += ack.bytes_acked
        return self.epoch_boundary_check(f, ack, now)

    def epoch_boundary_check(self, f: FlowState, ack: AckInfo, now: int) -> bool:
        if ack.pkt_send_time >= f.epoch_time:
            self.on_epoch(f, now)
            f.epoch_time += f.epoch_period
            return True
        return False

    def md_factor(self, f: FlowState) -> float:
        return f.ewma_ecn * (4 * f.K / (f.K + f.bdp))

    def on_epoch(self, f: FlowState, now: int) -> None:
        acks = f.epoch_acks
        marked = f.epoch_ecn_marked
        min_delay = f.epoch_min_delay
        f.epoch_acks = f.epoch_ecn_marked = 0
        f.epoch_min_delay = 1 << 62
        if now < f.qa_cooldown_until or acks == 0:
            return
        frac = marked / acks
        g = f.ewma_gain
        f.ewma_ecn = (1 - g) * f.ewma_ecn + g * frac
        if frac > 0:
            if self.gentle and min_delay <= f.delay_epsilon:
                f.md_scale = max(f.md_scale * f.gentle_factor, f.md_scale_floor)
            else:
                f.md_scale = 1.0
            before = f.cwnd
            f.cwnd *= 1 - self.md_factor(f) * f.md_scale
            if f.cwnd < f.mtu:
                f.cwnd = f.mtu
            if f.trace is not None:
                f.trace.append((now, f.flow_id, "md", before, f.cwnd, f.md_scale))

    def on_qa_tick(self, f: FlowState, now: int) -> bool:
        """Quick Adapt check at the end of a QA window; returns True when it fired."""
        fired = False
        if f.trace is not None:
            f.trace.append((now, f.flow_id, "qa-window", f.qa_cwnd_ref, f.bytes_acked_in_qa,
                            now < f.qa_cooldown_until))
        if self.quick_adapt and now >= f.qa_cooldown_until and f.bytes_acked_in_qa < f.qa_cwnd_ref * f.beta:
            before = f.cwnd
            f.cwnd = max(f.bytes_acked_in_qa, f.mtu)
            f.qa_cooldown_until = now + f.base_rtt
            fired = True
            if f.trace is not None:
                f.trace.append((now, f.flow_id, "qa", before, f.cwnd, f.bytes_acked_in_qa))
        f.qa_window_start = now
        f.bytes_acked_in_qa = 0
        f.qa_cwnd_ref = f.cwnd
        return fired

    def on_loss(self, f: FlowState, kind: str, now: int) -> None:
        pass


class GeminiApproxCC(UnoCC):
    """UnoCC's AI/MD formulas reacting once per the flow's own RTT; no QA, no gentle mode."""

    name = "gemini"
    quick_adapt = False
    gentle = False


class DctcpCC(UnoCC):
    """EWMA-of-marks decrease once per RTT, one MTU per RTT additive increase."""

    name = "dctcp"
    quick_adapt = False
    gentle = False

    def on_ack(self, f: FlowState, ack: AckInfo, now: int) -> bool:
        if f.epoch_time is None:
            f.epoch_time = now
        if not ack.ecn_echo:
            f.cwnd += f.mtu * ack.bytes_acked / f.cwnd
            if f.cwnd > f.max_cwnd:
                f.cwnd = f.max_cwnd
        else:
            f.epoch_ecn_marked += 1
        f.epoch_acks += 1
        return self.epoch_boundary_check(f, ack, now)

    def on_epoch(self, f: FlowState, now: int) -> None:
        acks, marked = f.epoch_acks, f.epoch_ecn_marked
        f.epoch_acks = f.epoch_ecn_marked = 0
        if acks == 0:
            return
        frac = marked / acks
        g = f.ewma_gain
        f.ewma_ecn = (1 - g) * f.ewma_ecn + g * frac
        if marked:
            before = f.cwnd
            f.cwnd = max(f.cwnd * (1 - f.ewma_ecn / 2), f.mtu)
            if f.trace is not None:
                f.trace.append((now, f.flow_id, "md", before, f.cwnd, 1.0))

    def on_loss(self, f: FlowState, kind: str, now: int) -> None:
        if kind == "rto":
            f.cwnd = f.mtu
        elif now >= f.qa_cooldown_until:
            f.cwnd = max(f.cwnd / 2, f.mtu)
            f.qa_cooldown_until = now + f.base_rtt


CC_CLASSES = {"uno": UnoCC, "gemini": GeminiApproxCC, "dctcp": DctcpCC}


def baseline_cc(kind: str):
    try:
        return CC_CLASSES[kind]()
    except KeyError:
        raise ConfigError(f"transport.cc: unknown congestion control {kind!r}") from None


# ---------------------------------------------------------------- endpoints

@dataclass
class Flow:
    flow_id: int
    src: str
    dst: str
    size: int
    start: int = 0
    cls: str = "intra"
    tag: str = ""


class Packet:
    __slots__ = ("flow_id", "seq", "size", "sent_time", "ce", "path", "hop", "stamp",
                 "subflow", "order", "acked", "released", "sender", "block", "pos", "gen")

    def __init__(self, sender, seq: int, size: int, now: int, order: int):
        self.sender = sender
        self.flow_id = sender.flow.flow_id
        self.seq = seq
        self.size = size
        self.sent_time = now
        self.ce = False
        self.path = None
        self.hop = 0
        self.stamp = 0
        self.subflow = 0
        self.order = order
        self.acked = False
        self.released = False
        self.block = -1
        self.pos = -1
        self.gen = 0


class Sender:
    """Window-limited sender.  Inter-DC flows may be erasure coded (``ec=(x, y)``)."""

    def __init__(self, net, flow: Flow, state: FlowState, cc, lb, ec: tuple[int, int] | None,
                 paced: bool, rto: int, dupthresh: int, block_rto: int, ack_delay: int):
        self.net = net
        self.sim = net.sim
        self.flow = flow
        self.state = state
        self.cc = cc
        self.lb = lb
        self.paced = paced
        self.rto = rto
        self.dupthresh = dupthresh
        self.block_rto = block_rto
        self.ack_delay = ack_delay
        self.mtu = state.mtu
        self.order = 0
        self.bytes_on_wire = 0
        self.retransmitted_blocks = 0
        self.retransmitted_packets = 0
        self.done = False
        self.end: int | None = None
        self.started = False
        self.next_tx = 0
        self._wake = None
        self._qa_timer = None
        self._rto_timer = None
        self.last_progress = 0
        self.retx: deque[int] = deque()
        self.sent_order: deque[Packet] = deque()
        self.highest_acked_order = -1
        self.round_end = 0
        self.round_marked = 0
        self.round_acked = 0
        self.ec = ec
        if ec is not None:
            x, y = ec
            self.blocks = frame_blocks(flow.size, x, y, self.mtu)
            self.n = x + y
            self.total_pkts = len(self.blocks) * self.n
            self.confirmed = bytearray(len(self.blocks))
            self.n_confirmed = 0
            self.block_gen = [0] * len(self.blocks)
            self.block_pkts: list[list[Packet]] = [[] for _ in self.blocks]
            self.block_deadlines: deque[tuple[int, int, int]] = deque()
            self._block_timer = None
        else:
            self.total_pkts = max(1, -(-flow.size // self.mtu))
            self.last_size = flow.size - (self.total_pkts - 1) * self.mtu
            self.acked = bytearray(self.total_pkts)
            self.n_acked = 0
        self.next_fresh = 0

    # -- sending ------------------------------------------------------------
    def start(self) -> None:
        self.started = True
        self.last_progress = self.sim.now
        self.try_send()
        if self.ec is None:
            self._arm_rto()

    def _size_of(self, seq: int) -> int:
        if self.ec is None and seq == self.total_pkts - 1:
            return self.last_size
        return self.mtu

    def _pending(self) -> int:
        """Next sequence to send without consuming it; -1 when nothing is queued."""
        retx = self.retx
        if self.ec is None:
            while retx and self.acked[retx[0]]:
                retx.popleft()
        else:
            while retx and self.confirmed[retx[0] // self.n]:
                retx.popleft()
        if retx:
            return retx[0]
        if self.next_fresh < self.total_pkts:
            return self.next_fresh
        return -1

    def can_send(self) -> bool:
        return not self.done and self.state.inflight < self.state.cwnd and self._pending() >= 0

    def try_send(self) -> None:
        if self.done:
            return
        f = self.state
        sim = self.sim
        while f.inflight < f.cwnd:
            seq = self._pending()
            if seq < 0:
                return
            now = sim.now
            if self.paced and now < self.next_tx:
                if self._wake is None:
                    self._wake = sim.schedule(self.next_tx, self._on_wake)
                return
            if self.retx and self.retx[0] == seq:
                self.retx.popleft()
                self.retransmitted_packets += 1
            else:
                self.next_fresh += 1
            self.send_packet(seq)

    def _on_wake(self) -> None:
        self._wake = None
        self.try_send()

    def send_packet(self, seq: int) -> Packet:
        now = self.sim.now
        size = self._size_of(seq)
        pkt = Packet(self, seq, size, now, self.order)
        self.order += 1
        f = self.state
        f.inflight += size
        self.bytes_on_wire += size
        if self.paced:
            gap = int(size * f.base_rtt / f.cwnd)
            self.next_tx = (self.next_tx if self.next_tx > now else now) + gap
        self.sent_order.append(pkt)
        if self.ec is not None:
            b, pos = divmod(seq, self.n)
            pkt.block, pkt.pos, pkt.gen = b, pos, self.block_gen[b]
            self.block_pkts[b].append(pkt)
            if pos == self.n - 1:
                self._push_block_deadline(b, now)
        path = self.lb.on_send(pkt)
        self.net.inject(pkt, path)
        return pkt

    # -- acknowledgements ----------------------------------------------------
    def on_ack(self, pkt: Packet) -> None:
        if self.done:
            return
        now = self.sim.now
        self.lb.on_ack(pkt.subflow, pkt.ce, now)
        pkt.acked = True
        if self.ec is None and not self.acked[pkt.seq]:
            self.acked[pkt.seq] = 1
            self.n_acked += 1
            self.last_progress = now
        if not pkt.released:
            pkt.released = True
            f = self.state
            f.inflight -= pkt.size
            if pkt.order > self.highest_acked_order:
                self.highest_acked_order = pkt.order
            self.cc.on_ack(f, AckInfo(pkt.size, pkt.ce, pkt.sent_time, now - pkt.sent_time), now)
            if self._qa_timer is None and self.cc.quick_adapt:
                self._qa_timer = self.sim.schedule(now + f.qa_period, self._qa_tick)
            self._round(pkt.ce, now)
        if self.ec is None:
            if self.n_acked == self.total_pkts:
                self.finish(now)
                return
            self._detect_losses(now)
        else:
            self._scan_timeouts(now)
        self.try_send()

    def _round(self, ce: bool, now: int) -> None:
        self.round_acked += 1
        if ce:
            self.round_marked += 1
        if now >= self.round_end:
            if self.round_end:
                self.lb.on_round(self.round_marked, self.round_acked, now)
            self.round_marked = self.round_acked = 0
            self.round_end = now + self.state.base_rtt

    def _qa_tick(self) -> None:
        if self.done:
            self._qa_timer = None
            return
        now = self.sim.now
        self.cc.on_qa_tick(self.state, now)
        self._qa_timer = self.sim.schedule(now + self.state.qa_period, self._qa_tick)

    # -- loss recovery without erasure coding --------------------------------
    def _declare_lost(self, pkt: Packet) -> None:
        pkt.released = True
        self.state.inflight -= pkt.size
        self.retx.append(pkt.seq)
        self.net.lost_declared += 1

    def _detect_losses(self, now: int) -> None:
        so = self.sent_order
        limit = self.highest_acked_order - self.dupthresh
        lost = None
        while so:
            p = so[0]
            if p.acked or p.released:
                so.popleft()
            elif p.order <= limit:
                so.popleft()
                if not self.acked[p.seq]:
                    self._declare_lost(p)
                    lost = p
                else:
                    p.released = True
                    self.state.inflight -= p.size
            else:
                break
        if lost is not None:
            self.cc.on_loss(self.state, "dup", now)
            self.lb.on_nack_or_timeout(lost.subflow, now)

    def _arm_rto(self) -> None:
        self._rto_timer = self.sim.schedule(self.last_progress + self.rto, self._on_rto)

    def _on_rto(self) -> None:
        self._rto_timer = None
        if self.done:
            return
        now = self.sim.now
        if now - self.last_progress < self.rto:
            self._arm_rto()
            return
        outstanding = [p for p in self.sent_order if not p.released and not p.acked]
        if outstanding:
            for p in outstanding:
                if not self.acked[p.seq]:
                    self._declare_lost(p)
                else:
                    p.released = True
                    self.state.inflight -= p.size
            self.sent_order.clear()
            self.cc.on_loss(self.state, "rto", now)
            self.lb.on_nack_or_timeout(outstanding[0].subflow, now)
        self.last_progress = now
        self._arm_rto()
        self.try_send()

    # -- erasure-coded recovery ----------------------------------------------
    def _push_block_deadline(self, b: int, now: int) -> None:
        self.block_deadlines.append((now + self.block_rto, b, self.block_gen[b]))
        if self._block_timer is None:
            self._block_timer = self.sim.schedule(self.block_deadlines[0][0], self._on_block_timer)

    def _release_block(self, b: int) -> None:
        f = self.state
        for p in self.block_pkts[b]:
            if not p.released:
                p.released = True
                f.inflight -= p.size
        self.block_pkts[b] = []

    def _scan_timeouts(self, now: int) -> None:
        """Packets unacknowledged for ``block_rto`` count as sender timeouts for the LB."""
        so = self.sent_order
        limit = now - self.block_rto
        while so:
            p = so[0]
            if p.acked:
                so.popleft()
            elif p.sent_time <= limit:
                so.popleft()
                self.lb.on_nack_or_timeout(p.subflow, now)
            else:
                break

    def _on_block_timer(self) -> None:
        self._block_timer = None
        if self.done:
            return
        now = self.sim.now
        self._scan_timeouts(now)
        dl = self.block_deadlines
        while dl and dl[0][0] <= now:
            _, b, gen = dl.popleft()
            if self.confirmed[b] or gen != self.block_gen[b]:
                continue
            unacked = [p for p in self.block_pkts[b] if not p.acked]
            self.lb.on_nack_or_timeout(unacked[0].subflow if unacked else 0, now)
            self.net.trace_event(self.flow.flow_id, b, "block-timeout")
            self.retransmit_block(b)
        if dl:
            self._block_timer = self.sim.schedule(dl[0][0], self._on_block_timer)
        self.try_send()

    def retransmit_block(self, b: int) -> None:
        if self.confirmed[b]:
            return
        self._release_block(b)
        self.block_gen[b] += 1
        base = b * self.n
        self.retx.extend(range(base, base + self.n))
        self.retransmitted_blocks += 1
        self.net.trace_event(self.flow.flow_id, b, "retransmit")

    def on_nack(self, b: int, missing: list[int]) -> None:
        if self.done or self.confirmed[b]:
            return
        now = self.sim.now
        self.net.trace_event(self.flow.flow_id, b, "nack")
        subflow = 0
        for p in self.block_pkts[b]:
            if p.pos in missing:
                subflow = p.subflow
                break
        self.lb.on_nack_or_timeout(subflow, now)
        self.retransmit_block(b)
        self.try_send()

    def on_block_decoded(self, b: int) -> None:
        if self.done or self.confirmed[b]:
            return
        self.confirmed[b] = 1
        self.n_confirmed += 1
        self._release_block(b)
        if self.n_confirmed == len(self.blocks):
            self.finish(self.sim.now)
        else:
            self.try_send()

    # -- completion ------------------------------------------------------------
    def finish(self, now: int) -> None:
        self.done = True
        self.end = now
        for t in (self._wake, self._qa_timer, self._rto_timer, getattr(self, "_block_timer", None)):
            if t is not None:
                t.cancel()
        self.net.flow_finished(self)


class Receiver:
    """Delivers payload upward, returns per-packet ACKs and, for coded flows,
    block decode confirmations or NACKs."""

    def __init__(self, net, sender: Sender, deadline: int):
        self.net = net
        self.sim = net.sim
        self.sender = sender
        self.flow = sender.flow
        self.deadline = deadline
        self.delivered = 0
        self.deliveries: list[tuple[int, int]] = []
        self.ec = sender.ec
        if self.ec is None:
            self.got = bytearray(sender.total_pkts)
        else:
            self.blocks: dict[int, BlockState] = {}
            self.decoded = 0
        self.nacks = 0

    def _deliver(self, nbytes: int) -> None:
        self.delivered += nbytes
        self.deliveries.append((self.sim.now, nbytes))

    def on_packet(self, pkt: Packet) -> None:
        net = self.net
        net.send_ack(self.sender.ack_delay, self.sender.on_ack, pkt)
        if self.ec is None:
            if not self.got[pkt.seq]:
                self.got[pkt.seq] = 1
                self._deliver(pkt.size)
            return
        b = pkt.block
        st = self.blocks.get(b)
        if st is None:
            x, y = self.ec
            st = self.blocks[b] = BlockState(b, x, x + y)
        if st.status is BlockStatus.DECODED:
            return
        res = on_block_packet(st, pkt.pos)
        if res is BlockStatus.DECODED:
            if st.timer is not None:
                st.timer.cancel()
                st.timer = None
            self.decoded += 1
            self._deliver(self.sender.blocks[b].data_bytes)
            net.send_control(self.sender.ack_delay, self.sender.on_block_decoded, b)
        elif st.timer is None:
            st.deadline = self.sim.now + self.deadline
            st.timer = self.sim.schedule(st.deadline, self._on_deadline, st)

    def _on_deadline(self, st: BlockState) -> None:
        st.timer = None
        if st.status is BlockStatus.DECODED:
            return
        st.status = BlockStatus.NACKED
        st.nacks += 1
        self.nacks += 1
        self.net.send_control(self.sender.ack_delay, self.sender.on_nack, st.block_id, st.missing())
