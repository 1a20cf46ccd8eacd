"""Packet forwarding over source-routed paths, and the per-run simulation builder."""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import ConfigError, ScenarioConfig
from .engine import EventKind, Simulator
from .reliability import block_deadline, lb_baseline
from .topology import BlockLossModel, Topology
from .transport import CC_CLASSES, Flow, FlowState, Receiver, Sender
from .workload import build_workload

_ARRIVAL = EventKind.PACKET_ARRIVAL


class InvariantViolation(RuntimeError):
    """A runtime check (e.g. byte conservation) failed."""


class Network:
    """Moves packets hop by hop; one event per hop, at arrival on the next node."""

    def __init__(self, sim: Simulator, topo: Topology, ack_loss_rate: float = 0.0):
        self.sim = sim
        self.topo = topo
        self.ack_loss_rate = ack_loss_rate
        self._ack_rng = sim.rng("ack-loss")
        self._red = sim.rng("red").uniform
        self.bytes_sent = 0
        self.bytes_arrived = 0
        self.bytes_dropped = 0
        self.in_network = 0
        self.drops = {"overflow": 0, "link-down": 0, "loss": 0}
        self.lost_declared = 0
        self.acks_lost = 0
        # (time, flow_id, link_id) for every packet that met a failed link
        self.failed_hits: list[tuple[int, int, int]] = []
        # (time, port_id, flow_id) for overflow drops
        self.overflow_log: list[tuple[int, str, int]] = []
        self.events: list[tuple[int, int, int, str]] | None = None
        self.active = 0
        self.finished: list[Sender] = []

    # ---- data path -------------------------------------------------------
    def inject(self, pkt, path) -> None:
        pkt.path = path
        pkt.hop = 0
        self.bytes_sent += pkt.size
        self.in_network += pkt.size
        self._enter(pkt, path[0])

    def _drop(self, pkt, reason: str) -> None:
        self.drops[reason] += 1
        self.bytes_dropped += pkt.size
        self.in_network -= pkt.size

    def _enter(self, pkt, port) -> None:
        now = self.sim.now
        if not port.up:
            self.failed_hits.append((now, pkt.flow_id, port.link_id))
            self._drop(pkt, "link-down")
            return
        lm = port.loss_model
        if lm is not None and lm.drop_next():
            self._drop(pkt, "loss")
            return
        tx_end, ce = port.enqueue(now, pkt.size, self._red)
        if tx_end < 0:
            self.overflow_log.append((now, port.port_id, pkt.flow_id))
            self._drop(pkt, "overflow")
            return
        if ce:
            pkt.ce = True
        pkt.stamp = port.fail_epoch
        self.sim.schedule(tx_end + port.prop_delay, self._arrive, pkt, kind=_ARRIVAL)

    def _arrive(self, pkt) -> None:
        port = pkt.path[pkt.hop]
        if port.fail_epoch != pkt.stamp or not port.up:
            # was queued or on the wire when the link went down
            self.failed_hits.append((self.sim.now, pkt.flow_id, port.link_id))
            self._drop(pkt, "link-down")
            return
        pkt.hop += 1
        if pkt.hop == len(pkt.path):
            self.bytes_arrived += pkt.size
            self.in_network -= pkt.size
            pkt.sender.receiver.on_packet(pkt)
        else:
            self._enter(pkt, pkt.path[pkt.hop])

    # ---- control path ------------------------------------------------------
    def send_ack(self, delay: int, fn, pkt) -> None:
        """ACKs travel the reverse path as a fixed delay without queuing."""
        if self.ack_loss_rate and self._ack_rng.uniform() < self.ack_loss_rate:
            self.acks_lost += 1
            return
        self.sim.schedule(self.sim.now + delay, fn, pkt)

    def send_control(self, delay: int, fn, *args) -> None:
        self.sim.schedule(self.sim.now + delay, fn, *args)

    def trace_event(self, flow_id: int, block: int, kind: str) -> None:
        if self.events is not None:
            self.events.append((self.sim.now, flow_id, block, kind))

    def flow_finished(self, sender) -> None:
        self.active -= 1
        self.finished.append(sender)

    # ---- audit ------------------------------------------------------------
    def in_flight_bytes(self) -> int:
        """Bytes of packets whose next-hop arrival is still pending, from the event heap."""
        return sum(ev.args[0].size for ev in self.sim.pending() if ev.fn == self._arrive)

    def audit(self) -> dict:
        in_flight = self.in_flight_bytes()
        ok = self.bytes_sent == self.bytes_arrived + self.bytes_dropped + in_flight
        return {"sent": self.bytes_sent, "delivered": self.bytes_arrived,
                "dropped": self.bytes_dropped, "in_flight": in_flight, "ok": ok}


# ---------------------------------------------------------------- run builder

@dataclass
class FlowParams:
    base_rtt: int
    class_rtt: int
    bottleneck_bw: int
    bdp: float
    prop_rtt: int


@dataclass
class SimulationResult:
    config: ScenarioConfig
    topo: Topology
    net: Network
    flows: list[Flow]
    senders: list[Sender]
    params: list[FlowParams]
    end_time: int
    queue_samples: list[tuple[int, str, int, float]] = field(default_factory=list)
    cwnd_samples: list[tuple[int, int, float]] = field(default_factory=list)
    audit: dict = field(default_factory=dict)


def _resolve_link(topo: Topology, spec: str) -> int:
    spec = str(spec)
    kind, _, num = spec.partition(":") if ":" in spec else ("link", "", spec)
    try:
        n = int(num)
    except ValueError:
        raise ConfigError(f"failure.link_failures: bad link spec {spec!r}") from None
    if kind == "border":
        if not 0 <= n < len(topo.border_link_ids):
            raise ConfigError(f"failure.link_failures: no border link {n}")
        return topo.border_link_ids[n]
    if kind == "link":
        if not 0 <= n < len(topo.links):
            raise ConfigError(f"failure.link_failures: no link {n}")
        return n
    raise ConfigError(f"failure.link_failures: bad link spec {spec!r}")


class Simulation:
    """Builds topology, workload and endpoints from a config and runs them."""

    def __init__(self, cfg: ScenarioConfig, flows: list[Flow] | None = None):
        self.cfg = cfg
        self.sim = Simulator(cfg.run.seed)
        self.topo = Topology(cfg.topology)
        tc = cfg.transport
        self.net = Network(self.sim, self.topo, tc.ack_loss_rate)
        if cfg.run.event_trace:
            self.net.events = []
        self.flows = flows if flows is not None else build_workload(cfg.workload, self.topo, self.sim.rng("workload"))
        self.senders: list[Sender] = []
        self.params: list[FlowParams] = []
        self.queue_samples: list = []
        self.cwnd_samples: list = []
        self._apply_failures()
        for f in self.flows:
            self._add_flow(f)
        self.net.active = len(self.senders)

    # ---- parameter resolution ---------------------------------------------
    def _intra_epoch(self) -> int:
        """Unloaded RTT of a cross-pod intra-DC path."""
        servers = self.topo.servers_in(0)
        a = servers[0]
        b = next(s for s in servers if s.split("_")[1] != a.split("_")[1])
        return self.topo.unloaded_rtt(a, b, self.cfg.transport.mtu, self.cfg.transport.ack_size)

    def flow_params(self, f: Flow) -> FlowParams:
        topo, tc = self.topo, self.cfg.transport
        base = topo.unloaded_rtt(f.src, f.dst, tc.mtu, tc.ack_size)
        inter = topo.is_inter(f.src, f.dst)
        class_rtt = topo.params.inter_rtt if inter else topo.params.intra_rtt
        bw = topo.bottleneck_bw(f.src, f.dst)
        path = topo.path_at(f.src, f.dst, 0)
        prop = sum(p.prop_delay for p in path) * 2
        return FlowParams(base, class_rtt, bw, bw * class_rtt / 8e9, prop)

    def _add_flow(self, f: Flow) -> None:
        cfg, topo, tc, rc = self.cfg, self.topo, self.cfg.transport, self.cfg.reliability
        if f.src == f.dst or f.src not in topo.dc_of or f.dst not in topo.dc_of:
            raise ConfigError(f"workload: invalid flow endpoints {f.src}->{f.dst}")
        fp = self.flow_params(f)
        inter = topo.is_inter(f.src, f.dst)
        intra_bdp = topo.params.link_bw * topo.params.intra_rtt / 8e9
        if tc.cc == "uno":
            epoch = tc.epoch_period or self._epoch_cache()
        else:
            epoch = fp.base_rtt
        eps = tc.delay_epsilon if tc.delay_epsilon is not None else max(5_000, topo.params.intra_rtt // 4)
        qa_period = fp.base_rtt if tc.qa_period == "flow" else int(self._epoch_cache())
        state = FlowState(
            flow_id=f.flow_id, cls="inter" if inter else "intra",
            cwnd=max(tc.init_cwnd_bdp * fp.bdp, tc.mtu), base_rtt=fp.base_rtt,
            alpha=tc.alpha_bdp_fraction * fp.bdp, beta=tc.beta,
            K=tc.k_intra_bdp_fraction * intra_bdp, bdp=fp.bdp, epoch_period=epoch,
            mtu=tc.mtu, max_cwnd=max(tc.max_cwnd_bdp * fp.bdp, tc.mtu), ewma_gain=tc.ewma_gain,
            md_scale_floor=tc.md_scale_floor, gentle_factor=tc.gentle_factor,
            delay_epsilon=eps, qa_period=qa_period,
            trace=[] if cfg.run.cwnd_trace else None)
        cc = CC_CLASSES[tc.cc]()
        if tc.cc == "uno" and not tc.quick_adapt:
            cc.quick_adapt = False
        lb = lb_baseline(rc.lb, topo, f.src, f.dst, f.flow_id, fp.base_rtt,
                         self.sim.rng(f"routing:{f.flow_id}"), cfg.run.seed,
                         rc.n_subflows, rc.plb_threshold, rc.plb_rounds)
        ec = (rc.ec_data, rc.ec_parity) if (rc.ec and inter) else None
        paced = tc.pacing_inter if inter else tc.pacing_intra
        rto = max(int(tc.rto_rtt_mult * fp.base_rtt), tc.rto_min)
        path = topo.path_at(f.src, f.dst, 0)
        ack_delay = topo.one_way_delay(topo.reverse_path(path), tc.ack_size)
        sender = Sender(self.net, f, state, cc, lb, ec, paced, rto, tc.dupthresh,
                        int(rc.block_rto_rtt_mult * fp.base_rtt), ack_delay)
        deadline = 0
        if ec is not None:
            p = topo.params
            deadline = block_deadline(sum(ec), tc.mtu, fp.bottleneck_bw, len(path),
                                      max(p.intra_buffer, p.inter_buffer), fp.bottleneck_bw,
                                      rc.deadline_factor)
        sender.receiver = Receiver(self.net, sender, deadline)
        self.senders.append(sender)
        self.params.append(fp)
        self.sim.schedule(f.start, sender.start, kind=EventKind.FLOW_START)

    def _epoch_cache(self) -> int:
        if not hasattr(self, "_epoch"):
            self._epoch = self._intra_epoch()
        return self._epoch

    def _apply_failures(self) -> None:
        fc = self.cfg.failure
        for lf in fc.link_failures:
            if isinstance(lf, dict):
                link, at, restore = lf.get("link", "border:0"), lf.get("at", 0), lf.get("restore_at")
            else:
                link, at, restore = lf.link, lf.at, lf.restore_at
            self.topo.fail_link(self.sim, _resolve_link(self.topo, link), at, restore)
        if fc.loss_setup != "none":
            self.topo.attach_loss(BlockLossModel.table1(fc.loss_setup), self.sim,
                                  border_only=fc.loss_on == "border")

    # ---- monitoring ---------------------------------------------------------
    def monitored_ports(self):
        spec = self.cfg.run.queue_ports
        if spec and spec != ["auto"]:
            by_id = {p.port_id: p for p in self.topo.all_ports()}
            missing = [s for s in spec if s not in by_id]
            if missing:
                raise ConfigError(f"run.queue_ports: unknown ports {missing}")
            return [by_id[s] for s in spec]
        ports = []
        seen = set()
        for f in self.flows:
            last = self.topo.path_at(f.src, f.dst, 0)[-1]
            if last.port_id not in seen and len(ports) < 4:
                seen.add(last.port_id)
                ports.append(last)
        if any(self.topo.is_inter(f.src, f.dst) for f in self.flows):
            ports += [pair[0] for pair in self.topo.border_ports]
        return ports

    def _sample_queues(self, ports, period: int) -> None:
        now = self.sim.now
        for p in ports:
            self.queue_samples.append((now, p.port_id, p.physical_bytes(now), p.phantom_bytes(now)))
        if self.net.active:
            self.sim.schedule(now + period, self._sample_queues, ports, period)

    def _sample_cwnd(self, period: int) -> None:
        now = self.sim.now
        for s in self.senders:
            if s.started and not s.done:
                self.cwnd_samples.append((now, s.flow.flow_id, s.state.cwnd))
        if self.net.active:
            self.sim.schedule(now + period, self._sample_cwnd, period)

    # ---- run --------------------------------------------------------------
    def run(self) -> SimulationResult:
        rc = self.cfg.run
        if rc.queue_trace:
            ports = self.monitored_ports()
            if ports:
                self.sim.schedule(0, self._sample_queues, ports, rc.queue_sample)
        if rc.cwnd_trace:
            self.sim.schedule(0, self._sample_cwnd, rc.cwnd_sample)
        net = self.net
        if net.active:
            self.sim.run(stop=lambda: net.active == 0, t_max=rc.duration)
        audit = net.audit()
        return SimulationResult(self.cfg, self.topo, net, self.flows, self.senders, self.params,
                                self.sim.now, self.queue_samples, self.cwnd_samples, audit)


def simulate(cfg: ScenarioConfig, flows: list[Flow] | None = None) -> SimulationResult:
    return Simulation(cfg, flows).run()
