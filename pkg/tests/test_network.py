"""End-to-end runs through the packet network."""

import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unosim import transport
from unosim.config import from_dict
from unosim.engine import RngStream, Simulator
from unosim.metrics import (deliveries_of, fct_stats, records_from_result, sliding_jain, time_average,
                            write_outputs)
from unosim.network import Network, simulate
from unosim.reliability import SprayLB
from unosim.switchport import serialization_ns
from unosim.topology import build_two_dc_fattree
from unosim.transport import Flow, UnoCC, relative_delay

MiB = 1 << 20
MTU = 4096
DESK = {"k": 4, "border_links": 2, "link_bw": "10Gbps"}


def cfg(topology=None, **sections):
    data = {"topology": {**DESK, **(topology or {})}}
    data.update(sections)
    data.setdefault("run", {}).setdefault("duration", "200ms")
    return from_dict(data)


# ---------------------------------------------------------------- link failure semantics

class _Receiver:
    def __init__(self):
        self.got = []

    def on_packet(self, pkt):
        self.got.append(pkt)


class _Pkt:
    def __init__(self, sender, size=MTU, flow_id=1):
        self.sender = sender
        self.size = size
        self.flow_id = flow_id
        self.ce = False


class _Sender:
    def __init__(self):
        self.receiver = _Receiver()


def _bench(links=2, k=4):
    sim = Simulator()
    topo = build_two_dc_fattree(k=k, border_links=links)
    return sim, topo, Network(sim, topo)


def test_ten_packets_over_failed_link_are_ten_drops():
    sim, topo, net = _bench()
    path = topo.path_at("h0_0_0_0", "h1_0_0_0", 0)
    lid = next(p.link_id for p in path if p.is_border)
    topo.fail_link(sim, lid, 0)
    snd = _Sender()
    for i in range(10):
        sim.schedule(1_000 * (i + 1), net.inject, _Pkt(snd), path)
    sim.run()
    assert net.drops["link-down"] == 10
    assert snd.receiver.got == []
    assert net.audit()["ok"]


def test_packets_after_restore_are_delivered():
    sim, topo, net = _bench()
    path = topo.path_at("h0_0_0_0", "h1_0_0_0", 0)
    lid = next(p.link_id for p in path if p.is_border)
    topo.fail_link(sim, lid, 0, restore_at=50_000)
    snd = _Sender()
    for i in range(10):
        sim.schedule(100_000 + 1_000 * i, net.inject, _Pkt(snd), path)
    sim.run()
    assert net.drops["link-down"] == 0
    assert len(snd.receiver.got) == 10


def test_packet_on_the_wire_at_failure_is_dropped():
    sim, topo, net = _bench()
    path = topo.path_at("h0_0_0_0", "h1_0_0_0", 0)
    border = next(i for i, p in enumerate(path) if p.is_border)
    snd = _Sender()
    sim.schedule(0, net.inject, _Pkt(snd), path)
    # fail the border link while the packet is crossing it
    t_enter = sum(p.prop_delay + serialization_ns(MTU, p.line_rate) for p in path[:border])
    topo.fail_link(sim, path[border].link_id, t_enter + 10)
    sim.run()
    assert net.drops["link-down"] == 1 and not snd.receiver.got


def test_spraying_loses_about_one_eighth_to_a_dead_border_link():
    shares = []
    for seed in range(5):
        sim, topo, net = _bench(links=8)
        src, dst = "h0_0_0_0", "h1_1_1_1"
        topo.fail_link(sim, topo.border_link_ids[seed % 8], 0)
        lb = SprayLB(topo, src, dst, 1, 10**6, RngStream("routing", seed), seed)
        snd = _Sender()
        n = 4_000
        for i in range(n):
            pkt = _Pkt(snd)
            sim.schedule(2_000 * i, lambda p=pkt: net.inject(p, lb.on_send(p)))
        sim.run()
        shares.append(net.drops["link-down"] / n)
        assert net.audit()["ok"]
    mean = sum(shares) / len(shares)
    assert mean == pytest.approx(1 / 8, abs=0.01)


# ---------------------------------------------------------------- conservation and reliability

scenarios = st.fixed_dictionaries({
    "cc": st.sampled_from(["uno", "gemini", "dctcp"]),
    "lb": st.sampled_from(["unolb", "ecmp", "spray", "plb"]),
    "ec": st.booleans(),
    "n_intra": st.integers(0, 3),
    "n_inter": st.integers(1, 3),
    "size": st.integers(1, 2 * MiB),
    "loss": st.sampled_from(["none", "setup1", "setup2"]),
    "fail": st.booleans(),
    "duration": st.sampled_from(["300us", "3ms", "100ms"]),
    "seed": st.integers(1, 1000),
})


@settings(max_examples=25, deadline=None)
@given(scenarios)
def test_byte_conservation_audit_is_exact(s):
    c = cfg(transport={"cc": s["cc"]},
            reliability={"lb": s["lb"], "ec": s["ec"]},
            workload={"pattern": "incast", "n_intra": s["n_intra"], "n_inter": s["n_inter"],
                      "flow_size": s["size"]},
            failure={"loss_setup": s["loss"],
                     "link_failures": [{"link": "border:0", "at": "100us"}] if s["fail"] else []},
            run={"duration": s["duration"], "seed": s["seed"]})
    res = simulate(c)
    a = res.audit
    assert a["ok"]
    assert a["sent"] == a["delivered"] + a["dropped"] + a["in_flight"]
    assert a["in_flight"] >= 0
    for snd in res.senders:
        assert snd.receiver.delivered <= snd.flow.size
        if snd.done:
            assert snd.receiver.delivered == snd.flow.size


def test_lossless_coded_flow_has_no_retransmits_or_expiries():
    size = 40 * 8 * MTU
    res = simulate(cfg(reliability={"lb": "unolb", "ec": True},
                       workload={"pattern": "pairs", "pairs": 2, "flow_size": size}))
    assert res.net.drops == {"overflow": 0, "link-down": 0, "loss": 0}
    for s in res.senders:
        assert s.done
        assert s.retransmitted_blocks == 0 and s.retransmitted_packets == 0
        assert s.receiver.nacks == 0
        # goodput excludes parity: wire bytes / delivered bytes for full blocks
        assert s.bytes_on_wire / s.receiver.delivered == pytest.approx(1.25)


def test_unloaded_run_relative_delays_stay_below_epsilon(monkeypatch):
    seen = []

    class Recording(UnoCC):
        def on_ack(self, f, ack, now):
            seen.append((relative_delay(ack.rtt_sample, f.base_rtt), f.delay_epsilon))
            return super().on_ack(f, ack, now)

    monkeypatch.setitem(transport.CC_CLASSES, "uno", Recording)
    import unosim.network as network
    monkeypatch.setitem(network.CC_CLASSES, "uno", Recording)
    topo = build_two_dc_fattree(k=4, border_links=2)
    flows = [Flow(0, "h0_0_0_0", "h0_1_1_1", 4 * MTU), Flow(1, "h0_2_0_0", "h1_3_1_1", 4 * MTU, start=10**6)]
    res = simulate(cfg(topology={"link_bw": "100Gbps"}, reliability={"lb": "ecmp", "ec": False}), flows)
    assert all(s.done for s in res.senders)
    assert len(seen) == 8
    assert all(d <= eps for d, eps in seen)
    assert topo.is_inter("h0_2_0_0", "h1_3_1_1")


def test_exactly_once_delivery_under_heavy_loss():
    for seed in (1, 2, 3):
        for ec in (True, False):
            res = simulate(cfg(reliability={"lb": "unolb", "ec": ec},
                               workload={"pattern": "pairs", "pairs": 2, "flow_size": 2 * MiB},
                               failure={"loss_setup": "setup2", "loss_on": "all"},
                               transport={"ack_loss_rate": 0.01},
                               run={"seed": seed, "duration": "2s"}))
            for s in res.senders:
                assert s.done
                delivered = sum(b for _, b in s.receiver.deliveries)
                assert delivered == s.flow.size == s.receiver.delivered
            assert res.audit["ok"]


def test_persistent_border_failure_is_routed_around():
    res = simulate(cfg(topology={"border_links": 4},
                       reliability={"lb": "unolb", "ec": True},
                       workload={"pattern": "pairs", "pairs": 2, "flow_size": 8 * MiB},
                       failure={"link_failures": [{"link": "border:0", "at": 0}]},
                       # after quick adapt collapses cwnd, regrowth at 0.001 BDP per RTT is slow
                       run={"duration": "2s"}))
    assert all(s.done for s in res.senders)
    hits = res.net.failed_hits
    assert hits
    for s in res.senders:
        if not s.lb.reroutes:
            continue
        # two reroute intervals after the last reroute, nothing of this flow meets the dead link
        cutoff = s.lb.reroutes[-1] + 2 * s.state.base_rtt
        assert not [h for h in hits if h[1] == s.flow.flow_id and h[0] > cutoff]


# ---------------------------------------------------------------- congestion behaviour

def test_single_flow_keeps_physical_queue_near_empty():
    src, dst = "h0_1_0_0", "h0_0_0_0"
    res = simulate(cfg(reliability={"lb": "ecmp", "ec": False},
                       workload={"pattern": "incast", "n_intra": 1, "n_inter": 0, "flow_size": 32 * MiB,
                                 "dst": dst},
                       run={"queue_sample": "2us", "queue_ports": ["e0_0_0->h0_0_0_0", "h0_1_0_0->e0_1_0"]}))
    assert res.senders[0].flow.src == src
    cap = res.config.topology.intra_buffer
    by = {}
    for t, pid, phys, _ in res.queue_samples:
        if t > 2_000_000:
            by.setdefault(pid, []).append((t, phys))
    assert set(by) == {"e0_0_0->h0_0_0_0", "h0_1_0_0->e0_1_0"}
    for samples in by.values():
        assert time_average(samples) < 0.05 * cap


def test_two_identical_flows_share_fairly():
    res = simulate(cfg(reliability={"lb": "ecmp", "ec": False},
                       workload={"pattern": "incast", "n_intra": 2, "n_inter": 0, "flow_size": 32 * MiB,
                                 "dst": "h0_0_0_0"}))
    first_end = min(s.end for s in res.senders)
    series = sliding_jain(deliveries_of(res), 500_000, 100_000, 1_000_000, first_end)
    assert len(series) > 50
    assert min(v for _, v in series) >= 0.95


def test_metrics_recompute_from_persisted_flows(tmp_path):
    res = simulate(cfg(reliability={"lb": "spray", "ec": False},
                       workload={"pattern": "incast", "n_intra": 3, "n_inter": 2, "flow_size": MiB}))
    write_outputs(res, tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "flows.csv")))
    fcts = sorted(int(r["fct_ns"]) for r in rows if r["fct_ns"])
    stats = fct_stats(records_from_result(res))
    summary = dict(line.split(" = ", 1) for line in (tmp_path / "summary.txt").read_text().splitlines())
    assert sum(fcts) / len(fcts) == stats.mean
    assert float(summary["fct.all.mean_ns"]) == pytest.approx(stats.mean, rel=1e-9)
    assert int(summary["fct.all.p99_ns"]) == stats.p99 == fcts[-1]
    for r in rows:
        assert float(r["slowdown"]) >= 1.0
        assert int(r["bytes_on_wire"]) >= int(r["size_bytes"])
