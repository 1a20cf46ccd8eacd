"""Desk-scale experiments behind the acceptance checks and the scripts/ runners.

Each ``check_*`` function runs its scenarios and returns a :class:`Check`
holding the measured quantities and whether the stated threshold was met.
"""

from __future__ import annotations

import math
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .config import ScenarioConfig, from_dict
from .engine import RngStream
from .metrics import (fct_stats, first_time_at_least, jain_index, latency_bound_fraction,
                      records_from_result, sliding_jain, deliveries_of, time_average, write_outputs)
from .network import simulate
from .reliability import BlockState, BlockStatus, on_block_packet
from .scenarios import builtin, scenario_names
from .switchport import red_mark_probability
from .topology import BlockLossModel, sample_block_losses
from .transport import AckInfo, FlowState, UnoCC

MiB = 1 << 20


@dataclass
class Check:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)
    note: str = ""

    def line(self) -> str:
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.values.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {vals}" + (f" ({self.note})" if self.note else "")


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return v


def _cfg(**sections) -> ScenarioConfig:
    return from_dict(sections)


# ---------------------------------------------------------------- 1. formulas

def check_formulas() -> Check:
    bdp = 100e9 * 14e-6 / 8
    f = FlowState(0, "intra", cwnd=bdp, base_rtt=14_000, alpha=0.001 * bdp, beta=0.5,
                  K=bdp / 7, bdp=bdp, epoch_period=14_000)
    cc = UnoCC()
    cc.on_ack(f, AckInfo(4096, False, 0, 14_000), 0)
    ai_ok = math.isclose(f.cwnd, bdp + 0.001 * bdp * 4096 / bdp, rel_tol=1e-12)
    f.ewma_ecn = 1.0
    md = cc.md_factor(f)
    md_ok = math.isclose(md, 0.5, rel_tol=1e-12)
    f2 = FlowState(1, "intra", cwnd=1 << 20, base_rtt=14_000, alpha=1.0, beta=0.5, K=1, bdp=1,
                   epoch_period=14_000)
    f2.qa_cwnd_ref = 1 << 20
    f2.bytes_acked_in_qa = 100 << 10
    cc.on_qa_tick(f2, 1_000)
    qa_ok = f2.cwnd == 100 << 10
    red_ok = red_mark_probability(24.999, 25, 75) == 0.0 and red_mark_probability(75, 25, 75) == 1.0
    jain_ok = jain_index([3, 3, 3]) == 1.0 and jain_index([1] + [0] * 7) == 0.125 and jain_index([0, 0]) is None
    lbf_ok = latency_bound_fraction(bdp, 14_000, 100e9) == 0.5
    ok = ai_ok and md_ok and qa_ok and red_ok and jain_ok and lbf_ok
    return Check("1 formula unit suite", ok, {"ai": ai_ok, "md_ecn": md, "qa": qa_ok, "red": red_ok,
                                              "jain": jain_ok, "latency_bound": lbf_ok})


# ---------------------------------------------------------------- 2. fairness

def mixed_incast_config(cc: str, flow_size: int = 64 * MiB, seed: int = 1) -> ScenarioConfig:
    return _cfg(
        name=f"mixed-incast-2-2-{cc}",
        topology={"k": 4, "border_links": 8, "link_bw": "10Gbps"},
        transport={"cc": cc},
        reliability={"lb": "spray", "ec": False},
        workload={"pattern": "incast", "n_intra": 2, "n_inter": 2, "flow_size": flow_size},
        run={"duration": "2s", "seed": seed, "queue_trace": False, "rate_trace": False},
    )


def jain_convergence(res) -> dict:
    """Sliding-window (10 inter-DC RTTs) Jain index from the last flow start to the first completion."""
    cfg = res.config
    rtt = cfg.topology.inter_rtt
    window = cfg.run.jain_window or 10 * rtt
    records = records_from_result(res)
    last_start = max(r.start for r in records)
    first_end = min(r.end for r in records if r.complete) if any(r.complete for r in records) else res.end_time
    # the window needs a full span of data before it measures steady shares
    series = sliding_jain(deliveries_of(res), window, rtt // 4, last_start + window, first_end)
    t90 = first_time_at_least(series, 0.9)
    held = t90 is not None and all(v is not None and v >= 0.9 for t, v in series if t >= t90)
    rtts = None if t90 is None else (t90 - last_start) / rtt
    return {"t90_rtts": rtts, "held": held, "series": series, "first_end": first_end}


def check_fairness(flow_size: int = 64 * MiB) -> Check:
    uno = jain_convergence(simulate(mixed_incast_config("uno", flow_size)))
    gem = jain_convergence(simulate(mixed_incast_config("gemini", flow_size)))
    u, g = uno["t90_rtts"], gem["t90_rtts"]
    uno_ok = u is not None and u <= 30 and uno["held"]
    slower = g is None or (u is not None and g >= 2 * u)
    return Check("2 mixed-incast fairness", uno_ok and slower,
                 {"uno_rtts_to_0.9": u, "uno_held": uno["held"], "gemini_rtts_to_0.9": g if g is not None else "never"})


# ---------------------------------------------------------------- 3. phantom queues

def phantom_config(phantom: bool, seed: int = 1) -> ScenarioConfig:
    return _cfg(
        name=f"phantom-{'on' if phantom else 'off'}",
        topology={"k": 4, "border_links": 8, "link_bw": "10Gbps", "phantom": phantom},
        # long-lived flows already at their fair share rather than a synchronized start
        transport={"init_cwnd_bdp": 1 / 8},
        reliability={"lb": "spray", "ec": False},
        workload={"pattern": "incast", "n_intra": 0, "n_inter": 8, "flow_size": 48 * MiB,
                  "dst": "h1_0_0_0", "rpc_count": 300, "rpc_cdf": "google_rpc",
                  "rpc_start": "15ms", "rpc_interval": "100us"},
        run={"duration": "400ms", "seed": seed, "queue_sample": "5us", "queue_ports": ["e1_0_0->h1_0_0_0"],
             "rate_trace": False},
    )


def bottleneck_occupancy(res, port_id: str, t0: int, t1: int) -> float:
    samples = [(t, phys) for t, pid, phys, _ in res.queue_samples if pid == port_id and t0 <= t <= t1]
    return time_average(samples)


def check_phantom() -> Check:
    out = {}
    for ph in (True, False):
        res = simulate(phantom_config(ph))
        recs = records_from_result(res)
        rpc = [r for r, f in zip(recs, res.flows) if f.tag == "rpc"]
        long_end = min(r.end for r, f in zip(recs, res.flows) if f.tag != "rpc" and r.complete)
        rpc_end = max(r.end for r in rpc if r.complete)
        occ = bottleneck_occupancy(res, "e1_0_0->h1_0_0_0", 15_000_000, min(long_end, rpc_end))
        out[ph] = (occ, fct_stats(rpc), sum(r.complete for r in rpc), len(rpc))
    occ_ratio = out[True][0] / out[False][0] if out[False][0] else float("inf")
    p99_gain = out[False][1].p99 / out[True][1].p99
    mean_gain = out[False][1].mean / out[True][1].mean
    ok = occ_ratio <= 0.10 and p99_gain >= 1.5 and mean_gain >= 1.3
    return Check("3 phantom near-zero queuing", ok,
                 {"occ_on_B": out[True][0], "occ_off_B": out[False][0], "occ_ratio": occ_ratio,
                  "rpc_p99_gain": p99_gain, "rpc_mean_gain": mean_gain,
                  "rpc_done": f"{out[True][2]}/{out[True][3]},{out[False][2]}/{out[False][3]}"})


# ---------------------------------------------------------------- 4. quick adapt

def qa_config(seed: int = 1) -> ScenarioConfig:
    return _cfg(
        name="qa-incast-8",
        # k=8: four 100 Gb/s downlinks feed the receiver's edge, so the burst lands at once
        topology={"k": 8, "border_links": 8, "link_bw": "100Gbps"},
        reliability={"lb": "spray", "ec": False},
        workload={"pattern": "incast", "n_intra": 8, "n_inter": 0, "flow_size": 4 * MiB, "dst": "h0_0_0_0"},
        run={"duration": "50ms", "seed": seed, "cwnd_trace": True, "queue_trace": False, "rate_trace": False},
    )


def analyze_qa(res) -> dict:
    bottleneck = res.topo.path_at(res.flows[0].src, res.flows[0].dst, 0)[-1].port_id
    drops = [t for t, pid, _ in res.net.overflow_log if pid == bottleneck]
    per_flow_ok = []
    cooldown_violations = 0
    first_qual = None
    base = max(s.state.base_rtt for s in res.senders)
    for s in res.senders:
        f = s.state
        tr = f.trace
        windows = [e for e in tr if e[2] == "qa-window"]
        qual = next((e for e in windows if not e[5] and e[4] < f.beta * e[3]), None)
        if qual is None:
            per_flow_ok.append(False)
            continue
        first_qual = qual[0] if first_qual is None else min(first_qual, qual[0])
        fires = [e for e in tr if e[2] == "qa" and qual[0] <= e[0] <= qual[0] + 2 * f.base_rtt]
        per_flow_ok.append(bool(fires) and all(e[4] <= e[5] or e[4] == f.mtu for e in fires[:1]))
        # independent cooldown scan: nothing fires strictly inside (qa_t, qa_t + base_rtt)
        for qa in (e for e in tr if e[2] == "qa"):
            for e in tr:
                if e[2] in ("md", "qa") and qa[0] < e[0] < qa[0] + f.base_rtt:
                    cooldown_violations += 1
    last_drop = max(drops) if drops else None
    drops_cease = first_qual is not None and (last_drop is None or last_drop <= first_qual + 5 * base)
    return {"qa_postcondition": all(per_flow_ok), "drops": len(drops),
            "last_drop_rtts_after_qa": None if (last_drop is None or first_qual is None) else (last_drop - first_qual) / base,
            "drops_cease": drops_cease, "cooldown_violations": cooldown_violations}


def check_quick_adapt() -> Check:
    a = analyze_qa(simulate(qa_config()))
    ok = a["qa_postcondition"] and a["drops_cease"] and a["cooldown_violations"] == 0
    return Check("4 quick adapt", ok, a)


# ---------------------------------------------------------------- 5. EC decodability

def mc_undecodable_fraction(model: BlockLossModel, x: int, y: int, blocks: int, seed: int) -> float:
    """Vectorized Monte Carlo over ``blocks`` code blocks of ``x + y`` packets."""
    import numpy as np
    rng = np.random.default_rng(seed)
    p = list(model.p_exact)
    u = rng.random(blocks)
    edges = np.cumsum(p)
    lost = np.searchsorted(edges, u, side="right")  # 0,1,2 -> 1,2,3 losses; 3 -> none
    lost = np.where(lost < 3, lost + 1, 0)
    received = (x + y) - lost
    return float(np.count_nonzero(received < x)) / blocks


def exhaustive_mds_check(x: int = 8, y: int = 2) -> bool:
    n = x + y
    for mask in range(1 << n):
        st = BlockState(0, x, n)
        decoded = False
        for pos in range(n):
            if mask >> pos & 1 and on_block_packet(st, pos) is BlockStatus.DECODED:
                decoded = True
        if decoded != (bin(mask).count("1") >= x):
            return False
    return True


def sampler_undecodable_fraction(model: BlockLossModel, x: int, y: int, blocks: int, seed: int) -> float:
    """Same quantity through the simulator's own sampler and receiver predicate."""
    rng = RngStream("ac5", seed)
    bad = 0
    n = x + y
    for _ in range(blocks):
        lost = sample_block_losses(model, rng)
        st = BlockState(0, x, n)
        status = None
        for pos in range(n):
            if pos not in lost:
                status = on_block_packet(st, pos) or status
        if st.status is not BlockStatus.DECODED:
            bad += 1
    return bad / blocks


def check_ec_decodability(blocks: int = 10_000_000) -> Check:
    model = BlockLossModel.table1("setup2")
    p3 = model.p_exact[2]
    freq = mc_undecodable_fraction(model, 8, 2, blocks, seed=1)
    sigma = math.sqrt(p3 * (1 - p3) / blocks)
    within = abs(freq - p3) <= 3 * sigma
    n_small = 200_000
    small = sampler_undecodable_fraction(model, 8, 2, n_small, seed=2)
    sigma_small = math.sqrt(p3 * (1 - p3) / n_small)
    small_ok = abs(small - p3) <= 4 * sigma_small
    mds = exhaustive_mds_check()
    return Check("5 EC decodability", within and mds and small_ok,
                 {"p_ge3": p3, "mc_freq": freq, "z": (freq - p3) / sigma, "sampler_freq": small,
                  "mds_1024": mds})


# ---------------------------------------------------------------- 6. border failure

def failure_config(lb: str, ec: bool, seed: int, flow_size: int = 5 * MiB, fail_at: int = 0,
                   pairs: int = 8) -> ScenarioConfig:
    # eight 100 Gb/s senders can fill the eight 100 Gb/s border links
    return _cfg(
        name=f"border-failure-{lb}-{'ec' if ec else 'noec'}",
        topology={"k": 8, "border_links": 8, "link_bw": "100Gbps"},
        reliability={"lb": lb, "ec": ec},
        workload={"pattern": "pairs", "pairs": pairs, "flow_size": flow_size},
        failure={"link_failures": [{"link": "border:0", "at": fail_at}]},
        run={"duration": "2s", "seed": seed, "queue_trace": False, "rate_trace": False},
    )


def failure_fcts(lb: str, ec: bool, seeds) -> list[int]:
    fcts = []
    for seed in seeds:
        res = simulate(failure_config(lb, ec, seed))
        fcts += [r.fct if r.complete else res.config.run.duration for r in records_from_result(res)]
    return fcts


def post_reroute_hits(seed: int = 1) -> dict:
    fail_at = 3_000_000
    res = simulate(failure_config("unolb", True, seed, flow_size=160 * MiB, fail_at=fail_at))
    interval = max(s.block_rto for s in res.senders)
    cutoff = fail_at + 2 * interval
    failed = res.topo.border_link_ids[0]
    late = [h for h in res.net.failed_hits if h[2] == failed and h[0] > cutoff]
    last_end = max(s.end or res.end_time for s in res.senders)
    return {"late_hits": len(late), "hits": len(res.net.failed_hits), "cutoff_ns": cutoff,
            "active_after_cutoff": last_end > cutoff}


def check_border_failure(seeds=range(1, 21)) -> Check:
    uno = statistics.median(failure_fcts("unolb", True, seeds))
    spray = statistics.median(failure_fcts("spray", False, seeds))
    plb = statistics.median(failure_fcts("plb", False, seeds))
    pr = post_reroute_hits()
    ok = uno <= 0.67 * spray and uno <= 0.67 * plb and pr["late_hits"] == 0 and pr["active_after_cutoff"]
    return Check("6 border-link failure", ok,
                 {"median_unolb_ec_ms": uno / 1e6, "median_spray_noec_ms": spray / 1e6,
                  "median_plb_noec_ms": plb / 1e6, "ratio_spray": uno / spray, "ratio_plb": uno / plb,
                  "late_hits": pr["late_hits"]})


# ---------------------------------------------------------------- 7. realistic load

def realistic_config(cc: str, lb: str, ec: bool, seed: int = 1) -> ScenarioConfig:
    return _cfg(
        name=f"realistic-40-{cc}-{lb}",
        topology={"k": 4, "border_links": 8, "link_bw": "100Gbps"},
        transport={"cc": cc},
        reliability={"lb": lb, "ec": ec},
        workload={"pattern": "mixed-cdf", "load": 0.4, "duration": "10ms"},
        run={"duration": "2s", "seed": seed, "queue_trace": False, "rate_trace": False},
    )


def check_realistic_load(seeds=(1, 2, 3)) -> Check:
    variants = {"uno+unolb": ("uno", "unolb", True), "uno+ecmp": ("uno", "ecmp", False),
                "dctcp+ecmp": ("dctcp", "ecmp", False), "gemini+ecmp": ("gemini", "ecmp", False)}
    recs = {k: [] for k in variants}
    for name, (cc, lb, ec) in variants.items():
        for seed in seeds:
            recs[name] += records_from_result(simulate(realistic_config(cc, lb, ec, seed)))
    p99 = {k: {c: fct_stats(v, None if c == "all" else c).p99 for c in ("all", "intra", "inter")}
           for k, v in recs.items()}
    ordering = p99["uno+unolb"]["all"] < p99["dctcp+ecmp"]["all"] and p99["uno+unolb"]["all"] < p99["gemini+ecmp"]["all"]
    inter_gain = p99["uno+ecmp"]["inter"] < p99["gemini+ecmp"]["inter"]
    intra_deg = p99["uno+ecmp"]["intra"] / p99["gemini+ecmp"]["intra"]
    ok = ordering and inter_gain and intra_deg <= 1.25
    vals = {f"{k}.{c}_ms": v[c] / 1e6 for k, v in p99.items() for c in ("all", "intra", "inter")}
    vals["intra_degradation"] = intra_deg
    return Check("7 realistic-load ordering", ok, vals)


# ---------------------------------------------------------------- 8. determinism

def check_determinism(names=None) -> Check:
    names = names or scenario_names()
    mismatched, failed_audit = [], []
    with tempfile.TemporaryDirectory() as tmp:
        for name in names:
            blobs = []
            for rep in range(2):
                res = simulate(builtin(name, desk=True))
                paths = write_outputs(res, Path(tmp) / f"{name}-{rep}")
                blobs.append(paths["flows.csv"].read_bytes())
                if not res.audit["ok"]:
                    failed_audit.append(name)
            if blobs[0] != blobs[1]:
                mismatched.append(name)
    return Check("8 determinism and conservation", not mismatched and not failed_audit,
                 {"scenarios": len(names), "mismatched": mismatched or "none",
                  "audit_failures": sorted(set(failed_audit)) or "none"})


# ---------------------------------------------------------------- 9. EC overhead

def check_ec_overhead(size: int = 5 * MiB) -> Check:
    cfg = _cfg(name="ec-overhead", topology={"k": 4, "border_links": 2, "link_bw": "10Gbps"},
               workload={"pattern": "pairs", "pairs": 1, "flow_size": size},
               run={"duration": "1s", "queue_trace": False, "rate_trace": False})
    res = simulate(cfg)
    s = res.senders[0]
    x, y, mtu = cfg.reliability.ec_data, cfg.reliability.ec_parity, cfg.transport.mtu
    blocks = -(-size // (x * mtu))
    padding = blocks * x * mtu - size
    ratio = s.bytes_on_wire / size
    expected = (x + y) / x
    lo, hi = expected, expected * (size + padding) / size
    ok = s.done and lo - 1e-12 <= ratio <= hi + 1e-12 and s.retransmitted_blocks == 0
    return Check("9 EC overhead", ok, {"ratio": ratio, "expected": expected, "padding_B": padding,
                                       "retransmitted_blocks": s.retransmitted_blocks})


ALL_CHECKS = (check_formulas, check_fairness, check_phantom, check_quick_adapt, check_ec_decodability,
              check_border_failure, check_realistic_load, check_determinism, check_ec_overhead)
