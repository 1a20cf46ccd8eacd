"""Flow records, FCT statistics, fairness, goodput series and output writers."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass
class FlowRecord:
    flow_id: int
    cls: str
    src: str
    dst: str
    size_bytes: int
    start: int
    end: int | None
    retransmitted_blocks: int
    bytes_on_wire: int
    ideal: int = 0

    @property
    def fct(self) -> int | None:
        return None if self.end is None else self.end - self.start

    @property
    def complete(self) -> bool:
        return self.end is not None


@dataclass(frozen=True)
class FctStats:
    count: int
    mean: float
    p99: float


def percentile_nearest_rank(sorted_values: list[float], q: float) -> float:
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


def fct_stats(records, class_filter: str | None = None) -> FctStats | None:
    """Mean and nearest-rank p99 of completed flows; ``None`` when nothing matches."""
    fcts = sorted(r.fct for r in records
                  if r.complete and (class_filter is None or r.cls == class_filter))
    if not fcts:
        return None
    return FctStats(len(fcts), sum(fcts) / len(fcts), percentile_nearest_rank(fcts, 0.99))


def ideal_fct(size: int, rtt: int, bottleneck_bw: int) -> int:
    """Unloaded completion time: one propagation RTT plus the size at bottleneck rate."""
    return rtt + size * 8 * 1_000_000_000 / bottleneck_bw


def slowdown(fct: int, ideal: float) -> float:
    s = fct / ideal
    assert s >= 1.0 - 1e-9, f"slowdown {s} < 1: FCT below the physical bound"
    return s


def jain_index(values) -> float | None:
    values = list(values)
    if not values:
        return None
    if any(v < 0 for v in values):
        raise ValueError("Jain index needs nonnegative values")
    top = max(values)
    if top == 0:
        return None
    # scale-invariant; normalizing keeps tiny or huge rates from under/overflowing
    values = [v / top for v in values]
    return sum(values) ** 2 / (len(values) * sum(v * v for v in values))


def latency_bound_fraction(size: int, rtt: int, bw: float) -> float:
    """Share of completion time spent on propagation: rtt / (rtt + transmission)."""
    if size <= 0 or rtt <= 0 or bw <= 0:
        raise ValueError("size, rtt and bw must be positive")
    tx = 8 * size * 1_000_000_000 / bw
    return rtt / (rtt + tx)


def goodput_series(deliveries: dict[int, list[tuple[int, int]]], window: int,
                   t_end: int | None = None) -> dict[int, list[float]]:
    """Per-flow delivered-bytes rate (bits/s) in consecutive windows starting at t=0."""
    if window <= 0:
        raise ValueError("window must be positive")
    if t_end is None:
        t_end = max((t for d in deliveries.values() for t, _ in d), default=0)
    nbuckets = max(1, -(-t_end // window))
    out = {}
    for fid, d in deliveries.items():
        buckets = [0] * nbuckets
        for t, b in d:
            i = min(t // window, nbuckets - 1)
            buckets[i] += b
        out[fid] = [b * 8e9 / window for b in buckets]
    return out


def sliding_jain(deliveries: dict[int, list[tuple[int, int]]], window: int, step: int,
                 t_start: int, t_stop: int) -> list[tuple[int, float | None]]:
    """Jain index over each flow's delivered bytes in ``(t - window, t]`` for t stepping by ``step``."""
    import bisect
    series = {fid: ([t for t, _ in d], _cumsum([b for _, b in d])) for fid, d in deliveries.items()}
    out = []
    t = t_start
    while t <= t_stop:
        vals = []
        for times, cum in series.values():
            hi = bisect.bisect_right(times, t)
            lo = bisect.bisect_right(times, t - window)
            vals.append((cum[hi] - cum[lo]))
        out.append((t, jain_index(vals)))
        t += step
    return out


def _cumsum(xs):
    out = [0]
    for x in xs:
        out.append(out[-1] + x)
    return out


def first_time_at_least(series: list[tuple[int, float | None]], threshold: float) -> int | None:
    for t, v in series:
        if v is not None and v >= threshold:
            return t
    return None


def time_average(samples: list[tuple[int, float]]) -> float:
    """Time-weighted mean of a piecewise-constant sampled signal."""
    if not samples:
        return 0.0
    if len(samples) == 1:
        return float(samples[0][1])
    total = 0.0
    for (t0, v0), (t1, _) in zip(samples, samples[1:]):
        total += v0 * (t1 - t0)
    span = samples[-1][0] - samples[0][0]
    return total / span if span else float(samples[0][1])


# ---------------------------------------------------------------- collection

def records_from_result(res) -> list[FlowRecord]:
    out = []
    for s, fp in zip(res.senders, res.params):
        f = s.flow
        ideal = ideal_fct(f.size, fp.prop_rtt, fp.bottleneck_bw)
        out.append(FlowRecord(f.flow_id, f.cls, f.src, f.dst, f.size, f.start, s.end,
                              s.retransmitted_blocks, s.bytes_on_wire, ideal))
    return out


def deliveries_of(res) -> dict[int, list[tuple[int, int]]]:
    return {s.flow.flow_id: s.receiver.deliveries for s in res.senders}


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _fmt(v) -> str:
    if v is None:
        return "no data"
    if isinstance(v, float):
        return repr(round(v, 6))
    if isinstance(v, (list, dict)):
        return json.dumps(v, sort_keys=True, default=_jsonable)
    return str(v)


def summary_items(res, records: list[FlowRecord]) -> list[tuple[str, object]]:
    cfg = res.config
    net = res.net
    items: list[tuple[str, object]] = [
        ("scenario", cfg.name),
        ("seed", cfg.run.seed),
        ("end_time_ns", res.end_time),
        ("flows_total", len(records)),
        ("flows_completed", sum(r.complete for r in records)),
    ]
    for cls in ("all", "intra", "inter"):
        st = fct_stats(records, None if cls == "all" else cls)
        items.append((f"fct.{cls}.count", st.count if st else 0))
        items.append((f"fct.{cls}.mean_ns", st.mean if st else None))
        items.append((f"fct.{cls}.p99_ns", st.p99 if st else None))
    window = cfg.run.jain_window or 10 * cfg.topology.inter_rtt
    dl = deliveries_of(res)
    if 2 <= len(dl) <= 64 and res.end_time > 0:
        last_start = max(r.start for r in records)
        series = sliding_jain(dl, window, max(1, window // 10), last_start, res.end_time)
        t90 = first_time_at_least(series, 0.9)
        items.append(("jain.window_ns", window))
        items.append(("jain.first_0.9_ns", t90))
        items.append(("jain.first_0.99_ns", first_time_at_least(series, 0.99)))
    items += [
        ("drops.overflow", net.drops["overflow"]),
        ("drops.link_down", net.drops["link-down"]),
        ("drops.loss", net.drops["loss"]),
        ("acks_lost", net.acks_lost),
        ("packets_declared_lost", net.lost_declared),
        ("retransmitted_blocks", sum(s.retransmitted_blocks for s in res.senders)),
        ("retransmitted_packets", sum(s.retransmitted_packets for s in res.senders)),
        ("audit.sent", res.audit["sent"]),
        ("audit.delivered", res.audit["delivered"]),
        ("audit.dropped", res.audit["dropped"]),
        ("audit.in_flight", res.audit["in_flight"]),
        ("audit.ok", res.audit["ok"]),
    ]
    items += [(f"config.{k}", v) for k, v in cfg.flat_items()]
    return items


def write_outputs(res, outdir: str | Path) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    records = records_from_result(res)
    paths = {name: outdir / name for name in ("flows.csv", "queues.csv", "rates.csv", "summary.txt", "config.json")}
    with open(paths["flows.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flow_id", "class", "src", "dst", "size_bytes", "start_ns", "end_ns", "fct_ns",
                    "slowdown", "bytes_on_wire"])
        for r in records:
            sd = "" if not r.complete else f"{slowdown(r.fct, r.ideal):.6f}"
            w.writerow([r.flow_id, r.cls, r.src, r.dst, r.size_bytes, r.start,
                        "" if r.end is None else r.end, "" if r.fct is None else r.fct, sd, r.bytes_on_wire])
    with open(paths["queues.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "port_id", "physical_bytes", "phantom_bytes"])
        for t, pid, phys, ph in res.queue_samples:
            w.writerow([t, pid, phys, f"{ph:.1f}"])
    with open(paths["rates.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "flow_id", "goodput_bps"])
        if res.config.run.rate_trace:
            window = res.config.run.rate_window
            series = goodput_series(deliveries_of(res), window, res.end_time)
            for fid in sorted(series):
                for i, v in enumerate(series[fid]):
                    w.writerow([i * window, fid, f"{v:.1f}"])
    if res.cwnd_samples:
        paths["cwnd.csv"] = outdir / "cwnd.csv"
        rtt = {s.flow.flow_id: s.state.base_rtt for s in res.senders}
        with open(paths["cwnd.csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ns", "flow_id", "cwnd_bytes", "rate_bps_estimate"])
            for t, fid, cwnd in res.cwnd_samples:
                w.writerow([t, fid, f"{cwnd:.1f}", f"{cwnd * 8e9 / rtt[fid]:.1f}"])
    if res.net.events is not None:
        paths["events.csv"] = outdir / "events.csv"
        with open(paths["events.csv"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ns", "flow_id", "block_id", "event_kind"])
            w.writerows(res.net.events)
    with open(paths["summary.txt"], "w") as fh:
        for k, v in summary_items(res, records):
            fh.write(f"{k} = {_fmt(v)}\n")
    with open(paths["config.json"], "w") as fh:
        json.dump(res.config.to_dict(), fh, indent=2, sort_keys=True)
    return paths
