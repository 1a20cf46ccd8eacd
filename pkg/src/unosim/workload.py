"""Traffic generators: incast, permutation, CDF-driven Poisson mixes, AllReduce bursts."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .config import ConfigError
from .transport import Flow

BUILTIN_CDFS = ("websearch", "alibaba_wan", "google_rpc")


@dataclass(frozen=True)
class SizeCdf:
    sizes: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        if not self.sizes or len(self.sizes) != len(self.probs):
            raise ValueError("CDF needs at least one (size, probability) point")
        if any(b <= a for a, b in zip(self.sizes, self.sizes[1:])):
            raise ValueError("CDF sizes must be strictly increasing")
        if any(b <= a for a, b in zip(self.probs, self.probs[1:])):
            raise ValueError("CDF probabilities must be strictly increasing")
        if self.probs[0] < 0 or self.sizes[0] <= 0:
            raise ValueError("CDF must start at a positive size with probability >= 0")
        if self.probs[-1] != 1.0:
            raise ValueError("CDF must end at probability exactly 1.0")

    @classmethod
    def from_points(cls, points) -> "SizeCdf":
        pts = list(points)
        return cls(tuple(float(s) for s, _ in pts), tuple(float(p) for _, p in pts))

    def cdf(self, size: float) -> float:
        """Inverse of :func:`sample_flow_size`; used by the KS oracle."""
        if size <= 0:
            return 0.0
        if len(self.sizes) == 1:
            return 1.0 if size >= self.sizes[0] else 0.0
        i = bisect.bisect_left(self.sizes, size)
        if i >= len(self.sizes):
            return 1.0
        s1, p1 = self.sizes[i], self.probs[i]
        s0, p0 = (self.sizes[i - 1], self.probs[i - 1]) if i else (0.0, 0.0)
        return p0 + (p1 - p0) * (size - s0) / (s1 - s0)

    def mean(self) -> float:
        if len(self.sizes) == 1:
            return self.sizes[0]
        total, s0, p0 = 0.0, 0.0, 0.0
        for s, p in zip(self.sizes, self.probs):
            total += (p - p0) * (s0 + s) / 2
            s0, p0 = s, p
        return total


def parse_cdf(text: str) -> SizeCdf:
    points = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'size<TAB>probability'")
        points.append((float(parts[0]), float(parts[1])))
    return SizeCdf.from_points(points)


def _builtin_path(name: str):
    return resources.files("unosim").joinpath("data", f"{name}.cdf")


def cdf_exists(name: str) -> bool:
    return name in BUILTIN_CDFS or Path(name).is_file()


def load_cdf(name: str) -> SizeCdf:
    """Load a bundled CDF by name or a CDF file by path."""
    if name in BUILTIN_CDFS:
        return parse_cdf(_builtin_path(name).read_text())
    path = Path(name)
    if not path.is_file():
        raise ConfigError(f"no CDF named or located at {name!r}")
    return parse_cdf(path.read_text())


def sample_flow_size(cdf: SizeCdf, u: float) -> int:
    """Inverse-CDF sample with linear interpolation; a 0-anchor precedes the first point.

    A single-point CDF is a point mass rather than a ramp from the anchor.
    """
    probs, sizes = cdf.probs, cdf.sizes
    if len(sizes) == 1:
        return int(round(sizes[0]))
    i = bisect.bisect_right(probs, u)
    if i >= len(probs):
        return int(round(sizes[-1]))
    p1, s1 = probs[i], sizes[i]
    p0, s0 = (probs[i - 1], sizes[i - 1]) if i else (0.0, 0.0)
    size = s0 + (s1 - s0) * (u - p0) / (p1 - p0)
    return max(1, int(round(size)))


def class_probability(mean_intra: float, mean_inter: float, ratio: tuple[float, float],
                      mode: str = "bytes") -> float:
    """Probability that a generated flow is inter-DC."""
    w_i, w_e = ratio
    if mode == "flows":
        return w_e / (w_i + w_e)
    return mean_intra * w_e / (mean_inter * w_i + mean_intra * w_e)


def arrival_rate(load: float, hosts: int, per_host_bw: float, mean_size: float) -> float:
    """Aggregate flow arrival rate (flows/s) that offers ``load`` of the access capacity."""
    return load * hosts * per_host_bw / (8 * mean_size)


def poisson_arrival_times(load: float, per_host_bw: float, hosts_by_dc: list[list[str]],
                          duration: int, rng, intra_cdf: SizeCdf, inter_cdf: SizeCdf,
                          ratio=(4, 1), mode: str = "bytes", size_scale: float = 1.0,
                          max_flows: int | None = None) -> list[tuple[int, str, str, int, str]]:
    """Open-loop Poisson flow arrivals over ``duration`` ns.

    Returns ``(time_ns, src, dst, size, class)`` tuples sorted by time.
    """
    if not 0 < load <= 1:
        raise ValueError("load must be in (0, 1]")
    m_i, m_e = intra_cdf.mean() * size_scale, inter_cdf.mean() * size_scale
    q = class_probability(m_i, m_e, ratio, mode)
    mean = q * m_e + (1 - q) * m_i
    hosts = sum(len(h) for h in hosts_by_dc)
    lam = arrival_rate(load, hosts, per_host_bw, mean)
    all_hosts = [h for dc in hosts_by_dc for h in dc]
    dc_index = {h: i for i, dc in enumerate(hosts_by_dc) for h in dc}
    out = []
    t = 0.0
    while True:
        t += rng.expovariate(lam) * 1e9
        if t >= duration or (max_flows is not None and len(out) >= max_flows):
            break
        src = all_hosts[rng.randrange(len(all_hosts))]
        sdc = dc_index[src]
        inter = rng.uniform() < q
        if inter:
            pool = hosts_by_dc[1 - sdc]
            dst = pool[rng.randrange(len(pool))]
            size = sample_flow_size(inter_cdf, rng.uniform())
        else:
            pool = hosts_by_dc[sdc]
            dst = src
            while dst == src:
                dst = pool[rng.randrange(len(pool))]
            size = sample_flow_size(intra_cdf, rng.uniform())
        size = max(1, int(size * size_scale))
        out.append((int(t), src, dst, size, "inter" if inter else "intra"))
    return out


def _spread(servers: list[str], exclude: set[str], avoid_pod: str | None) -> list[str]:
    """Servers ordered round-robin across pods so consecutive picks land in different pods."""
    by_pod: dict[str, list[str]] = {}
    for s in servers:
        if s in exclude:
            continue
        pod = s.split("_")[1]
        by_pod.setdefault(pod, []).append(s)
    pods = sorted(by_pod, key=lambda p: (p == avoid_pod, int(p)))
    out = []
    depth = max((len(v) for v in by_pod.values()), default=0)
    for i in range(depth):
        for p in pods:
            if i < len(by_pod[p]):
                out.append(by_pod[p][i])
    # keep the destination's own pod last
    return [s for s in out if s.split("_")[1] != avoid_pod] + [s for s in out if s.split("_")[1] == avoid_pod]


def gen_incast(topo, n_intra: int, n_inter: int, flow_size: int, dst: str | None = None,
               start: int = 0, stagger: int = 0, first_id: int = 0) -> list[Flow]:
    if n_intra == 0 and n_inter == 0:
        return []
    dst = dst or topo.servers_in(0)[0]
    if dst not in topo.dc_of:
        raise ConfigError(f"workload.dst: unknown server {dst!r}")
    ddc = topo.dc_of[dst]
    dpod = dst.split("_")[1]
    local = _spread(topo.servers_in(ddc), {dst}, dpod)
    remote = _spread(topo.servers_in(1 - ddc), set(), None)
    if n_intra > len(local) or n_inter > len(remote):
        raise ConfigError("workload.n_intra: not enough servers for the incast")
    flows = []
    fid = first_id
    for i, src in enumerate(local[:n_intra]):
        flows.append(Flow(fid, src, dst, flow_size, start + i * stagger, "intra", "incast"))
        fid += 1
    for i, src in enumerate(remote[:n_inter]):
        flows.append(Flow(fid, src, dst, flow_size, start + (n_intra + i) * stagger, "inter", "incast"))
        fid += 1
    return flows


def random_derangement(items: list, rng) -> list:
    """Uniform derangement by rejection: shuffle until no element is fixed."""
    if len(items) < 2:
        raise ValueError("need at least two items")
    while True:
        perm = list(items)
        rng.shuffle(perm)
        if all(a != b for a, b in zip(items, perm)):
            return perm


def gen_permutation(topo, size: int, rng, fraction_cross_dc: float | None = None,
                    start: int = 0, first_id: int = 0) -> list[Flow]:
    servers = list(topo.servers)
    if len(servers) < 2:
        raise ConfigError("permutation needs at least two servers")
    if fraction_cross_dc is None:
        mapping = dict(zip(servers, random_derangement(servers, rng)))
    else:
        mapping = {}
        dcs = [topo.servers_in(0), topo.servers_in(1)]
        m = int(round(fraction_cross_dc * min(len(d) for d in dcs)))
        picked = []
        for d in dcs:
            d = list(d)
            rng.shuffle(d)
            picked.append((d[:m], d[m:]))
        for (cross_a, stay_a), (cross_b, _) in ((picked[0], picked[1]), (picked[1], picked[0])):
            targets = list(cross_b)
            rng.shuffle(targets)
            mapping.update(zip(cross_a, targets))
            if len(stay_a) == 1:
                raise ConfigError("workload.fraction_cross_dc: leaves a single intra-DC server")
            if stay_a:
                mapping.update(zip(stay_a, random_derangement(stay_a, rng)))
    flows = []
    for i, src in enumerate(servers):
        dst = mapping[src]
        cls = "inter" if topo.is_inter(src, dst) else "intra"
        flows.append(Flow(first_id + i, src, dst, size, start, cls, "permutation"))
    return flows


def gen_pairs(topo, pairs: int, size: int, start: int = 0, first_id: int = 0) -> list[Flow]:
    """``pairs`` inter-DC flows between distinct sender/receiver servers."""
    srcs = _spread(topo.servers_in(0), set(), None)
    dsts = _spread(topo.servers_in(1), set(), None)
    if pairs > min(len(srcs), len(dsts)):
        raise ConfigError("workload.pairs: more pairs than servers")
    return [Flow(first_id + i, srcs[i], dsts[i], size, start, "inter", "pairs") for i in range(pairs)]


def gen_allreduce_bursts(topo, burst_min: int, burst_max: int, iterations: int, groups: int,
                         compute_gap: int, rng, start: int = 0, first_id: int = 0) -> list[Flow]:
    """Per iteration, ``groups`` pairwise exchanges between DC replicas in both directions.

    The iteration's total bytes are uniform in ``[burst_min, burst_max]`` and split
    evenly over the groups; iteration ``i`` starts at ``start + i * compute_gap``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    dc0 = _spread(topo.servers_in(0), set(), None)
    dc1 = _spread(topo.servers_in(1), set(), None)
    if groups > min(len(dc0), len(dc1)):
        raise ConfigError("workload.groups: more groups than servers per DC")
    flows = []
    fid = first_id
    for it in range(iterations):
        total = burst_min + (burst_max - burst_min) * rng.uniform()
        per = max(1, int(total / groups))
        t = start + it * compute_gap
        for g in range(groups):
            for src, dst in ((dc0[g], dc1[g]), (dc1[g], dc0[g])):
                flows.append(Flow(fid, src, dst, per, t, "inter", f"iter{it}"))
                fid += 1
    return flows


def gen_rpc(topo, dst: str, count: int, rng, cdf: SizeCdf | None, size: int, start: int,
            interval: int, first_id: int = 0, exclude: set | None = None) -> list[Flow]:
    """Small intra-DC flows toward ``dst`` with exponential inter-arrivals of mean ``interval``."""
    pool = [s for s in topo.servers_in(topo.dc_of[dst]) if s != dst and s not in (exclude or set())]
    flows = []
    t = float(start)
    for i in range(count):
        src = pool[rng.randrange(len(pool))]
        sz = sample_flow_size(cdf, rng.uniform()) if cdf is not None else size
        flows.append(Flow(first_id + i, src, dst, sz, int(t), "intra", "rpc"))
        t += rng.expovariate(1.0 / interval)
    return flows


def build_workload(cfg, topo, rng) -> list[Flow]:
    """Materialize the flow list described by a :class:`WorkloadConfig`."""
    w = cfg
    if w.pattern == "incast":
        flows = gen_incast(topo, w.n_intra, w.n_inter, int(w.flow_size * w.size_scale), w.dst,
                           w.start, w.stagger)
    elif w.pattern == "permutation":
        flows = gen_permutation(topo, int(w.flow_size * w.size_scale), rng, w.fraction_cross_dc, w.start)
    elif w.pattern == "pairs":
        flows = gen_pairs(topo, w.pairs, int(w.flow_size * w.size_scale), w.start)
    elif w.pattern == "allreduce":
        flows = gen_allreduce_bursts(topo, int(w.burst_min * w.size_scale), int(w.burst_max * w.size_scale),
                                     w.iterations, w.groups, w.compute_gap, rng, w.start)
    elif w.pattern == "mixed-cdf":
        arrivals = poisson_arrival_times(
            w.load, topo.params.link_bw, [topo.servers_in(0), topo.servers_in(1)], w.duration, rng,
            load_cdf(w.intra_cdf), load_cdf(w.inter_cdf), tuple(w.intra_inter_ratio), w.ratio_mode,
            w.size_scale, w.max_flows)
        flows = [Flow(i, s, d, size, w.start + t, cls, "mixed") for i, (t, s, d, size, cls) in enumerate(arrivals)]
    else:
        raise ConfigError(f"workload.pattern: unknown pattern {w.pattern!r}")
    if w.rpc_count:
        dst = flows[0].dst if flows and w.pattern == "incast" else (w.dst or topo.servers_in(0)[0])
        busy = {f.src for f in flows}
        cdf = load_cdf(w.rpc_cdf) if w.rpc_cdf else None
        flows += gen_rpc(topo, dst, w.rpc_count, rng, cdf, w.rpc_size, w.rpc_start, w.rpc_interval,
                         first_id=len(flows), exclude=busy)
    return flows
