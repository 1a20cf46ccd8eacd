"""Two-datacenter fat-tree, path enumeration, link failures and block-correlated loss."""

from __future__ import annotations

from dataclasses import dataclass

from .config import ConfigError, TopologyConfig
from .engine import EventKind, Simulator
from .switchport import PhantomQueue, RedParams, SwitchPort, serialization_ns

HOST_QUEUE_BYTES = 1 << 40  # NIC queue; senders are window-limited so this never fills


# Table 1: blocks of 10 packets with exactly 1, 2 and >=3 losses, out of 320e6 packets.
TABLE1_COUNTS = {
    "setup1": (97_403, 23_984, 5_007),
    "setup2": (12_785, 7_262, 1_560),
}
TABLE1_PACKETS = 320_000_000


@dataclass(frozen=True)
class BlockLossModel:
    block_len: int
    p_exact: tuple[float, float, float]

    def __post_init__(self):
        if self.block_len < 3:
            raise ValueError("block_len must be at least 3")
        if any(p < 0 or p > 1 for p in self.p_exact) or sum(self.p_exact) > 1:
            raise ValueError(f"invalid loss probabilities {self.p_exact}")

    @classmethod
    def from_counts(cls, counts: tuple[int, int, int], packets: int = TABLE1_PACKETS,
                    block_len: int = 10) -> "BlockLossModel":
        blocks = packets / block_len
        return cls(block_len, tuple(c / blocks for c in counts))

    @classmethod
    def table1(cls, setup: str) -> "BlockLossModel":
        try:
            return cls.from_counts(TABLE1_COUNTS[setup])
        except KeyError:
            raise ConfigError(f"unknown loss setup {setup!r}") from None


def sample_block_losses(model: BlockLossModel, rng) -> frozenset[int]:
    """Positions lost in the next block; the >=3 case is modeled as exactly 3 losses."""
    u = rng.uniform()
    p1, p2, p3 = model.p_exact
    if u < p1:
        k = 1
    elif u < p1 + p2:
        k = 2
    elif u < p1 + p2 + p3:
        k = 3
    else:
        return frozenset()
    return frozenset(rng.sample(range(model.block_len), k))


class LossProcess:
    """Per-port sampler that groups consecutive packets into blocks."""

    __slots__ = ("model", "rng", "_pos", "_lost")

    def __init__(self, model: BlockLossModel, rng):
        self.model = model
        self.rng = rng
        self._pos = 0
        self._lost: frozenset[int] = frozenset()

    def drop_next(self) -> bool:
        if self._pos == 0:
            self._lost = sample_block_losses(self.model, self.rng)
        lost = self._pos in self._lost
        self._pos += 1
        if self._pos == self.model.block_len:
            self._pos = 0
        return lost


@dataclass
class Link:
    link_id: int
    endpoints: tuple[str, str]
    bandwidth: int
    propagation_delay: int
    ports: tuple[SwitchPort, SwitchPort]
    is_border: bool = False

    @property
    def up(self) -> bool:
        return self.ports[0].up


class Topology:
    """Nodes, directed ports and path tables of the two-DC fat-tree."""

    def __init__(self, params: TopologyConfig):
        if params.k % 2 or params.k < 4:
            raise ConfigError("topology.k: k must be even and >= 4")
        if params.border_links < 1:
            raise ConfigError("topology.border_links: must be >= 1")
        self.params = params
        self.k = params.k
        self.half = params.k // 2
        self.links: list[Link] = []
        self.ports: dict[tuple[str, str], SwitchPort] = {}
        self.servers: list[str] = []
        self.dc_of: dict[str, int] = {}
        self.kind_of: dict[str, str] = {}
        self.border_link_ids: list[int] = []
        self.intra_hop_delay = params.intra_rtt // 12
        self.border_delay = params.inter_rtt // 2 - 8 * self.intra_hop_delay
        if self.border_delay < 0:
            raise ConfigError("topology.inter_rtt: too small for the intra-DC hop delays")
        self._build()

    # ---- construction -------------------------------------------------
    def _add_node(self, name: str, dc: int, kind: str) -> str:
        self.dc_of[name] = dc
        self.kind_of[name] = kind
        if kind == "host":
            self.servers.append(name)
        return name

    def _make_port(self, a: str, b: str, bw: int, delay: int, border: bool, tag: str = "") -> SwitchPort:
        p = self.params
        if self.kind_of[a] == "host":
            return SwitchPort(f"{a}->{b}", bw, delay, HOST_QUEUE_BYTES, red=RedParams(1, 2), marking=False)
        capacity = p.inter_buffer if border else p.intra_buffer
        phantom = None
        if p.phantom:
            if border:
                cap = p.phantom_border_capacity or int(0.5 * bw * p.inter_rtt / 8e9)
            else:
                cap = p.phantom_intra_capacity or capacity
            phantom = PhantomQueue(cap, bw * p.phantom_drain_fraction)
            marking_cap = cap
        else:
            marking_cap = capacity
        red = RedParams.fractions(marking_cap, p.red_min_fraction, p.red_max_fraction)
        port = SwitchPort(f"{a}->{b}{tag}", bw, delay, capacity, red=red, phantom=phantom)
        port.is_border = border
        return port

    def _connect(self, a: str, b: str, delay: int, bw: int | None = None, border: bool = False) -> Link:
        bw = bw or self.params.link_bw
        # parallel border links get distinct port ids: b0->b1#0, b0->b1#1, ...
        tag = f"#{len(self.border_link_ids)}" if border else ""
        pa = self._make_port(a, b, bw, delay, border, tag)
        pb = self._make_port(b, a, bw, delay, border, tag)
        link = Link(len(self.links), (a, b), bw, delay, (pa, pb), border)
        for port, (s, d) in ((pa, (a, b)), (pb, (b, a))):
            port.src_node, port.dst_node, port.link_id = s, d, link.link_id
        self.links.append(link)
        self.ports[(a, b)] = pa
        # parallel border links share endpoints; path tables use border_ports
        if (b, a) not in self.ports or not border:
            self.ports[(b, a)] = pb
        if border:
            self.border_link_ids.append(link.link_id)
        return link

    def _build(self) -> None:
        k, h, d = self.k, self.half, self.intra_hop_delay
        self.border = []
        for dc in range(2):
            border = self._add_node(f"b{dc}", dc, "border")
            self.border.append(border)
            for c in range(h * h):
                self._add_node(f"c{dc}_{c}", dc, "core")
            for pod in range(k):
                for j in range(h):
                    self._add_node(f"a{dc}_{pod}_{j}", dc, "agg")
                    self._add_node(f"e{dc}_{pod}_{j}", dc, "edge")
                    for s in range(h):
                        self._add_node(f"h{dc}_{pod}_{j}_{s}", dc, "host")
            for pod in range(k):
                for j in range(h):
                    for s in range(h):
                        self._connect(f"h{dc}_{pod}_{j}_{s}", f"e{dc}_{pod}_{j}", d)
                    for a in range(h):
                        self._connect(f"e{dc}_{pod}_{j}", f"a{dc}_{pod}_{a}", d)
                    for c in range(h):
                        self._connect(f"a{dc}_{pod}_{j}", f"c{dc}_{j * h + c}", d)
            for c in range(h * h):
                self._connect(f"c{dc}_{c}", border, d)
        self.border_ports: list[tuple[SwitchPort, SwitchPort]] = []
        for _ in range(self.params.border_links):
            link = self._connect("b0", "b1", self.border_delay, self.params.border_bw, border=True)
            self.border_ports.append(link.ports)

    # ---- queries --------------------------------------------------------
    def servers_in(self, dc: int) -> list[str]:
        return [s for s in self.servers if self.dc_of[s] == dc]

    def is_inter(self, src: str, dst: str) -> bool:
        return self.dc_of[src] != self.dc_of[dst]

    @staticmethod
    def _coords(host: str) -> tuple[int, int, int, int]:
        dc, pod, edge, idx = host[1:].split("_")
        return int(dc), int(pod), int(edge), int(idx)

    def path_count(self, src: str, dst: str) -> int:
        sdc, spod, sedge, _ = self._coords(src)
        ddc, dpod, dedge, _ = self._coords(dst)
        h = self.half
        if sdc != ddc:
            return h * h * self.params.border_links * h * h
        if spod != dpod:
            return h * h
        if sedge != dedge:
            return h
        return 1

    def path_at(self, src: str, dst: str, idx: int) -> tuple[SwitchPort, ...]:
        """Path number ``idx`` in the deterministic enumeration order."""
        sdc, spod, sedge, _ = self._coords(src)
        ddc, dpod, dedge, _ = self._coords(dst)
        h = self.half
        P = self.ports
        e_s, e_d = f"e{sdc}_{spod}_{sedge}", f"e{ddc}_{dpod}_{dedge}"
        if src == dst:
            raise ValueError("src == dst")
        if sdc == ddc and spod == dpod and sedge == dedge:
            return (P[(src, e_s)], P[(e_s, dst)])
        if sdc == ddc and spod == dpod:
            a = f"a{sdc}_{spod}_{idx}"
            return (P[(src, e_s)], P[(e_s, a)], P[(a, e_d)], P[(e_d, dst)])
        if sdc == ddc:
            j, c = divmod(idx, h)
            a_s = f"a{sdc}_{spod}_{j}"
            core = f"c{sdc}_{j * h + c}"
            a_d = f"a{sdc}_{dpod}_{j}"
            return (P[(src, e_s)], P[(e_s, a_s)], P[(a_s, core)], P[(core, a_d)],
                    P[(a_d, e_d)], P[(e_d, dst)])
        up, rest = divmod(idx, self.params.border_links * h * h)
        link, down = divmod(rest, h * h)
        j, c = divmod(up, h)
        a_s = f"a{sdc}_{spod}_{j}"
        core_s = f"c{sdc}_{j * h + c}"
        core_d = f"c{ddc}_{down}"
        a_d = f"a{ddc}_{dpod}_{down // h}"
        b_s, b_d = f"b{sdc}", f"b{ddc}"
        bp = self.border_ports[link][0 if sdc == 0 else 1]
        return (P[(src, e_s)], P[(e_s, a_s)], P[(a_s, core_s)], P[(core_s, b_s)], bp,
                P[(b_d, core_d)], P[(core_d, a_d)], P[(a_d, e_d)], P[(e_d, dst)])

    def border_link_of(self, src: str, dst: str, idx: int) -> int | None:
        if not self.is_inter(src, dst):
            return None
        h = self.half
        return (idx % (self.params.border_links * h * h)) // (h * h)

    def path_index_via(self, src: str, dst: str, border_link: int, up: int, down: int) -> int:
        h = self.half
        L = self.params.border_links
        return (up % (h * h)) * L * h * h + (border_link % L) * h * h + down % (h * h)

    def enumerate_paths(self, src: str, dst: str) -> list[tuple[SwitchPort, ...]]:
        """All equal-cost shortest paths, skipping those crossing a down border link."""
        if src == dst:
            raise ValueError("src and dst must differ")
        paths = []
        for i in range(self.path_count(src, dst)):
            p = self.path_at(src, dst, i)
            if all(port.up or not port.is_border for port in p):
                paths.append(p)
        return paths

    def reverse_path(self, path: tuple[SwitchPort, ...]) -> tuple[SwitchPort, ...]:
        rev = []
        for port in reversed(path):
            if port.is_border:
                pair = self.links[port.link_id].ports
                rev.append(pair[1] if pair[0] is port else pair[0])
            else:
                rev.append(self.ports[(port.dst_node, port.src_node)])
        return tuple(rev)

    def one_way_delay(self, path, size: int) -> int:
        return sum(p.prop_delay + serialization_ns(size, p.line_rate) for p in path)

    def unloaded_rtt(self, src: str, dst: str, data_size: int, ack_size: int) -> int:
        path = self.path_at(src, dst, 0)
        return self.one_way_delay(path, data_size) + self.one_way_delay(self.reverse_path(path), ack_size)

    def bottleneck_bw(self, src: str, dst: str) -> int:
        return min(p.line_rate for p in self.path_at(src, dst, 0))

    def hop_count(self, src: str, dst: str) -> int:
        return len(self.path_at(src, dst, 0))

    # ---- failures -------------------------------------------------------
    def set_link_state(self, link_id: int, up: bool) -> None:
        for port in self.links[link_id].ports:
            if port.up and not up:
                port.fail_epoch += 1
            port.up = up

    def fail_link(self, sim: Simulator, link_id: int, at: int, restore_at: int | None = None) -> None:
        if not 0 <= link_id < len(self.links):
            raise ConfigError(f"no link {link_id}")
        sim.schedule(at, self.set_link_state, link_id, False, kind=EventKind.LINK_STATE)
        if restore_at is not None:
            sim.schedule(restore_at, self.set_link_state, link_id, True, kind=EventKind.LINK_STATE)

    def attach_loss(self, model: BlockLossModel, sim: Simulator, border_only: bool = True) -> None:
        for link in self.links:
            if border_only and not link.is_border:
                continue
            for port in link.ports:
                port.loss_model = LossProcess(model, sim.rng(f"loss:{port.port_id}:{link.link_id}"))

    def all_ports(self):
        for link in self.links:
            yield from link.ports

    def counts(self) -> dict[str, int]:
        kinds = {}
        for n, kind in self.kind_of.items():
            kinds[kind] = kinds.get(kind, 0) + 1
        kinds["border_links"] = len(self.border_link_ids)
        return kinds


def build_two_dc_fattree(k: int = 8, border_links: int = 8, link_bw: int = 100_000_000_000,
                         intra_delay: int = 14_000, inter_delay: int = 2_000_000, **kw) -> Topology:
    """Build the topology; ``intra_delay``/``inter_delay`` are the target base RTTs in ns."""
    return Topology(TopologyConfig(k=k, border_links=border_links, link_bw=link_bw,
                                   intra_rtt=intra_delay, inter_rtt=inter_delay, **kw))
