"""Scenario configuration: sectioned TOML/JSON files, unit parsing, validation.

Times are integer nanoseconds, sizes bytes, bandwidths bits/s.  In files
they may be written with units (``"14us"``, ``"1MiB"``, ``"100Gbps"``).
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Semantic violation; ``errors`` lists every offending field path."""

    def __init__(self, message: str | list[str]):
        self.errors = [message] if isinstance(message, str) else list(message)
        super().__init__("; ".join(self.errors))


class ConfigParseError(Exception):
    """The file is unreadable or not valid TOML/JSON."""


_TIME_UNITS = {"ns": 1, "us": 1_000, "µs": 1_000, "ms": 1_000_000, "s": 1_000_000_000}
_SIZE_UNITS = {"b": 1, "kb": 1_000, "mb": 1_000_000, "gb": 1_000_000_000,
               "kib": 1 << 10, "mib": 1 << 20, "gib": 1 << 30}
_BW_UNITS = {"bps": 1, "kbps": 10**3, "mbps": 10**6, "gbps": 10**9, "tbps": 10**12}
_NUM = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-zµ]*)\s*$")


def _parse_units(value: Any, units: dict[str, int], what: str) -> int:
    if isinstance(value, bool):
        raise ValueError(f"expected a {what}, got {value!r}")
    if isinstance(value, (int, float)):
        return int(round(value))
    m = _NUM.match(str(value))
    if not m:
        raise ValueError(f"cannot parse {what} {value!r}")
    num, unit = float(m.group(1)), m.group(2)
    key = unit if unit in units else unit.lower()
    if unit == "":
        return int(round(num))
    if key not in units:
        raise ValueError(f"unknown {what} unit {unit!r}")
    return int(round(num * units[key]))


def parse_time(value: Any) -> int:
    return _parse_units(value, _TIME_UNITS, "time")


def parse_size(value: Any) -> int:
    return _parse_units(value, _SIZE_UNITS, "size")


def parse_bw(value: Any) -> int:
    return _parse_units(value, _BW_UNITS, "bandwidth")


# Field metadata tags the unit parser used for a field.
def _t(default, **kw):
    return field(default=default, metadata={"unit": "time", **kw})


def _s(default, **kw):
    return field(default=default, metadata={"unit": "size", **kw})


def _b(default, **kw):
    return field(default=default, metadata={"unit": "bw", **kw})


@dataclass
class TopologyConfig:
    k: int = 8
    border_links: int = 8
    link_bw: int = _b(100_000_000_000)
    border_bw: int | None = _b(None)
    intra_rtt: int = _t(14_000)
    inter_rtt: int = _t(2_000_000)
    intra_buffer: int = _s(1 << 20)
    inter_buffer: int = _s(1 << 20)
    phantom: bool = True
    phantom_drain_fraction: float = 0.9
    phantom_intra_capacity: int | None = _s(None)
    phantom_border_capacity: int | None = _s(None)
    red_min_fraction: float = 0.25
    red_max_fraction: float = 0.75


@dataclass
class TransportConfig:
    cc: str = "uno"
    mtu: int = _s(4096)
    ack_size: int = _s(64)
    alpha_bdp_fraction: float = 0.001
    beta: float = 0.5
    k_intra_bdp_fraction: float = 1 / 7
    ewma_gain: float = 0.125
    md_scale_floor: float = 0.05
    gentle_factor: float = 0.3
    epoch_period: int | None = _t(None)
    delay_epsilon: int | None = _t(None)
    quick_adapt: bool = True
    qa_period: str = "flow"
    init_cwnd_bdp: float = 1.0
    max_cwnd_bdp: float = 2.0
    pacing_inter: bool = True
    pacing_intra: bool = False
    dupthresh: int = 3
    rto_min: int = _t(100_000)
    rto_rtt_mult: float = 4.0
    ack_loss_rate: float = 0.0


@dataclass
class ReliabilityConfig:
    lb: str = "unolb"
    n_subflows: int = 8
    ec: bool = True
    ec_data: int = 8
    ec_parity: int = 2
    deadline_factor: float = 2.0
    block_rto_rtt_mult: float = 2.0
    plb_threshold: float = 0.5
    plb_rounds: int = 2


@dataclass
class WorkloadConfig:
    pattern: str = "incast"
    flow_size: int = _s(1 << 30)
    n_intra: int = 4
    n_inter: int = 4
    dst: str | None = None
    start: int = _t(0)
    stagger: int = _t(0)
    # permutation
    fraction_cross_dc: float | None = None
    # mixed-cdf
    intra_cdf: str = "websearch"
    inter_cdf: str = "alibaba_wan"
    load: float = 0.4
    intra_inter_ratio: list = field(default_factory=lambda: [4, 1])
    ratio_mode: str = "bytes"
    duration: int = _t(10_000_000)
    max_flows: int | None = None
    # extra small intra-DC flows toward the incast destination
    rpc_count: int = 0
    rpc_cdf: str | None = None
    rpc_size: int = _s(16_384)
    rpc_start: int = _t(0)
    rpc_interval: int = _t(50_000)
    # explicit inter-DC flows between distinct host pairs
    pairs: int = 8
    # allreduce
    burst_min: int = _s(70 << 20)
    burst_max: int = _s(500 << 20)
    iterations: int = 100
    groups: int = 1
    compute_gap: int = _t(20_000_000)
    # optional scale factor applied to every generated flow size
    size_scale: float = 1.0


@dataclass
class LinkFailure:
    link: str = "border:0"
    at: int = _t(0)
    restore_at: int | None = _t(None)


@dataclass
class FailureConfig:
    link_failures: list = field(default_factory=list)
    loss_setup: str = "none"
    loss_on: str = "border"


@dataclass
class RunConfig:
    duration: int = _t(1_000_000_000)
    seed: int = 1
    output_dir: str = "out"
    queue_trace: bool = True
    queue_sample: int = _t(10_000)
    queue_ports: list = field(default_factory=lambda: ["auto"])
    rate_trace: bool = True
    rate_window: int = _t(1_000_000)
    cwnd_trace: bool = False
    cwnd_sample: int = _t(100_000)
    event_trace: bool = False
    jain_window: int | None = _t(None)


@dataclass
class ScenarioConfig:
    name: str = "custom"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    reliability: ReliabilityConfig = field(default_factory=ReliabilityConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    failure: FailureConfig = field(default_factory=FailureConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def flat_items(self) -> list[tuple[str, Any]]:
        """``section.key`` pairs in declaration order; used to echo the config."""
        out = [("name", self.name)]
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                out.append((f"{sec}.{f.name}", getattr(obj, f.name)))
        return out

    def replace(self, **sections) -> "ScenarioConfig":
        """Copy with per-section overrides: ``cfg.replace(transport={"cc": "gemini"})``."""
        data = self.to_dict()
        for sec, values in sections.items():
            if sec == "name":
                data["name"] = values
            else:
                data[sec].update(values)
        return from_dict(data)


SECTIONS = ("topology", "transport", "reliability", "workload", "failure", "run")
_SECTION_TYPES = {
    "topology": TopologyConfig, "transport": TransportConfig, "reliability": ReliabilityConfig,
    "workload": WorkloadConfig, "failure": FailureConfig, "run": RunConfig,
}
_PARSERS = {"time": parse_time, "size": parse_size, "bw": parse_bw}


def _build_section(cls, values: dict, path: str, errors: list[str]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        f = known.get(key)
        if f is None:
            errors.append(f"{path}.{key}: unknown key")
            continue
        unit = f.metadata.get("unit")
        try:
            if raw is None:
                kwargs[key] = None
            elif unit:
                kwargs[key] = _PARSERS[unit](raw)
            elif cls is FailureConfig and key == "link_failures":
                items = []
                for i, item in enumerate(raw):
                    if not isinstance(item, dict):
                        errors.append(f"{path}.link_failures[{i}]: expected a table")
                        continue
                    items.append(_build_section(LinkFailure, item, f"{path}.link_failures[{i}]", errors))
                kwargs[key] = items
            else:
                kwargs[key] = raw
        except ValueError as e:
            errors.append(f"{path}.{key}: {e}")
    return cls(**kwargs)


def from_dict(data: dict) -> ScenarioConfig:
    """Build a config, collecting every unknown key and unit error before raising."""
    errors: list[str] = []
    sections = {}
    for key, value in data.items():
        if key == "name":
            continue
        if key not in _SECTION_TYPES:
            errors.append(f"{key}: unknown section")
            continue
        if not isinstance(value, dict):
            errors.append(f"{key}: expected a table")
            continue
        sections[key] = _build_section(_SECTION_TYPES[key], value, key, errors)
    if errors:
        raise ConfigError(errors)
    fails = sections.get("failure")
    if fails is not None:
        fails.link_failures = [lf if isinstance(lf, LinkFailure) else LinkFailure(**lf)
                               for lf in fails.link_failures]
    return ScenarioConfig(name=str(data.get("name", "custom")), **sections)


def load_file(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigParseError(f"cannot read {path}: {e}") from e
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text)
    except Exception as e:  # decoder errors differ between tomllib/tomli/json
        raise ConfigParseError(f"cannot parse {path}: {e}") from e
    return from_dict(data)


CC_KINDS = ("uno", "dctcp", "gemini")
LB_KINDS = ("unolb", "ecmp", "spray", "plb")
PATTERNS = ("incast", "permutation", "mixed-cdf", "allreduce", "pairs")


def validate(cfg: ScenarioConfig) -> list[str]:
    """Every semantic violation as ``section.key: message``."""
    errs = []
    t, tr, rel, w, fl, run = cfg.topology, cfg.transport, cfg.reliability, cfg.workload, cfg.failure, cfg.run
    if not isinstance(t.k, int) or t.k % 2:
        errs.append("topology.k: k must be even")
    elif t.k < 4:
        errs.append("topology.k: k must be >= 4")
    if t.border_links < 1:
        errs.append("topology.border_links: must be >= 1")
    if t.link_bw <= 0:
        errs.append("topology.link_bw: must be > 0")
    if t.border_bw is not None and t.border_bw <= 0:
        errs.append("topology.border_bw: must be > 0")
    if t.intra_rtt <= 0:
        errs.append("topology.intra_rtt: must be > 0")
    if t.inter_rtt <= t.intra_rtt:
        errs.append("topology.inter_rtt: must exceed intra_rtt")
    elif t.inter_rtt // 2 < 8 * (t.intra_rtt // 12):
        errs.append("topology.inter_rtt: too small for the intra-DC hop delays")
    if t.intra_buffer <= 0 or t.inter_buffer <= 0:
        errs.append("topology.intra_buffer: buffers must be > 0")
    if not 0 < t.phantom_drain_fraction < 1:
        errs.append("topology.phantom_drain_fraction: must be in (0,1)")
    if not 0 < t.red_min_fraction < t.red_max_fraction <= 1:
        errs.append("topology.red_min_fraction: need 0 < min < max <= 1")
    for key in ("phantom_intra_capacity", "phantom_border_capacity"):
        v = getattr(t, key)
        if v is not None and v <= 0:
            errs.append(f"topology.{key}: must be > 0")

    if tr.cc not in CC_KINDS:
        errs.append(f"transport.cc: unknown congestion control {tr.cc!r} (expected one of {', '.join(CC_KINDS)})")
    if tr.mtu <= 0 or tr.ack_size <= 0:
        errs.append("transport.mtu: packet sizes must be > 0")
    if tr.mtu > min(t.intra_buffer, t.inter_buffer):
        errs.append("transport.mtu: must fit in a switch buffer")
    if not 0 < tr.alpha_bdp_fraction <= 1:
        errs.append("transport.alpha_bdp_fraction: must be in (0,1]")
    if not 0 < tr.beta <= 1:
        errs.append("transport.beta: β must be in (0,1]")
    if tr.k_intra_bdp_fraction <= 0:
        errs.append("transport.k_intra_bdp_fraction: must be > 0")
    if not 0 < tr.ewma_gain <= 1:
        errs.append("transport.ewma_gain: must be in (0,1]")
    if not 0 < tr.md_scale_floor <= 1:
        errs.append("transport.md_scale_floor: must be in (0,1]")
    if not 0 < tr.gentle_factor <= 1:
        errs.append("transport.gentle_factor: must be in (0,1]")
    if tr.epoch_period is not None and tr.epoch_period <= 0:
        errs.append("transport.epoch_period: must be > 0")
    if tr.delay_epsilon is not None and tr.delay_epsilon < 0:
        errs.append("transport.delay_epsilon: must be >= 0")
    if tr.qa_period not in ("flow", "intra"):
        errs.append("transport.qa_period: must be 'flow' or 'intra'")
    if tr.init_cwnd_bdp <= 0 or tr.max_cwnd_bdp <= 0:
        errs.append("transport.init_cwnd_bdp: window scales must be > 0")
    if tr.dupthresh < 1:
        errs.append("transport.dupthresh: must be >= 1")
    if tr.rto_min <= 0 or tr.rto_rtt_mult <= 0:
        errs.append("transport.rto_min: RTO parameters must be > 0")
    if not 0 <= tr.ack_loss_rate < 1:
        errs.append("transport.ack_loss_rate: must be in [0,1)")

    if rel.lb not in LB_KINDS:
        errs.append(f"reliability.lb: unknown load balancer {rel.lb!r} (expected one of {', '.join(LB_KINDS)})")
    if rel.n_subflows < 1:
        errs.append("reliability.n_subflows: must be >= 1")
    if rel.ec_data < 1:
        errs.append("reliability.ec_data: x must be >= 1")
    if rel.ec_parity < 0:
        errs.append("reliability.ec_parity: y must be >= 0")
    if rel.deadline_factor <= 0:
        errs.append("reliability.deadline_factor: must be > 0")
    if rel.block_rto_rtt_mult <= 0:
        errs.append("reliability.block_rto_rtt_mult: must be > 0")
    if not 0 <= rel.plb_threshold <= 1 or rel.plb_rounds < 1:
        errs.append("reliability.plb_threshold: need threshold in [0,1] and rounds >= 1")

    if w.pattern not in PATTERNS:
        errs.append(f"workload.pattern: unknown pattern {w.pattern!r}")
    if w.flow_size <= 0:
        errs.append("workload.flow_size: must be > 0")
    if w.n_intra < 0 or w.n_inter < 0:
        errs.append("workload.n_intra: counts must be >= 0")
    else:
        half = t.k ** 3 // 4 if isinstance(t.k, int) else 0
        if w.pattern == "incast" and (w.n_intra > half - 1 or w.n_inter > half):
            errs.append("workload.n_intra: not enough servers for the incast")
    if not 0 < w.load <= 1:
        errs.append("workload.load: target load must be in (0,1]")
    if (not isinstance(w.intra_inter_ratio, list) or len(w.intra_inter_ratio) != 2
            or any(not isinstance(x, (int, float)) or x <= 0 for x in w.intra_inter_ratio)):
        errs.append("workload.intra_inter_ratio: need two positive numbers")
    if w.ratio_mode not in ("bytes", "flows"):
        errs.append("workload.ratio_mode: must be 'bytes' or 'flows'")
    if w.fraction_cross_dc is not None and not 0 <= w.fraction_cross_dc <= 1:
        errs.append("workload.fraction_cross_dc: must be in [0,1]")
    if w.duration <= 0:
        errs.append("workload.duration: must be > 0")
    if w.iterations < 1:
        errs.append("workload.iterations: must be >= 1")
    if w.groups < 1:
        errs.append("workload.groups: must be >= 1")
    if not 0 < w.burst_min <= w.burst_max:
        errs.append("workload.burst_min: need 0 < burst_min <= burst_max")
    if w.rpc_count < 0:
        errs.append("workload.rpc_count: must be >= 0")
    if w.pairs < 1:
        errs.append("workload.pairs: must be >= 1")
    if w.size_scale <= 0:
        errs.append("workload.size_scale: must be > 0")
    for key in ("intra_cdf", "inter_cdf", "rpc_cdf"):
        name = getattr(w, key)
        if name is None:
            continue
        from .workload import cdf_exists
        if not cdf_exists(name):
            errs.append(f"workload.{key}: no CDF named or located at {name!r}")

    for i, lf in enumerate(fl.link_failures):
        if not re.match(r"^(border:\d+|\d+)$", str(lf.link)):
            errs.append(f"failure.link_failures[{i}].link: expected 'border:<n>' or a link id")
        elif str(lf.link).startswith("border:") and int(str(lf.link)[7:]) >= t.border_links:
            errs.append(f"failure.link_failures[{i}].link: border link index out of range")
        if lf.restore_at is not None and lf.restore_at <= lf.at:
            errs.append(f"failure.link_failures[{i}].restore_at: must be after 'at'")
    if fl.loss_setup not in ("none", "setup1", "setup2"):
        errs.append("failure.loss_setup: must be none, setup1 or setup2")
    if fl.loss_on not in ("border", "all"):
        errs.append("failure.loss_on: must be 'border' or 'all'")

    if run.duration <= 0:
        errs.append("run.duration: must be > 0")
    if run.queue_sample <= 0 or run.rate_window <= 0 or run.cwnd_sample <= 0:
        errs.append("run.queue_sample: sampling periods must be > 0")
    if run.jain_window is not None and run.jain_window <= 0:
        errs.append("run.jain_window: must be > 0")
    return errs


def validate_config(path: str | Path) -> list[str]:
    """Parse and validate a file; returns an empty list when the config is ok.

    Raises :class:`ConfigParseError` when the file cannot be read or decoded.
    """
    try:
        cfg = load_file(path)
    except ConfigError as e:
        return e.errors
    return validate(cfg)
