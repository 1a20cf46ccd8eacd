"""Built-in scenario presets.

Each preset is the full-size setup.  ``DESK`` holds per-preset overrides that
shrink flow sizes, durations or link speeds so the run finishes in seconds on
one CPU; the CLI applies them with ``--desk``.
"""

from __future__ import annotations

import copy
import re

from .config import ConfigError, ScenarioConfig, from_dict

MiB = 1 << 20
GiB = 1 << 30

_INCAST_TOPO = {"k": 8, "border_links": 8, "intra_rtt": "14us", "inter_rtt": "1792us"}

PRESETS: dict[str, dict] = {
    "mixed-incast-4-4": {
        "description": "4 intra-DC + 4 inter-DC 1 GiB flows into one receiver; inter RTT 128x intra",
        "topology": _INCAST_TOPO,
        "reliability": {"lb": "spray", "ec": False},
        "workload": {"pattern": "incast", "n_intra": 4, "n_inter": 4, "flow_size": GiB},
        "run": {"duration": "2s", "rate_window": "1ms"},
    },
    "intra-incast-8": {
        "description": "8 intra-DC 1 GiB flows into one receiver",
        "topology": _INCAST_TOPO,
        "reliability": {"lb": "spray", "ec": False},
        "workload": {"pattern": "incast", "n_intra": 8, "n_inter": 0, "flow_size": GiB},
        "run": {"duration": "2s"},
    },
    "inter-incast-8": {
        "description": "8 inter-DC 1 GiB flows into one receiver",
        "topology": _INCAST_TOPO,
        "reliability": {"lb": "spray", "ec": False},
        "workload": {"pattern": "incast", "n_intra": 0, "n_inter": 8, "flow_size": GiB},
        "run": {"duration": "2s"},
    },
    "permutation-800g": {
        "description": "random permutation over both DCs; 8 x 100 Gb/s border links",
        "workload": {"pattern": "permutation", "flow_size": 64 * MiB},
        "run": {"duration": "1s"},
    },
    "permutation-provisioned": {
        "description": "random permutation with full-bisection inter-DC capacity (128 border links)",
        "topology": {"border_links": 128},
        "workload": {"pattern": "permutation", "flow_size": 64 * MiB},
        "run": {"duration": "1s"},
    },
    "realistic-load-X": {
        "description": "web-search intra-DC + WAN inter-DC flows, Poisson arrivals at X% load (e.g. realistic-load-40)",
        "workload": {"pattern": "mixed-cdf", "load": 0.4, "duration": "50ms"},
        "run": {"duration": "1s"},
    },
    "rtt-ratio-sweep": {
        "description": "realistic mix at 40% load; sweep axis rtt_ratio scales the inter-DC RTT",
        "workload": {"pattern": "mixed-cdf", "load": 0.4, "duration": "50ms"},
        "run": {"duration": "1s"},
    },
    "queue-asymmetry": {
        "description": "realistic mix at 40% load with 175 KiB intra-DC and 2.2 MiB border buffers",
        "topology": {"intra_buffer": "175KiB", "inter_buffer": int(2.2 * MiB)},
        "workload": {"pattern": "mixed-cdf", "load": 0.4, "duration": "50ms"},
        "run": {"duration": "1s"},
    },
    "border-link-failure-5MiB": {
        "description": "inter-DC 5 MiB flows saturating the border; border link 0 fails at t=0",
        "workload": {"pattern": "pairs", "pairs": 16, "flow_size": 5 * MiB},
        "failure": {"link_failures": [{"link": "border:0", "at": 0}]},
        "run": {"duration": "500ms"},
    },
    "random-loss-single-flow": {
        "description": "one 64 MiB inter-DC flow under block-correlated border loss (measured setup 1)",
        "workload": {"pattern": "pairs", "pairs": 1, "flow_size": 64 * MiB},
        "failure": {"loss_setup": "setup1"},
        "run": {"duration": "1s"},
    },
    "allreduce-100-iters": {
        "description": "100 AllReduce iterations of 70-500 MiB between DC replicas, with a border failure and random loss",
        "workload": {"pattern": "allreduce", "iterations": 100, "groups": 8,
                     "burst_min": 70 * MiB, "burst_max": 500 * MiB, "compute_gap": "20ms"},
        "failure": {"link_failures": [{"link": "border:0", "at": 0}], "loss_setup": "setup1"},
        "run": {"duration": "10s"},
    },
}

_DESK_TOPO = {"k": 4, "border_links": 2, "link_bw": "10Gbps"}

DESK: dict[str, dict] = {
    "mixed-incast-4-4": {"topology": _DESK_TOPO, "workload": {"flow_size": 8 * MiB, "size_scale": 1.0}},
    "intra-incast-8": {"topology": _DESK_TOPO, "workload": {"flow_size": 4 * MiB}},
    "inter-incast-8": {"topology": _DESK_TOPO, "workload": {"flow_size": 4 * MiB}},
    "permutation-800g": {"topology": _DESK_TOPO, "workload": {"flow_size": 1 * MiB}},
    "permutation-provisioned": {"topology": {**_DESK_TOPO, "border_links": 16},
                                "workload": {"flow_size": 1 * MiB}},
    "realistic-load-X": {"topology": _DESK_TOPO, "workload": {"duration": "5ms", "size_scale": 0.1}},
    "rtt-ratio-sweep": {"topology": _DESK_TOPO, "workload": {"duration": "5ms", "size_scale": 0.1}},
    "queue-asymmetry": {"topology": {**_DESK_TOPO, "intra_buffer": "18KiB", "inter_buffer": "300KiB"},
                        "workload": {"duration": "5ms", "size_scale": 0.1}},
    "border-link-failure-5MiB": {"topology": {**_DESK_TOPO, "border_links": 4},
                                 "workload": {"pairs": 4, "flow_size": 1 * MiB}},
    "random-loss-single-flow": {"topology": _DESK_TOPO, "workload": {"flow_size": 4 * MiB}},
    "allreduce-100-iters": {"topology": _DESK_TOPO,
                            "workload": {"iterations": 3, "groups": 2, "burst_min": 2 * MiB,
                                         "burst_max": 4 * MiB, "compute_gap": "10ms"}},
}

_LOAD_RE = re.compile(r"^realistic-load-(\d+)$")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for sec, values in over.items():
        if isinstance(values, dict):
            out.setdefault(sec, {}).update(values)
        else:
            out[sec] = values
    return out


def scenario_names() -> list[str]:
    return list(PRESETS)


def describe(name: str) -> str:
    key = _preset_key(name)
    return PRESETS[key]["description"]


def _preset_key(name: str) -> str:
    if name in PRESETS:
        return name
    if _LOAD_RE.match(name):
        return "realistic-load-X"
    raise ConfigError(f"unknown scenario {name!r}; see list-scenarios")


def scenario_dict(name: str, desk: bool = False) -> dict:
    key = _preset_key(name)
    data = {k: v for k, v in PRESETS[key].items() if k != "description"}
    if desk:
        data = _merge(data, DESK.get(key, {}))
    m = _LOAD_RE.match(name)
    if m:
        pct = int(m.group(1))
        if not 0 < pct <= 100:
            raise ConfigError(f"scenario {name!r}: load must be 1..100 percent")
        data = _merge(data, {"workload": {"load": pct / 100}})
    data["name"] = name
    return data


def builtin(name: str, desk: bool = False, **overrides) -> ScenarioConfig:
    """Config for a preset; ``overrides`` are per-section dicts merged on top."""
    return from_dict(_merge(scenario_dict(name, desk), overrides))
