import csv
import json

import pytest

from unosim import cli
from unosim.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main, parse_overrides, sweep
from unosim.config import (ConfigError, ConfigParseError, ScenarioConfig, from_dict, load_file, parse_bw,
                           parse_size, parse_time, validate, validate_config)
from unosim.network import InvariantViolation
from unosim.scenarios import PRESETS, builtin, scenario_names

TINY = """
name = "tiny"
[topology]
k = 4
border_links = 2
link_bw = "10Gbps"
[workload]
pattern = "incast"
n_intra = 1
n_inter = 1
flow_size = "64KiB"
[run]
duration = "50ms"
"""


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv(cli.ENV_OUTPUT, raising=False)
    monkeypatch.delenv(cli.ENV_SEED, raising=False)


# ---------------------------------------------------------------- config

def test_defaults_validate():
    cfg = ScenarioConfig()
    assert validate(cfg) == []
    t = cfg.topology
    assert (t.k, t.border_links, t.link_bw) == (8, 8, 100_000_000_000)
    assert (t.intra_rtt, t.inter_rtt, t.intra_buffer) == (14_000, 2_000_000, 1 << 20)
    assert cfg.transport.mtu == 4096 and cfg.transport.beta == 0.5
    assert (cfg.reliability.ec_data, cfg.reliability.ec_parity) == (8, 2)


def test_odd_k_is_reported():
    assert "topology.k: k must be even" in validate(from_dict({"topology": {"k": 7}}))


def test_beta_out_of_range_is_reported():
    assert "transport.beta: β must be in (0,1]" in validate(from_dict({"transport": {"beta": 1.5}}))


def test_every_violation_is_listed():
    errs = validate(from_dict({"topology": {"k": 7}, "transport": {"beta": 1.5}}))
    assert len(errs) >= 2


def test_unknown_keys_and_sections_are_errors():
    with pytest.raises(ConfigError) as e:
        from_dict({"topology": {"kk": 4}, "extras": {}})
    assert "topology.kk: unknown key" in e.value.errors
    assert "extras: unknown section" in e.value.errors


def test_unit_parsing():
    assert parse_time("14us") == 14_000
    assert parse_time("2ms") == 2_000_000
    assert parse_size("1MiB") == 1 << 20
    assert parse_size("175KiB") == 175 * 1024
    assert parse_bw("100Gbps") == 100_000_000_000
    with pytest.raises(ValueError):
        parse_time("3 parsecs")


def test_unparseable_file_is_parse_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[topology\nk = ")
    with pytest.raises(ConfigParseError):
        validate_config(bad)
    with pytest.raises(ConfigParseError):
        load_file(tmp_path / "missing.toml")


def test_validate_config_reports_semantic_errors(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"topology": {"k": 7}}))
    assert any("k must be even" in e for e in validate_config(p))


def test_replace_revalidates_units():
    cfg = ScenarioConfig().replace(topology={"intra_rtt": "10us"}, name="x")
    assert cfg.topology.intra_rtt == 10_000 and cfg.name == "x"


def test_parse_overrides():
    assert parse_overrides(["transport.cc=\"gemini\"", "topology.k=4"]) == {
        "transport": {"cc": "gemini"}, "topology": {"k": 4}}
    with pytest.raises(ConfigError):
        parse_overrides(["nodot=1"])


# ---------------------------------------------------------------- scenarios

def test_every_builtin_resolves_and_validates():
    names = scenario_names()
    for required in ("mixed-incast-4-4", "intra-incast-8", "inter-incast-8", "permutation-800g",
                     "permutation-provisioned", "realistic-load-X", "rtt-ratio-sweep", "queue-asymmetry",
                     "border-link-failure-5MiB", "random-loss-single-flow", "allreduce-100-iters"):
        assert required in names
    for name in names:
        concrete = "realistic-load-40" if name == "realistic-load-X" else name
        for desk in (False, True):
            assert validate(builtin(concrete, desk=desk)) == []


def test_mixed_incast_matches_four_and_four():
    w = builtin("mixed-incast-4-4").workload
    assert (w.pattern, w.n_intra, w.n_inter, w.flow_size) == ("incast", 4, 4, 1 << 30)


def test_realistic_load_name_sets_load():
    assert builtin("realistic-load-60").workload.load == 0.6
    with pytest.raises(ConfigError):
        builtin("realistic-load-0")
    with pytest.raises(ConfigError):
        builtin("no-such-scenario")


def test_queue_asymmetry_buffers():
    t = builtin("queue-asymmetry").topology
    assert t.intra_buffer == 175 * 1024
    assert t.inter_buffer == int(2.2 * (1 << 20))


# ---------------------------------------------------------------- CLI

def test_run_writes_outputs_and_echoes_config(tiny, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(tiny), "--out", str(out)]) == EXIT_OK
    for name in ("flows.csv", "queues.csv", "rates.csv", "summary.txt", "config.json"):
        assert (out / name).is_file()
    summary = (out / "summary.txt").read_text()
    assert "config.topology.k = 4" in summary
    assert "config.transport.beta = 0.5" in summary
    assert "audit.ok = True" in summary
    # the embedded config alone re-creates the run
    echoed = json.loads((out / "config.json").read_text())
    assert from_dict(echoed) == load_file(tiny).replace(name="tiny")


def test_run_is_byte_identical_across_invocations(tiny, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(tiny), "--out", str(a)]) == EXIT_OK
    assert main(["run", str(tiny), "--out", str(b)]) == EXIT_OK
    for name in ("flows.csv", "queues.csv", "rates.csv", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_env_overrides_output_dir_and_seed(tiny, tmp_path, monkeypatch):
    out = tmp_path / "envout"
    monkeypatch.setenv(cli.ENV_OUTPUT, str(out))
    monkeypatch.setenv(cli.ENV_SEED, "77")
    assert main(["run", str(tiny)]) == EXIT_OK
    assert "seed = 77" in (out / "summary.txt").read_text()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("[topology]\nk = 7\n")
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "k must be even" in capsys.readouterr().err
    assert main(["validate", str(p)]) == EXIT_CONFIG
    assert main(["validate", str(tmp_path / "absent.toml")]) == EXIT_CONFIG


def test_validate_ok(tiny, capsys):
    assert main(["validate", str(tiny)]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_invariant_violation_exit_code(tiny, tmp_path, monkeypatch):
    def boom(cfg, flows=None):
        raise InvariantViolation("forced")

    monkeypatch.setattr(cli, "simulate", boom)
    assert main(["run", str(tiny), "--out", str(tmp_path / "x")]) == EXIT_INVARIANT


def test_list_and_describe(capsys):
    assert main(["list-scenarios"]) == EXIT_OK
    listed = capsys.readouterr().out
    assert all(name in listed for name in PRESETS)
    assert main(["describe", "border-link-failure-5MiB", "--desk"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "workload.pattern = pairs" in text
    assert main(["describe", "nope"]) == EXIT_CONFIG


def test_sweep_records_failing_point_and_continues(tiny, tmp_path):
    cfg = load_file(tiny)
    path = sweep(cfg, "rtt_ratio", ["8", "0", "16"], tmp_path / "sw")
    rows = list(csv.DictReader(open(path)))
    assert [r["value"] for r in rows] == ["8", "0", "16"]
    assert [r["status"] for r in rows] == ["ok", "failed", "ok"]
    assert rows[1]["error"]
    assert rows[0]["inter_p99_ns"] and rows[2]["inter_p99_ns"]
    assert int(rows[2]["inter_p99_ns"]) > int(rows[0]["inter_p99_ns"])
    assert (tmp_path / "sw" / "rtt_ratio=8" / "summary.txt").is_file()


def test_sweep_seed_axis_via_cli(tiny, tmp_path):
    out = tmp_path / "seeds"
    assert main(["sweep", str(tiny), "--axis", "seed", "--values", "1,2", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "sweep_summary.csv")))
    assert [r["status"] for r in rows] == ["ok", "ok"]


def test_load_axis_needs_mixed_workload(tiny):
    with pytest.raises(ConfigError):
        sweep(load_file(tiny), "load", ["0.2"], "unused")
