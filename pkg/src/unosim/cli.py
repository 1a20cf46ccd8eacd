"""Command-line runner: run, sweep, validate, list-scenarios, describe.

Exit codes: 0 success, 1 configuration error, 2 runtime invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, ConfigParseError, ScenarioConfig, from_dict, load_file, validate
from .metrics import fct_stats, records_from_result, write_outputs
from .network import InvariantViolation, simulate
from .scenarios import PRESETS, builtin, describe, scenario_names

ENV_OUTPUT = "UNOSIM_OUTPUT_DIR"
ENV_SEED = "UNOSIM_SEED"

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2
AXES = ("load", "rtt_ratio", "seed")


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs: list[str]) -> dict:
    """``section.key=value`` strings into per-section dicts; values parse as JSON when possible."""
    out: dict[str, dict] = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        sec, dot, field = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set {item!r}: expected section.key=value")
        out.setdefault(sec, {})[field] = _coerce(value)
    return out


def load_config(source: str, desk: bool = False, overrides: dict | None = None) -> ScenarioConfig:
    """A config file path or a built-in scenario name, with overrides and env vars applied."""
    overrides = dict(overrides or {})
    if Path(source).is_file():
        cfg = load_file(source)
        if overrides:
            cfg = cfg.replace(**overrides)
    else:
        cfg = builtin(source, desk=desk, **overrides)
    env = {}
    if os.environ.get(ENV_SEED):
        env["seed"] = int(os.environ[ENV_SEED])
    if os.environ.get(ENV_OUTPUT):
        env["output_dir"] = os.environ[ENV_OUTPUT]
    if env:
        cfg = cfg.replace(run=env)
    errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def run_scenario(cfg: ScenarioConfig, outdir: str | Path | None = None) -> Path:
    """Run one config and write flows.csv, queues.csv, rates.csv and summary.txt."""
    errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    outdir = Path(outdir or cfg.run.output_dir)
    res = simulate(cfg)
    write_outputs(res, outdir)
    if not res.audit["ok"]:
        raise InvariantViolation(f"byte conservation failed: {res.audit}")
    return outdir


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "load":
        return cfg.replace(workload={"load": float(value)})
    if axis == "rtt_ratio":
        return cfg.replace(topology={"inter_rtt": int(float(value) * cfg.topology.intra_rtt)})
    if axis == "seed":
        return cfg.replace(run={"seed": int(value)})
    raise ConfigError(f"sweep axis must be one of {', '.join(AXES)}, got {axis!r}")


def _sweep_point(args):
    cfg_dict, axis, value, outdir = args
    cfg = apply_axis(from_dict(cfg_dict), axis, value)
    row = {"axis": axis, "value": value, "status": "ok", "error": ""}
    try:
        errors = validate(cfg)
        if errors:
            raise ConfigError(errors)
        res = simulate(cfg)
        write_outputs(res, outdir)
        if not res.audit["ok"]:
            raise InvariantViolation(f"byte conservation failed: {res.audit}")
        records = records_from_result(res)
        for cls in ("all", "intra", "inter"):
            st = fct_stats(records, None if cls == "all" else cls)
            row[f"{cls}_mean_ns"] = "" if st is None else f"{st.mean:.1f}"
            row[f"{cls}_p99_ns"] = "" if st is None else st.p99
    except (ConfigError, InvariantViolation) as e:
        row.update(status="failed", error=str(e))
    return row


def sweep(cfg: ScenarioConfig, axis: str, values: list, outdir: str | Path, jobs: int = 1) -> Path:
    """One isolated run per value under ``outdir/<axis>=<value>``; failures are recorded, not fatal."""
    if axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(AXES)}, got {axis!r}")
    if axis == "load" and cfg.workload.pattern != "mixed-cdf":
        raise ConfigError("sweep axis 'load' needs workload.pattern = mixed-cdf")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg.to_dict() | {"name": cfg.name}, axis, v, outdir / f"{axis}={v}") for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    cols = ["axis", "value", "status"] + [f"{c}_{m}" for c in ("all", "intra", "inter")
                                         for m in ("mean_ns", "p99_ns")] + ["error"]
    path = outdir / "sweep_summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        w.writerows(rows)
    return path


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="unosim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("config", help="config file (.toml/.json) or built-in scenario name")
        sp.add_argument("--out", help=f"output directory (env {ENV_OUTPUT})")
        sp.add_argument("--seed", type=int, help=f"RNG seed (env {ENV_SEED})")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.add_argument("--desk", action="store_true", help="apply the preset's small-scale overrides")

    common(sub.add_parser("run", help="execute one scenario"))
    sw = sub.add_parser("sweep", help="run a parameter sweep")
    common(sw)
    sw.add_argument("--axis", required=True, choices=AXES)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--jobs", type=int, default=1)
    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("config")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    d = sub.add_parser("describe", help="show a built-in scenario's resolved config")
    d.add_argument("scenario")
    d.add_argument("--desk", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "list-scenarios":
            for name in scenario_names():
                print(f"{name:28s} {PRESETS[name]['description']}")
            return EXIT_OK
        if args.cmd == "describe":
            cfg = builtin(args.scenario, desk=args.desk)
            print(f"# {describe(args.scenario)}")
            for k, val in cfg.flat_items():
                print(f"{k} = {val}")
            return EXIT_OK
        if args.cmd == "validate":
            errors = validate(load_file(args.config)) if Path(args.config).is_file() else None
            if errors is None:
                raise ConfigParseError(f"cannot read {args.config}")
            for e in errors:
                print(e, file=sys.stderr)
            print("ok" if not errors else f"{len(errors)} error(s)")
            return EXIT_CONFIG if errors else EXIT_OK
        overrides = parse_overrides(args.set)
        if args.seed is not None:
            overrides.setdefault("run", {})["seed"] = args.seed
        cfg = load_config(args.config, desk=args.desk, overrides=overrides)
        out = args.out or cfg.run.output_dir
        if args.cmd == "run":
            path = run_scenario(cfg, out)
            print(f"wrote {path}")
        else:
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            path = sweep(cfg, args.axis, values, out, args.jobs)
            print(f"wrote {path}")
        return EXIT_OK
    except (ConfigError, ConfigParseError) as e:
        for msg in getattr(e, "errors", [str(e)]):
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
