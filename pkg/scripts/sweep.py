"""Load or RTT-ratio sweep of a built-in scenario for several CC/LB variants.

    python scripts/sweep.py realistic-load-40 --axis load --values 0.2,0.4,0.6,0.8 --desk
    python scripts/sweep.py rtt-ratio-sweep --axis rtt_ratio --values 8,32,128,512 --desk
"""

import argparse

from unosim.cli import sweep
from unosim.scenarios import builtin

VARIANTS = {"uno+unolb": ("uno", "unolb", True), "uno+ecmp": ("uno", "ecmp", False),
            "gemini+ecmp": ("gemini", "ecmp", False), "dctcp+ecmp": ("dctcp", "ecmp", False)}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario")
    ap.add_argument("--axis", required=True, choices=["load", "rtt_ratio", "seed"])
    ap.add_argument("--values", required=True)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--desk", action="store_true")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/sweep")
    args = ap.parse_args()
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    for name in args.variants:
        cc, lb, ec = VARIANTS[name]
        cfg = builtin(args.scenario, desk=args.desk, transport={"cc": cc}, reliability={"lb": lb, "ec": ec})
        path = sweep(cfg, args.axis, values, f"{args.out}/{name}", args.jobs)
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
