"""Border-link failure: per-variant FCT distribution over seeds (5 MiB inter-DC flows).

    python scripts/failure.py --seeds 20 --out results/failure.csv
"""

import argparse
import csv
import statistics

from unosim.experiments import failure_fcts

VARIANTS = {"unolb+ec": ("unolb", True), "unolb": ("unolb", False), "spray": ("spray", False),
            "plb": ("plb", False), "ecmp": ("ecmp", False)}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--out", help="optional CSV of every FCT")
    args = ap.parse_args()
    rows = []
    for name in args.variants:
        lb, ec = VARIANTS[name]
        fcts = failure_fcts(lb, ec, range(1, args.seeds + 1))
        rows += [(name, f) for f in fcts]
        print(f"{name:10s} median={statistics.median(fcts) / 1e6:8.3f} ms  max={max(fcts) / 1e6:8.3f} ms")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "fct_ns"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
