"""Mixed intra/inter incast: sliding-window Jain index over time for each CC.

    python scripts/fairness.py --size-mib 64 --out results/fairness
"""

import argparse
import csv
from pathlib import Path

from unosim.experiments import MiB, jain_convergence, mixed_incast_config
from unosim.metrics import write_outputs
from unosim.network import simulate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cc", nargs="+", default=["uno", "gemini", "dctcp"])
    ap.add_argument("--size-mib", type=int, default=64)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="results/fairness")
    args = ap.parse_args()
    out = Path(args.out)
    for cc in args.cc:
        cfg = mixed_incast_config(cc, args.size_mib * MiB, args.seed).replace(run={"rate_trace": True})
        res = simulate(cfg)
        write_outputs(res, out / cc)
        conv = jain_convergence(res)
        with open(out / cc / "jain.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ns", "jain"])
            w.writerows((t, "" if v is None else f"{v:.6f}") for t, v in conv["series"])
        t90 = conv["t90_rtts"]
        print(f"{cc:8s} rtts_to_0.9={'never' if t90 is None else f'{t90:.2f}'} held={conv['held']}")


if __name__ == "__main__":
    main()
