"""Inter-DC incast with small RPCs, phantom queues on vs off: bottleneck occupancy and RPC FCT.

    python scripts/phantom.py --seeds 1 2 3
"""

import argparse

from unosim.experiments import bottleneck_occupancy, phantom_config
from unosim.metrics import fct_stats, records_from_result
from unosim.network import simulate

PORT = "e1_0_0->h1_0_0_0"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", nargs="+", type=int, default=[1])
    args = ap.parse_args()
    print("seed phantom occ_bytes rpc_mean_us rpc_p99_us")
    for seed in args.seeds:
        for ph in (True, False):
            res = simulate(phantom_config(ph, seed))
            recs = records_from_result(res)
            rpc = [r for r, f in zip(recs, res.flows) if f.tag == "rpc"]
            st = fct_stats(rpc)
            occ = bottleneck_occupancy(res, PORT, 15_000_000, res.end_time)
            print(f"{seed:4d} {str(ph):7s} {occ:10.0f} {st.mean / 1e3:11.1f} {st.p99 / 1e3:10.1f}")


if __name__ == "__main__":
    main()
