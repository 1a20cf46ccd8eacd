"""Run the acceptance checks outside pytest and print one line per criterion.

    python scripts/run_acceptance.py            # all nine
    python scripts/run_acceptance.py 1 4 9      # a subset by number
"""

import argparse
import sys
import time

from unosim.experiments import ALL_CHECKS


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("criteria", nargs="*", type=int, help="criterion numbers (default: all)")
    args = ap.parse_args()
    picked = args.criteria or range(1, len(ALL_CHECKS) + 1)
    failed = 0
    for n in picked:
        t0 = time.time()
        check = ALL_CHECKS[n - 1]()
        print(f"{check.line()}  [{time.time() - t0:.1f}s]", flush=True)
        failed += not check.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
