#!/usr/bin/env python3
"""Power of the prefix-mean moment scan on exact Pareto samples.

For a Pareto(kappa) sample of the given size, counts how often the scan
calls x = 0.5 kappa stable and x = 1.5 kappa growing.

    python scripts/moment_scan_power.py --kappa 1.2 --size 500000 --reps 200
"""

import argparse

import numpy as np

from pollkappa.tails import moment_scan


def main():
    p = argparse.ArgumentParser(description="moment scan hit rates on Pareto samples")
    p.add_argument("--kappa", type=float, default=1.2)
    p.add_argument("--size", type=int, default=500_000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    rng = np.random.default_rng(a.seed)
    lo, hi = 0.5 * a.kappa, 1.5 * a.kappa
    ok_lo = ok_hi = 0
    for _ in range(a.reps):
        x = rng.pareto(a.kappa, a.size) + 1.0
        scan = moment_scan(x, (lo, hi))
        ok_lo += scan[lo] == "stable"
        ok_hi += scan[hi] == "growing"
    print(f"x={lo:.3f} stable  {ok_lo}/{a.reps}")
    print(f"x={hi:.3f} growing {ok_hi}/{a.reps}")


if __name__ == "__main__":
    main()
