#!/usr/bin/env python3
"""How well a single exponential describes P(tau > n) for the busy-period length.

Simulates busy periods, then fits log P(tau > n) = c - r n over several
windows and prints the rate together with the residual spread. A window
that starts late fits better because the log survival is convex early on.

    python scripts/survival_curvature.py --replicas 100000
"""

import argparse
from pathlib import Path

import numpy as np

from pollkappa.cli import ExperimentSpec, run_busy
from pollkappa.env import load_env_model
from pollkappa.errors import InsufficientRangeError
from pollkappa.tails import survival_fit

ROOT = Path(__file__).resolve().parents[1]
WINDOWS = ((5, 25), (8, 25), (10, 25), (10, 40), (15, 40))


def main():
    p = argparse.ArgumentParser(description="exponential fits to the busy-period length survival")
    p.add_argument("--config", default=str(ROOT / "configs" / "ref_mixed.json"))
    p.add_argument("--station", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--replicas", type=int, default=100_000)
    a = p.parse_args()
    model = load_env_model(a.config)
    spec = ExperimentSpec("busy", a.config, a.seed, a.replicas, station=a.station)
    taus = np.array([cyc for _, cyc, capped, _ in run_busy(spec, model) if not capped])
    print(f"{'window':>10} {'rate':>8} {'max|res|':>9} {'rms':>7} {'levels':>7}")
    for lo, hi in WINDOWS:
        try:
            f = survival_fit(taus, (lo, hi))
        except InsufficientRangeError as exc:
            print(f"{lo:>4}-{hi:<5} {exc}")
            continue
        res = f.residuals
        print(f"{lo:>4}-{hi:<5} {f.rate:8.4f} {np.abs(res).max():9.4f} {np.sqrt(np.mean(res**2)):7.4f} {len(res):7d}")


if __name__ == "__main__":
    main()
