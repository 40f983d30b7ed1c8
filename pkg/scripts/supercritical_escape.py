#!/usr/bin/env python3
"""Population growth of busy periods when the Lyapunov exponent is positive.

    python scripts/supercritical_escape.py --replicas 10000
"""

import argparse
from pathlib import Path

import numpy as np

from pollkappa.cli import ExperimentSpec, run_busy
from pollkappa.env import load_env_model

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description="cap hits and growth for a supercritical model")
    p.add_argument("--config", default=str(ROOT / "configs" / "supercritical.json"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--replicas", type=int, default=10_000)
    p.add_argument("--max-generations", type=int, default=200)
    p.add_argument("--max-population", type=int, default=10_000)
    a = p.parse_args()
    model = load_env_model(a.config)
    spec = ExperimentSpec("busy", a.config, a.seed, a.replicas, max_generations=a.max_generations,
                          max_population=a.max_population)
    recs = run_busy(spec, model, keep_snapshots=True)  # (phi, cycles, capped, snapshots)
    capped = [(cyc, snaps) for _, cyc, hit, snaps in recs if hit]
    print(f"capped {len(capped)}/{len(recs)}")
    if capped:
        at_cap = [sum(s[-1]) for _, s in capped]
        # generation n is snapshot n - 1
        gen10 = [sum(s[9]) for _, s in capped if len(s) > 9]
        print(f"median |z| at cap {np.median(at_cap):.0f}; at generation 10 {np.median(gen10):.0f}")
        print(f"median generations to cap {np.median([c for c, _ in capped]):.0f}")


if __name__ == "__main__":
    main()
