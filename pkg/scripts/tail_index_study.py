#!/usr/bin/env python3
"""Busy-period work tail against the Kesten index on the non-lattice scalar model.

Runs kappa, busy, tailfit and xi-tail through the CLI into an output
directory and prints the Hill estimates next to kappa.

    python scripts/tail_index_study.py --replicas 500000 --out runs/tail
"""

import argparse
import json
from pathlib import Path

from pollkappa.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        raise SystemExit(code)


def parse():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / "scalar_nonlattice.json"))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--replicas", type=int, default=200_000)
    p.add_argument("--xi-replicas", type=int, default=1_000_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/tail")
    return p.parse_args()


def main_():
    a = parse()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    common = ("--config", a.config, "--seed", a.seed, "--workers", a.workers)
    run("kappa", *common, "--out", out / "kappa.json")
    kappa = json.loads((out / "kappa.json").read_text())["kappa"]
    run("busy", *common, "--replicas", a.replicas, "--out", out / "busy.csv")
    run("tailfit", "--input", out / "busy.csv", "--moments", f"{0.5 * kappa!r},{1.5 * kappa!r}",
        "--out", out / "tailfit.json", "--curve", out / "curve.csv")
    run("xi-tail", *common, "--replicas", a.xi_replicas, "--out", out / "xi.json")
    tail = json.loads((out / "tailfit.json").read_text())
    xi = json.loads((out / "xi.json").read_text())
    print(f"kappa            {kappa:.6f}")
    print(f"Hill (Phi)       {tail['phi']['hill_index']:.4f}  ratio {tail['phi']['hill_index'] / kappa:.3f}")
    for k, v in tail["phi"]["k_sweep"].items():
        print(f"  k={k:<8}      {v:.4f}")
    for d, f in xi["directions"].items():
        print(f"Hill (Xi, {d:<7}) {f['hill_index']:.4f}  ratio {f['hill_index'] / kappa:.3f}")
    print("moment scan     ", tail["moment_scan"])


if __name__ == "__main__":
    main_()
