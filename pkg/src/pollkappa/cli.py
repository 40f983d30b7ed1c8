"""Command-line experiment runner.

Every command seeds its replicas from ``(seed, command tag, replica)``, so
output files are byte-identical for a fixed seed whatever ``--workers`` is.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .branching import Caps, simulate_busy_period_branching
from .env import ConfigError, EnvModel, load_env_model
from .errors import InconclusiveKappa, InsufficientRangeError, PollKappaError
from .policy import DEFAULT_BUDGET, cycle_offspring_batch, station_batch, station_means
from .polling import PollingCaps, simulate_busy_period_events
from .report import emit_report, file_sha256
from .spectral import (
    MatrixEnsemble,
    check_kesten_conditions,
    estimate_lyapunov,
    exact_scalar_alpha,
    s_probe_grid,
    sample_xi_batch,
    solve_kappa,
)
from .streams import map_replicas, replica_stream
from .tails import empirical_distribution, fit_tail, moment_scan, survival_fit, tv_distance

COMMANDS = ("validate", "means", "lyapunov", "kappa", "conditions", "busy", "equivalence", "tailfit", "xi-tail")
BUSY_HEADER = ("replica", "station_J", "phi_total", "tau", "capped")
BLOCK = 50_000  # draws per replica stream for vectorised commands
OVERFLOW_FILL = 10**9  # any entry above --support-max lands in the overflow cell


@dataclass
class ExperimentSpec:
    command: str
    config_path: str | None = None
    seed: int = 0
    replicas: int | None = None
    station: int = 1  # 1-based on the command line
    cycles: int = 3
    out: str | None = None
    tol: float = 1e-10
    k_frac: float = 0.01
    max_generations: int = 10_000
    max_cycles: int = 10_000
    max_population: int = 10_000_000
    workers: int = 1
    engine: str = "branching"
    snapshots: str | None = None
    input: str | None = None
    curve: str | None = None
    probe_out: str | None = None
    chain_length: int = 1000
    s_chain: int = 30
    kappa0: float | None = None
    moments: str | None = None
    tau_range: str | None = None
    support_max: int = 30

    def caps(self) -> dict:
        return {
            "max_generations": self.max_generations,
            "max_cycles": self.max_cycles,
            "max_population": self.max_population,
        }


def _provenance(spec: ExperimentSpec, replicas) -> dict:
    out = {
        "command": spec.command,
        "version": __version__,
        "seed": spec.seed,
        "replicas": replicas,
        "caps": spec.caps(),
        "config": spec.config_path,
        "config_sha256": file_sha256(spec.config_path) if spec.config_path else None,
    }
    if spec.input:
        out["input"] = spec.input
        out["input_sha256"] = file_sha256(spec.input)
    return out


def _write(spec: ExperimentSpec, payload: dict, replicas=None):
    text = emit_report({**_provenance(spec, replicas), **payload}, spec.out)
    if spec.out is None:
        sys.stdout.write(text)


def _ensemble(model: EnvModel) -> MatrixEnsemble:
    return MatrixEnsemble.from_model(model)


def _blocks(total: int) -> list[int]:
    return [min(BLOCK, total - lo) for lo in range(0, total, BLOCK)]


# ---------------------------------------------------------------- means


def _means_block(rng, r, state, i, level, sizes, final_product):
    size = sizes[r]
    sampler = station_batch if level == "station" else cycle_offspring_batch
    theta, phi = sampler(i, state, rng, size, final_product, DEFAULT_BUDGET)
    theta = theta.astype(float)
    return theta.sum(0), (theta**2).sum(0), float(phi.sum()), float((phi**2).sum())


def _empirical_row(model, k, i, level, n, spec):
    sizes = _blocks(n)
    parts = map_replicas(
        _means_block,
        len(sizes),
        spec.seed,
        f"means:{k}:{i}:{level}",
        args=(model.states[k], i, level, sizes, model.final_product),
        workers=spec.workers,
    )
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    p1 = sum(p[2] for p in parts)
    p2 = sum(p[3] for p in parts)
    mean = s1 / n
    se = np.sqrt(np.maximum(s2 / n - mean**2, 0.0) / (n - 1))
    pm = p1 / n
    pse = math.sqrt(max(p2 / n - pm**2, 0.0) / (n - 1))
    return mean, se, pm, pse


def _zscores(emp, se, exact):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (emp - exact) / np.where(se > 0, se, 1.0), np.where(emp == exact, 0.0, np.inf))
    return z


def cmd_means(spec: ExperimentSpec, model: EnvModel) -> int:
    states = []
    n = spec.replicas or 0
    for k, state in enumerate(model.states):
        mp = station_means(state, model.final_product)
        entry = {"index": k, "prob": float(model.probs[k]), **mp.to_dict()}
        if n > 1:
            rows = []
            for i in range(model.m):
                if not mp.stable[i]:
                    continue
                for level, row_mat, row_vec in (("station", mp.H, mp.c), ("cycle", mp.A, mp.C)):
                    if row_mat is None:
                        continue
                    mean, se, pm, pse = _empirical_row(model, k, i, level, n, spec)
                    z = _zscores(mean, se, row_mat[i])
                    zp = _zscores(np.array([pm]), np.array([pse]), np.array([row_vec[i]]))[0]
                    rows.append(
                        {
                            "station": i + 1,
                            "level": level,
                            "exact_offspring": row_mat[i].tolist(),
                            "empirical_offspring": mean.tolist(),
                            "offspring_se": se.tolist(),
                            "offspring_z": z.tolist(),
                            "exact_phi": float(row_vec[i]),
                            "empirical_phi": pm,
                            "phi_se": pse,
                            "phi_z": float(zp),
                        }
                    )
            entry["empirical"] = rows
        states.append(entry)
    _write(spec, {"final_product": model.final_product, "states": states}, n)
    return 0


# ---------------------------------------------------------------- spectral


def cmd_lyapunov(spec: ExperimentSpec, model: EnvModel) -> int:
    ens = _ensemble(model)
    replicas = spec.replicas or 200
    alpha, se = estimate_lyapunov(ens, spec.chain_length, replicas, replica_stream(spec.seed, "lyapunov", 0))
    payload = {"alpha": alpha, "alpha_stderr": se, "chain_length": spec.chain_length}
    if ens.is_scalar:
        exact = exact_scalar_alpha(ens)
        payload["alpha_exact"] = exact
        payload["z_score"] = (alpha - exact) / se if se > 0 else (0.0 if alpha == exact else math.inf)
    _write(spec, payload, replicas)
    return 0


def _solve(spec: ExperimentSpec, ens: MatrixEnsemble, tag: str, replicas: int):
    return solve_kappa(
        ens,
        tol=spec.tol,
        rng=replica_stream(spec.seed, tag, 0),
        n=spec.s_chain,
        replicas=replicas,
        lyapunov_n=spec.chain_length,
    )


def cmd_kappa(spec: ExperimentSpec, model: EnvModel) -> int:
    ens = _ensemble(model)
    replicas = spec.replicas or 20_000
    res = _solve(spec, ens, "kappa", replicas)
    x_hi = 2 * res.kappa if res.regime == "finite" else (4.0 if res.regime == "zero" else 64.0)
    xs = np.linspace(0.0, x_hi, 33)[1:]
    probe = s_probe_grid(ens, xs, spec.s_chain, replicas, replica_stream(spec.seed, "kappa:probe", 0))
    _write(spec, res.to_dict(), replicas)
    probe_path = spec.probe_out or (str(Path(spec.out).with_suffix("")) + "_s.csv" if spec.out else None)
    if probe_path:
        emit_report(probe, probe_path, "csv", header=("x", "s_hat", "stderr"))
    return 0


def cmd_conditions(spec: ExperimentSpec, model: EnvModel) -> int:
    ens = _ensemble(model)
    source = "flag"
    kappa0 = spec.kappa0
    if kappa0 is None:
        try:
            res = _solve(spec, ens, "conditions", spec.replicas or 20_000)
            kappa0, source = (res.kappa, "solve_kappa") if res.regime == "finite" else (1.0, f"default (kappa {res.regime})")
        except InconclusiveKappa:
            kappa0, source = 1.0, "default (kappa inconclusive)"
    report = check_kesten_conditions(ens, kappa0)
    _write(spec, {"kappa0_source": source, **report.to_dict()}, spec.replicas)
    return 0


# ---------------------------------------------------------------- busy periods


def _busy_replica(rng, r, J, model, engine, caps, keep_snapshots):
    if engine == "polling":
        rec = simulate_busy_period_events(J, model, rng, PollingCaps(caps["max_cycles"], caps["max_population"]))
    else:
        rec = simulate_busy_period_branching(J, model, rng, Caps(caps["max_generations"], caps["max_population"]))
    return rec.phi_total, rec.cycles, rec.capped, (rec.snapshots if keep_snapshots else None)


def run_busy(spec: ExperimentSpec, model: EnvModel, keep_snapshots: bool = False, engine: str | None = None, tag: str = "busy"):
    engine = engine or spec.engine
    J = spec.station - 1
    return map_replicas(
        _busy_replica,
        spec.replicas,
        spec.seed,
        f"{tag}:{engine}",
        args=(J, model, engine, spec.caps(), keep_snapshots),
        workers=spec.workers,
    )


def busy_rows(records, station: int):
    for r, (phi, cycles, capped, _) in enumerate(records):
        if capped:
            yield r, station, "", "", 1
        else:
            yield r, station, float(phi), cycles, 0


def cmd_busy(spec: ExperimentSpec, model: EnvModel) -> int:
    if not spec.replicas:
        raise ValueError("busy needs --replicas")
    records = run_busy(spec, model, keep_snapshots=spec.snapshots is not None)
    text = emit_report(busy_rows(records, spec.station), spec.out, "csv", header=BUSY_HEADER)
    if spec.out is None:
        sys.stdout.write(text)
    if spec.snapshots:
        header = ("replica", "cycle", *(f"q_{j + 1}" for j in range(model.m)))
        rows = ((r, c, *q) for r, rec in enumerate(records) for c, q in enumerate(rec[3]))
        emit_report(rows, spec.snapshots, "csv", header=header)
    return 0


def _cycle_states(snapshots, K: int, m: int, capped: bool):
    """Queue vectors at the ends of cycles 0..K-1; missing cycles are zero after
    extinction and overflow after a population cap."""
    out = list(snapshots[:K])
    fill = (0,) * m if not capped else (OVERFLOW_FILL,) * m
    out += [fill] * (K - len(out))
    return out


def cmd_equivalence(spec: ExperimentSpec, model: EnvModel) -> int:
    K = spec.cycles
    capped_spec = ExperimentSpec(**{**asdict(spec), "max_cycles": min(K, spec.max_cycles), "max_generations": min(K, spec.max_generations)})
    sides = {}
    for engine in ("polling", "branching"):
        recs = run_busy(capped_spec, model, keep_snapshots=True, engine=engine, tag="equivalence")
        # a run stopped by the cycle cap has all K snapshots, so only short capped runs overflow
        sides[engine] = [_cycle_states(s, K, model.m, cap and len(s) < K) for _, _, cap, s in recs]
    cycles = []
    for n in range(1, K + 1):
        p = empirical_distribution((v[n - 1] for v in sides["polling"]), spec.support_max)
        q = empirical_distribution((v[n - 1] for v in sides["branching"]), spec.support_max)
        mp = np.mean([v[n - 1] for v in sides["polling"]], axis=0)
        mb = np.mean([v[n - 1] for v in sides["branching"]], axis=0)
        cycles.append({"cycle": n, "tv": tv_distance(p, q), "mean_polling": mp.tolist(), "mean_branching": mb.tolist()})
    payload = {"station_J": spec.station, "support_max": spec.support_max, "cycles": cycles}
    _write(spec, payload, spec.replicas)
    return 0


# ---------------------------------------------------------------- tails


def read_busy_csv(path: str):
    phis, taus, capped = [], [], 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["capped"] == "1":
                capped += 1
                continue
            phis.append(float(row["phi_total"]))
            taus.append(int(row["tau"]))
    return np.array(phis), np.array(taus, dtype=np.int64), capped


def survival_curve(samples, points: int = 400):
    """Empirical ``(y, P(X > y))`` at log-spaced ranks from the top."""
    x = np.sort(np.asarray(samples, float))[::-1]
    n = x.size
    ranks = np.unique(np.geomspace(1, n, points).astype(int))
    return [(float(x[k - 1]), k / n) for k in ranks]


def cmd_tailfit(spec: ExperimentSpec, model) -> int:
    if not spec.input:
        raise ValueError("tailfit needs --input")
    phis, taus, capped = read_busy_csv(spec.input)
    report = fit_tail(phis, spec.k_frac, capped)
    payload = {"phi": report.to_dict()}
    try:
        n_range = tuple(int(v) for v in spec.tau_range.split(",")) if spec.tau_range else None
        sf = survival_fit(taus, n_range)
        res = sf.residuals
        payload["tau_survival"] = {
            "rate": sf.rate,
            "intercept": sf.intercept,
            "n_min": int(sf.n_values.min()),
            "n_max": int(sf.n_values.max()),
            "max_abs_residual": float(np.abs(res).max()),
            "max_residual": float(res.max()),
            "rms_residual": float(np.sqrt(np.mean(res**2))),
            "envelope_holds": bool((sf.log_survival <= np.log(sf.upper_bound(sf.n_values)) + 1e-12).all()),
        }
    except InsufficientRangeError as exc:
        payload["tau_survival"] = {"error": str(exc)}
    if spec.moments:
        grid = [float(v) for v in spec.moments.split(",")]
        payload["moment_scan"] = {repr(x): s for x, s in moment_scan(phis, grid).items()}
    _write(spec, payload, int(phis.size + capped))
    if spec.curve:
        emit_report(survival_curve(phis), spec.curve, "csv", header=("y", "P_hat"))
    return 0


def _xi_block(rng, r, ens, sizes):
    s = sample_xi_batch(ens, rng, sizes[r])
    return s.values, s.capped


def sample_xi(spec: ExperimentSpec, ens: MatrixEnsemble):
    sizes = _blocks(spec.replicas)
    parts = map_replicas(_xi_block, len(sizes), spec.seed, "xi-tail", args=(ens, sizes), workers=spec.workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def cmd_xi_tail(spec: ExperimentSpec, model: EnvModel) -> int:
    if not spec.replicas:
        raise ValueError("xi-tail needs --replicas")
    ens = _ensemble(model)
    values, capped = sample_xi(spec, ens)
    kept = values[~capped]
    m = ens.m
    directions = {"e1": np.eye(m)[0], "uniform": np.ones(m) / math.sqrt(m)}
    fits = {}
    for name, u in directions.items():
        fits[name] = {"u": u.tolist(), **fit_tail(kept @ u, spec.k_frac, int(capped.sum())).to_dict()}
    try:
        kres = _solve(spec, ens, "xi-tail:kappa", 20_000).to_dict()
    except InconclusiveKappa as exc:
        kres = {"error": str(exc)}
    _write(spec, {"kappa": kres, "capped": int(capped.sum()), "directions": fits}, spec.replicas)
    return 0


# ---------------------------------------------------------------- entry points


def cmd_validate(spec: ExperimentSpec, model: EnvModel) -> int:
    payload = {"valid": True, "m": model.m, "states": len(model.states), "final_product": model.final_product}
    if spec.out:
        _write(spec, payload)
    else:
        print(f"{spec.config_path}: valid (m={model.m}, {len(model.states)} states)")
    return 0


HANDLERS = {
    "validate": cmd_validate,
    "means": cmd_means,
    "lyapunov": cmd_lyapunov,
    "kappa": cmd_kappa,
    "conditions": cmd_conditions,
    "busy": cmd_busy,
    "equivalence": cmd_equivalence,
    "tailfit": cmd_tailfit,
    "xi-tail": cmd_xi_tail,
}


def run_experiment(spec: ExperimentSpec) -> int:
    """Dispatch one command. Exit status: 0 ok, 1 invalid config, 2 runtime error."""
    try:
        model = None
        if spec.config_path is not None:
            model = load_env_model(spec.config_path)
        elif spec.command != "tailfit":
            print("error: --config is required", file=sys.stderr)
            return 1
        return HANDLERS[spec.command](spec, model)
    except ConfigError as exc:
        print(f"invalid config {spec.config_path}:", file=sys.stderr)
        print(str(exc.report), file=sys.stderr)
        return 1
    except (PollKappaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pollkappa", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", dest="config_path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replicas", type=int)
    p.add_argument("--station", type=int, default=1, help="arrival station J (1-based)")
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--out")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--k-frac", type=float, default=0.01)
    p.add_argument("--max-generations", type=int, default=10_000)
    p.add_argument("--max-cycles", type=int, default=10_000)
    p.add_argument("--max-population", type=int, default=10_000_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--engine", choices=("branching", "polling"), default="branching")
    p.add_argument("--snapshots", help="busy: also dump end-of-cycle queue lengths here")
    p.add_argument("--input", help="tailfit: busy-period CSV to read")
    p.add_argument("--curve", help="tailfit: write the empirical survival curve here")
    p.add_argument("--probe-out", help="kappa: s(x) probe CSV (default: next to --out)")
    p.add_argument("--chain-length", type=int, default=1000, help="Lyapunov chain length")
    p.add_argument("--s-chain", type=int, default=30, help="chain length for Monte Carlo s(x)")
    p.add_argument("--kappa0", type=float)
    p.add_argument("--moments", help="tailfit: comma-separated exponents for the moment scan")
    p.add_argument("--tau-range", help="tailfit: LO,HI range of n for the survival fit of tau")
    p.add_argument("--support-max", type=int, default=30)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run_experiment(ExperimentSpec(**vars(args)))


if __name__ == "__main__":
    sys.exit(main())
