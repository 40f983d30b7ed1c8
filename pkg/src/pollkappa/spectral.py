"""Products of iid random nonnegative matrices.

Norms are entrywise sums (for nonnegative matrices, the sum of all entries).
Products are accumulated in rescaled form: after each factor the running
product is divided by its norm and the log of that norm is accumulated, so
chains of length 10^5 neither overflow nor underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from .env import EnvModel
from .errors import InconclusiveKappa, InstabilityError, TruncationCapError, ZeroProductError
from .policy import station_means


@dataclass(frozen=True, eq=False)
class MatrixEnsemble:
    mats: np.ndarray
    vecs: np.ndarray
    probs: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mats = np.array(self.mats, dtype=float)
        if mats.ndim == 1:  # scalar atoms
            mats = mats[:, None, None]
        vecs = np.array(self.vecs, dtype=float).reshape(len(mats), -1)
        probs = np.array(self.probs, dtype=float)
        object.__setattr__(self, "mats", mats)
        object.__setattr__(self, "vecs", vecs)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_cum", np.cumsum(probs))

    @classmethod
    def scalar(cls, atoms, probs, c=None) -> "MatrixEnsemble":
        c = np.ones(len(atoms)) if c is None else c
        return cls(np.asarray(atoms, dtype=float), np.asarray(c, dtype=float), probs)

    @classmethod
    def from_model(cls, model: EnvModel) -> "MatrixEnsemble":
        mats, vecs = [], []
        for k, state in enumerate(model.states):
            mp = station_means(state, model.final_product)
            if not mp.all_stable:
                raise InstabilityError(f"state {k}: unstable stations {mp.stable}")
            mats.append(mp.A)
            vecs.append(mp.C)
        return cls(np.array(mats), np.array(vecs), model.probs)

    @property
    def m(self) -> int:
        return self.mats.shape[1]

    @property
    def is_scalar(self) -> bool:
        return self.m == 1

    def sample_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = np.searchsorted(self._cum, rng.random(size), side="right")
        last = int(np.flatnonzero(self.probs > 0)[-1])
        return np.minimum(k, last)

    def validate(self) -> list[str]:
        problems = []
        if abs(self.probs.sum() - 1.0) > 1e-12 or (self.probs < 0).any():
            problems.append("probs must be nonnegative and sum to 1")
        if (self.mats < 0).any() or not np.isfinite(self.mats).all():
            problems.append("matrices must be finite and nonnegative")
        return problems

    def to_dict(self) -> dict:
        return {"A": self.mats.tolist(), "C": self.vecs.tolist(), "probs": self.probs.tolist()}


def log_product_norms(
    ens: MatrixEnsemble, n: int, replicas: int, rng: np.random.Generator
) -> np.ndarray:
    """``log ||A_{n-1}...A_0||`` for ``replicas`` independent chains."""
    logs = np.zeros(replicas)
    if ens.is_scalar:
        atoms = ens.mats[:, 0, 0]
        with np.errstate(divide="ignore"):
            log_atoms = np.log(atoms)
        for _ in range(n):
            logs += log_atoms[ens.sample_indices(rng, replicas)]
        dead = np.flatnonzero(np.isneginf(logs))
        if dead.size:
            raise ZeroProductError(int(dead[0]))
        return logs
    P = np.broadcast_to(np.eye(ens.m), (replicas, ens.m, ens.m)).copy()
    for _ in range(n):
        P = ens.mats[ens.sample_indices(rng, replicas)] @ P
        norms = P.sum(axis=(1, 2))
        dead = np.flatnonzero(norms <= 0)
        if dead.size:
            raise ZeroProductError(int(dead[0]))
        logs += np.log(norms)
        P /= norms[:, None, None]
    return logs


def estimate_lyapunov(
    ens: MatrixEnsemble, n: int, replicas: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Top Lyapunov exponent and its standard error over independent chains."""
    per_chain = log_product_norms(ens, n, replicas, rng) / n
    stderr = per_chain.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else math.nan
    return float(per_chain.mean()), float(stderr)


def exact_scalar_alpha(ens: MatrixEnsemble) -> float:
    atoms = ens.mats[:, 0, 0]
    live = ens.probs > 0
    if (atoms[live] == 0).any():
        return -math.inf
    return float(ens.probs[live] @ np.log(atoms[live]))


def exact_scalar_s(ens: MatrixEnsemble, x: float) -> float:
    return float(ens.probs @ ens.mats[:, 0, 0] ** x)


def _mc_s(logs: np.ndarray, x: float, n: int) -> tuple[float, float]:
    """Moment estimate ``(mean ||P||^x)^{1/n}`` with its delta-method stderr."""
    R = len(logs)
    w = x * logs
    log_mean = logsumexp(w) - math.log(R)
    s_hat = math.exp(log_mean / n)
    ratio = np.exp(w - w.max())
    rel = ratio.std(ddof=1) / (ratio.mean() * math.sqrt(R)) if R > 1 else math.nan
    return s_hat, s_hat * rel / n


def s_of_x(
    ens: MatrixEnsemble,
    x: float,
    n: int = 30,
    replicas: int = 10_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Estimate of ``s(x) = lim (E ||A_{n-1}...A_0||^x)^{1/n}``.

    Scalar ensembles are evaluated exactly (stderr 0). Otherwise the Monte
    Carlo estimate at finite ``n`` is biased low whenever ``||P||^x`` is heavy
    tailed, which gets worse as ``x`` grows; keep ``n`` moderate.
    """
    if ens.is_scalar:
        return exact_scalar_s(ens, x), 0.0
    rng = rng or np.random.default_rng()
    return _mc_s(log_product_norms(ens, n, replicas, rng), x, n)


@dataclass
class KappaResult:
    kappa: float  # 0.0 when supercritical, math.inf when s(x) <= 1 for all probed x
    alpha: float
    alpha_stderr: float
    s_values: list[tuple[float, float]]
    method: str
    kappa_ci: tuple[float, float] | None = None

    @property
    def regime(self) -> str:
        if self.kappa == 0.0:
            return "zero"
        if math.isinf(self.kappa):
            return "infinite"
        return "finite"

    def to_dict(self) -> dict:
        kappa = self.kappa if self.regime == "finite" else self.regime
        out = {
            "kappa": kappa,
            "regime": self.regime,
            "alpha": self.alpha,
            "alpha_stderr": self.alpha_stderr,
            "method": self.method,
        }
        if self.kappa_ci is not None:
            out["kappa_ci"] = [v if math.isfinite(v) else "infinite" for v in self.kappa_ci]
        out["s_values"] = [[x, s] for x, s in self.s_values]
        return out


def _bisect(g, lo: float, hi: float, tol: float, max_iter: int = 200) -> float:
    """Root of ``g`` with ``g(lo) <= 0 < g(hi)``; stops once ``|g| <= tol``."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = g(mid)
        if abs(val) <= tol or hi - lo <= 4 * np.finfo(float).eps * max(1.0, hi):
            return mid
        if val > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _bracket(g, x_max: float) -> tuple[float, float] | None:
    lo, hi = 0.0, 1.0
    while g(hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > x_max:
            return None
    return lo, hi


def solve_kappa(
    ens: MatrixEnsemble,
    tol: float = 1e-10,
    rng: np.random.Generator | None = None,
    x_max: float = 64.0,
    n: int = 30,
    replicas: int = 20_000,
    lyapunov_n: int = 1000,
    lyapunov_replicas: int = 200,
) -> KappaResult:
    """Tail index ``kappa = inf{x > 0 : s(x) > 1}`` by bisection on ``s(x) - 1``."""
    if ens.is_scalar:
        alpha = exact_scalar_alpha(ens)
        s = lambda x: exact_scalar_s(ens, x)  # noqa: E731
        if alpha > 0:
            return KappaResult(0.0, alpha, 0.0, _probe(s, 4.0), "exact-scalar")
        br = _bracket(lambda x: s(x) - 1.0, x_max)
        if br is None:
            return KappaResult(math.inf, alpha, 0.0, _probe(s, x_max), "exact-scalar")
        kappa = _bisect(lambda x: s(x) - 1.0, *br, tol=tol)
        return KappaResult(kappa, alpha, 0.0, _probe(s, 2 * kappa), "exact-scalar")

    rng = rng or np.random.default_rng()
    alpha, alpha_se = estimate_lyapunov(ens, lyapunov_n, lyapunov_replicas, rng)
    if alpha - 1.96 * alpha_se > 0:
        s_plain = lambda x: s_of_x(ens, x, n, replicas, rng)[0]  # noqa: E731
        return KappaResult(0.0, alpha, alpha_se, _probe(s_plain, 4.0, 9), "monte-carlo")
    # common random numbers: one set of chains serves every x
    logs = log_product_norms(ens, n, replicas, rng)

    def band(z):
        return lambda x: (lambda se: se[0] + z * se[1] - 1.0)(_mc_s(logs, x, n))

    s = lambda x: _mc_s(logs, x, n)[0]  # noqa: E731
    br = _bracket(band(0.0), x_max)
    if br is None:
        return KappaResult(math.inf, alpha, alpha_se, _probe(s, x_max), "monte-carlo")
    grid = np.linspace(br[1] / 64, br[1], 64)
    if all(band(-1.96)(x) <= 0 <= band(1.96)(x) for x in grid):
        raise InconclusiveKappa("s(x) confidence band straddles 1 over the whole bracket")
    kappa = _bisect(band(0.0), *br, tol=tol)
    upper = _bracket(band(1.96), x_max)
    ci_lo = _bisect(band(1.96), *upper, tol=tol) if upper else math.inf
    lower = _bracket(band(-1.96), x_max)
    ci_hi = _bisect(band(-1.96), *lower, tol=tol) if lower else math.inf
    return KappaResult(kappa, alpha, alpha_se, _probe(s, 2 * kappa), "monte-carlo", (ci_lo, ci_hi))


def _probe(s, x_hi: float, count: int = 17) -> list[tuple[float, float]]:
    return [(float(x), float(s(x))) for x in np.linspace(0.0, x_hi, count)[1:]]


# ---------------------------------------------------------------- Kesten checks


@dataclass
class ConditionResult:
    name: str
    status: str  # "pass" | "fail" | "not-checkable"
    detail: str


@dataclass
class ConditionReport:
    kappa0: float
    conditions: list[ConditionResult]

    def status(self, name: str) -> str:
        return next(c.status for c in self.conditions if c.name == name)

    def to_dict(self) -> dict:
        return {
            "kappa0": self.kappa0,
            "conditions": [{"name": c.name, "status": c.status, "detail": c.detail} for c in self.conditions],
        }


def commensurable(r: float, tol: float = 1e-9, max_den: int = 1000) -> bool:
    """Whether ``r`` is within ``tol`` of a rational with denominator <= ``max_den``."""
    approx = Fraction(r).limit_denominator(max_den)
    return abs(r - float(approx)) <= tol


def lattice_heuristic(atoms: np.ndarray, tol: float = 1e-9) -> tuple[bool, str]:
    """True when the logs of the positive atoms generate a dense subgroup of R.

    That happens iff some pair of nonzero logs has an irrational ratio; we
    call a ratio rational when a small-denominator fraction matches it.
    """
    logs = sorted({float(np.log(a)) for a in atoms if a > 0 and a != 1.0})
    if len(logs) < 2:
        return False, "fewer than two nontrivial atoms: the generated group is discrete"
    for a_idx in range(len(logs)):
        for b_idx in range(a_idx + 1, len(logs)):
            r = logs[a_idx] / logs[b_idx]
            if not commensurable(r, tol):
                return True, f"log ratio {r!r} is not commensurable"
    return False, "all log ratios are commensurable (lattice support)"


def check_kesten_conditions(ens: MatrixEnsemble, kappa0: float) -> ConditionReport:
    live = ens.probs > 0
    mats, probs = ens.mats[live], ens.probs[live]
    conds = [ConditionResult("moment", "pass", "finite support: E||A||^eps < inf for every eps")]

    zero_rows = [int(k) for k, A in zip(np.flatnonzero(live), mats) if (A.sum(axis=1) == 0).any()]
    if zero_rows:
        conds.append(ConditionResult("no_zero_rows", "fail", f"matrices with a zero row: {zero_rows}"))
    else:
        conds.append(ConditionResult("no_zero_rows", "pass", "every support matrix has positive row sums"))

    if ens.is_scalar:
        dense, why = lattice_heuristic(mats[:, 0, 0])
        conds.append(ConditionResult("non_lattice", "pass" if dense else "fail", why))
    else:
        conds.append(
            ConditionResult("non_lattice", "not-checkable", "density of the spectral-radius log group needs attestation for m > 1")
        )

    m = ens.m
    lhs = float(probs @ mats.sum(axis=2).min(axis=1) ** kappa0)
    rhs = m ** (kappa0 / 2)
    conds.append(
        ConditionResult(
            "row_sum_moment",
            "pass" if lhs >= rhs else "fail",
            f"E[min_i rowsum^k0] = {lhs!r} vs m^(k0/2) = {rhs!r}",
        )
    )
    conds.append(ConditionResult("log_moment", "pass", "finite support: E||A||^k0 log+||A|| < inf"))
    return ConditionReport(kappa0, conds)


# ---------------------------------------------------------------- perpetuity


@dataclass
class XiSample:
    values: np.ndarray  # (size, m)
    terms: np.ndarray
    error_bound: np.ndarray
    capped: np.ndarray


def sample_xi_batch(
    ens: MatrixEnsemble,
    rng: np.random.Generator,
    size: int,
    max_terms: int = 10_000,
    norm_floor: float = 1e-12,
) -> XiSample:
    """Truncated draws of ``sum_k A_0...A_{k-1} C_k``.

    A draw stops once the product norm falls below ``norm_floor``. The
    recorded error bound is ``||P_K|| max||C|| / (1 - E||A||)`` (infinite when
    ``E||A|| >= 1``), a bound on the expected remainder.
    """
    m = ens.m
    values = np.zeros((size, m))
    terms = np.full(size, max_terms)
    P = np.broadcast_to(np.eye(m), (size, m, m)).copy()
    norms = np.full(size, float(m))
    active = np.arange(size)
    for k in range(max_terms):
        idx = ens.sample_indices(rng, active.size)
        Pa = P[active]
        values[active] += np.einsum("sij,sj->si", Pa, ens.vecs[idx])
        Pa = Pa @ ens.mats[idx]
        P[active] = Pa
        norms[active] = Pa.sum(axis=(1, 2))
        done = norms[active] < norm_floor
        terms[active[done]] = k + 1
        active = active[~done]
        if active.size == 0:
            break
    mean_norm = float(ens.probs @ ens.mats.sum(axis=(1, 2)))
    c_max = float(ens.vecs.sum(axis=1).max())
    tail = 1.0 / (1.0 - mean_norm) if mean_norm < 1 else math.inf
    with np.errstate(invalid="ignore"):
        bound = norms * c_max * tail
    capped = np.zeros(size, dtype=bool)
    capped[active] = True
    return XiSample(values, terms, bound, capped)


def sample_xi_series(
    ens: MatrixEnsemble,
    rng: np.random.Generator,
    max_terms: int = 10_000,
    norm_floor: float = 1e-12,
) -> tuple[np.ndarray, float]:
    """One draw of the series and its remainder bound."""
    s = sample_xi_batch(ens, rng, 1, max_terms, norm_floor)
    if s.capped[0]:
        raise TruncationCapError(f"{max_terms} terms summed before the product norm fell below {norm_floor}")
    return s.values[0], float(s.error_bound[0])


def s_probe_grid(
    ens: MatrixEnsemble,
    xs,
    n: int = 30,
    replicas: int = 20_000,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, float, float]]:
    """``(x, s_hat, stderr)`` on a grid; one set of chains serves every ``x``."""
    if ens.is_scalar:
        return [(float(x), exact_scalar_s(ens, x), 0.0) for x in xs]
    rng = rng or np.random.default_rng()
    logs = log_product_norms(ens, n, replicas, rng)
    return [(float(x), *_mc_s(logs, x, n)) for x in xs]
