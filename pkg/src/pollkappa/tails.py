"""Tail and moment diagnostics for simulated samples."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateSampleError, InsufficientPointsError, InsufficientRangeError

CAPPED_WARN_FRACTION = 1e-3


def hill_estimator(samples, k: int) -> tuple[float, tuple[float, float]]:
    """Hill tail index from the ``k`` largest order statistics, with a 95% CI."""
    x = np.asarray(samples, dtype=float)
    if k < 10 or k >= x.size:
        raise ValueError(f"need 10 <= k < n, got k={k}, n={x.size}")
    if (x <= 0).any():
        raise ValueError("Hill estimator needs positive samples")
    top = -np.partition(-x, k)[: k + 1]
    top.sort()
    top = top[::-1]
    logs = np.log(top[:k] / top[k])
    total = logs.sum()
    if total <= 0:
        raise DegenerateSampleError(f"the top {k + 1} order statistics are all equal")
    index = k / total
    half = 1.96 / math.sqrt(k)
    return float(index), (float(index * (1 - half)), float(index * (1 + half)))


@dataclass
class LogLogFit:
    index: float
    lower_half_index: float
    upper_half_index: float
    points: int

    @property
    def non_power_law(self) -> bool:
        a, b = self.lower_half_index, self.upper_half_index
        return abs(a - b) > 0.25 * min(abs(a), abs(b))


def _slope(lx, ly) -> float:
    if np.ptp(lx) == 0:
        raise InsufficientPointsError("all points share the same abscissa")
    return float(np.polyfit(lx, ly, 1)[0])


def loglog_tail_fit(samples, quantile_range: tuple[float, float] = (0.9, 0.999)) -> LogLogFit:
    """Least-squares slope of the empirical log survival against log y.

    The fit uses the order statistics whose empirical levels lie in
    ``quantile_range``; ``index`` is minus the slope. Separate fits on the
    lower and upper halves of those points feed the non-power-law flag.
    """
    q_lo, q_hi = quantile_range
    if not 0.5 <= q_lo < q_hi < 1:
        raise ValueError("need 0.5 <= q_lo < q_hi < 1")
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    levels = np.arange(1, n + 1) / n
    keep = (levels >= q_lo) & (levels <= q_hi) & (x > 0)
    if keep.sum() < 100:
        raise InsufficientPointsError(f"only {int(keep.sum())} points in the quantile range")
    ly = np.log1p(-levels[keep] + 0.5 / n)  # survival at each order statistic, continuity-corrected
    lx = np.log(x[keep])
    half = len(lx) // 2
    return LogLogFit(
        index=-_slope(lx, ly),
        lower_half_index=-_slope(lx[:half], ly[:half]),
        upper_half_index=-_slope(lx[half:], ly[half:]),
        points=int(keep.sum()),
    )


@dataclass
class SurvivalFit:
    rate: float
    intercept: float
    n_values: np.ndarray
    log_survival: np.ndarray

    @property
    def residuals(self) -> np.ndarray:
        return self.log_survival - (self.intercept - self.rate * self.n_values)

    def upper_bound(self, n) -> np.ndarray:
        """Exponential envelope ``exp(intercept + max residual - rate * n)``."""
        return np.exp(self.intercept + self.residuals.max() - self.rate * np.asarray(n))


def survival_fit(taus, n_range: tuple[int, int] | None = None) -> SurvivalFit:
    """Fit ``log P(tau > n) = intercept - rate * n``.

    Only ``n`` with at least 100 exceedances enter, optionally restricted to
    ``n_range`` (inclusive).
    """
    t = np.asarray(taus, dtype=np.int64)
    N = t.size
    counts = np.bincount(t)
    exceed = N - np.cumsum(counts)  # exceed[n] = #{tau > n}
    n_vals = np.arange(exceed.size)
    ok = exceed >= 100
    if n_range is not None:
        ok &= (n_vals >= n_range[0]) & (n_vals <= n_range[1])
    if ok.sum() < 3:
        raise InsufficientRangeError(f"only {int(ok.sum())} levels with enough exceedances")
    n_vals = n_vals[ok]
    log_s = np.log(exceed[ok] / N)
    slope, intercept = np.polyfit(n_vals, log_s, 1)
    return SurvivalFit(float(-slope), float(intercept), n_vals, log_s)


PREFIX_FRACTIONS = tuple(np.round(np.arange(1, 11) / 10, 1))


def moment_scan(samples, x_grid: Iterable[float]) -> dict[float, str]:
    """Classify ``E X^x`` as ``stable`` or ``growing`` from running prefix means.

    Means over the first 10%, 20%, ..., 100% of the sample are compared; if
    the last three differ by less than 10% of the full-sample mean the moment
    is called stable.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    ends = [max(1, int(round(f * n))) for f in PREFIX_FRACTIONS]
    out = {}
    for p in x_grid:
        w = np.cumsum(x**p)
        means = np.array([w[e - 1] / e for e in ends])
        last = means[-3:]
        spread = (last.max() - last.min()) / means[-1] if means[-1] > 0 else 0.0
        out[float(p)] = "stable" if spread < 0.1 else "growing"
    return out


OVERFLOW = "overflow"


def empirical_distribution(vectors: Iterable[Sequence[int]], support_max: int) -> dict:
    """Frequencies of integer vectors; any vector with an entry above
    ``support_max`` is pooled into the ``OVERFLOW`` cell."""
    counts: Counter = Counter()
    total = 0
    for v in vectors:
        key = tuple(int(a) for a in v)
        counts[OVERFLOW if max(key, default=0) > support_max else key] += 1
        total += 1
    return {k: c / total for k, c in counts.items()}


def tv_distance(p, q) -> float:
    """Total variation distance between two distributions on a common support.

    Accepts mappings (cell -> mass) or equal-length probability arrays.
    """
    if isinstance(p, Mapping) or isinstance(q, Mapping):
        keys = set(p) | set(q)
        return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


@dataclass
class TailFitReport:
    hill_index: float
    hill_ci: tuple[float, float]
    k_used: int
    loglog_slope: float
    sample_size: int
    capped_excluded: int
    k_sweep: dict[int, float] = field(default_factory=dict)
    non_power_law: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "hill_index": self.hill_index,
            "hill_ci": list(self.hill_ci),
            "k_used": self.k_used,
            "k_sweep": {str(k): v for k, v in self.k_sweep.items()},
            "loglog_slope": self.loglog_slope,
            "non_power_law": self.non_power_law,
            "sample_size": self.sample_size,
            "capped_excluded": self.capped_excluded,
            "warnings": self.warnings,
        }


def fit_tail(samples, k_frac: float = 0.01, capped_excluded: int = 0) -> TailFitReport:
    """Hill estimate with a (k/2, k, 2k) sensitivity sweep plus a log-log slope."""
    x = np.asarray(samples, dtype=float)
    x = x[x > 0]
    n = x.size
    k = math.ceil(k_frac * n)
    index, ci = hill_estimator(x, k)
    sweep = {}
    for kk in (k // 2, k, 2 * k):
        if 10 <= kk < n:
            sweep[kk] = hill_estimator(x, kk)[0]
    warnings = []
    try:
        ll = loglog_tail_fit(x)
        slope, flag = ll.index, ll.non_power_law
    except InsufficientPointsError as exc:
        slope, flag = math.nan, False
        warnings.append(f"log-log fit skipped: {exc}")
    total = n + capped_excluded
    if total and capped_excluded / total > CAPPED_WARN_FRACTION:
        warnings.append(
            f"capped fraction {capped_excluded / total:.4%} exceeds {CAPPED_WARN_FRACTION:.1%}; tail is censored"
        )
    return TailFitReport(index, ci, k, slope, n, capped_excluded, sweep, flag, warnings)
