"""Within-visit and per-cycle offspring laws, sampled and in mean.

A customer served at station ``i`` during one visit produces new customers
``theta`` at every station and a final-product amount ``phi``. Composing the
visits of one cycle (stations ``i+1..m`` are visited after ``i`` in the same
cycle) gives the per-cycle offspring law of a type-``i`` particle.

All samplers are vectorised: ``*_batch`` functions draw ``size`` independent
copies at once and return ``(theta, phi)`` with shapes ``(size, m)`` and
``(size,)``. The single-draw functions wrap them with ``size=1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import EnvState
from .errors import BudgetExhausted, InstabilityError

DEFAULT_BUDGET = 10**6


@dataclass(frozen=True)
class OffspringDraw:
    theta: tuple[int, ...]
    phi: float


def _categorical(cum: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Inverse-CDF draws given the cumulative probabilities ``cum``."""
    idx = np.searchsorted(cum, rng.random(size), side="right")
    return np.minimum(idx, len(cum) - 1)


def _scatter_route(theta: np.ndarray, dest: np.ndarray, rows: np.ndarray):
    """Add one customer at column ``dest - 1`` of ``rows[k]`` wherever ``dest[k] > 0``."""
    moved = dest > 0
    np.add.at(theta, (rows[moved], dest[moved] - 1), 1)


def gated_station_batch(
    i: int,
    env: EnvState,
    rng: np.random.Generator,
    size: int,
    final_product: str = "service_time",
) -> tuple[np.ndarray, np.ndarray]:
    tau = env.service[i].sample(rng, size)
    theta = rng.poisson(env.eps[i][None, :] * tau[:, None])
    dest = _categorical(env.route_cum[i], rng, size)
    moved = np.flatnonzero(dest)
    theta[moved, dest[moved] - 1] += 1
    phi = tau if final_product == "service_time" else np.ones(size)
    return theta, phi


def exhaustive_stable(i: int, env: EnvState) -> bool:
    mean_tau = env.service[i].mean
    return (1.0 - env.gamma[i, i + 1]) / mean_tau > env.eps[i, i]


def exhaustive_station_batch(
    i: int,
    env: EnvState,
    rng: np.random.Generator,
    size: int,
    final_product: str = "service_time",
    budget: int = DEFAULT_BUDGET,
) -> tuple[np.ndarray, np.ndarray]:
    """Sub-busy periods started by ``size`` tagged customers at station ``i``.

    Each customer is served a shifted-geometric number of times (feedback to
    its own station), its Poisson arrivals to station ``i`` are served within
    the same visit and the rest, plus its final routing, become offspring.
    The tree is processed level by level; ``owner`` maps customers to draws.
    """
    if not exhaustive_stable(i, env):
        raise InstabilityError(f"exhaustive station {i} is unstable")
    m = env.m
    g_ii = env.gamma[i, i + 1]
    leave = np.cumsum(np.delete(env.gamma[i], i + 1) / (1.0 - g_ii))
    # column indices of `leave` map back to destinations 0..m without i+1
    dest_map = np.delete(np.arange(m + 1), i + 1)
    dist = env.service[i]
    theta = np.zeros((size, m), dtype=np.int64)
    phi = np.zeros(size)
    completions = np.zeros(size, dtype=np.int64)
    owner = np.arange(size)
    while owner.size:
        n_serv = rng.geometric(1.0 - g_ii, owner.size)
        completions += np.bincount(owner, weights=n_serv, minlength=size).astype(np.int64)
        if completions.max() > budget:
            bad = int(np.argmax(completions))
            raise BudgetExhausted(
                f"station {i}: draw {bad} exceeded {budget} service completions"
            )
        taus = dist.sample(rng, int(n_serv.sum()))
        starts = np.cumsum(n_serv) - n_serv
        eta = np.add.reduceat(taus, starts)
        arrivals = rng.poisson(env.eps[i][None, :] * eta[:, None])
        dest = dest_map[_categorical(leave, rng, owner.size)]
        local = arrivals[:, i].copy()
        arrivals[:, i] = 0
        np.add.at(theta, owner, arrivals)
        _scatter_route(theta, dest, owner)
        if final_product == "service_time":
            phi += np.bincount(owner, weights=eta, minlength=size)
        else:
            phi += np.bincount(owner, minlength=size)
        owner = np.repeat(owner, local)
    return theta, phi


def station_batch(i, env, rng, size, final_product="service_time", budget=DEFAULT_BUDGET):
    if env.policy[i] == "gated":
        return gated_station_batch(i, env, rng, size, final_product)
    return exhaustive_station_batch(i, env, rng, size, final_product, budget)


def cycle_offspring_batch(
    i: int,
    env: EnvState,
    rng: np.random.Generator,
    size: int,
    final_product: str = "service_time",
    budget: int = DEFAULT_BUDGET,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cycle offspring of ``size`` type-``i`` particles.

    Offspring landing at a station visited later in the same cycle are
    expanded immediately by their own cycle law; the rest wait for the next
    cycle and are returned.
    """
    theta, phi = station_batch(i, env, rng, size, final_product, budget)
    xi = np.zeros_like(theta)
    xi[:, : i + 1] = theta[:, : i + 1]
    phi = phi.astype(float, copy=True)
    for k in range(i + 1, env.m):
        cnt = theta[:, k]
        total = int(cnt.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(size), cnt)
        sub_xi, sub_phi = cycle_offspring_batch(k, env, rng, total, final_product, budget)
        np.add.at(xi, owner, sub_xi)
        phi += np.bincount(owner, weights=sub_phi, minlength=size)
    return xi, phi


def _single(batch):
    theta, phi = batch
    return OffspringDraw(tuple(int(t) for t in theta[0]), float(phi[0]))


def gated_station_sample(i, env, rng, final_product="service_time") -> OffspringDraw:
    return _single(gated_station_batch(i, env, rng, 1, final_product))


def exhaustive_station_sample(
    i, env, rng, final_product="service_time", budget=DEFAULT_BUDGET
) -> OffspringDraw:
    return _single(exhaustive_station_batch(i, env, rng, 1, final_product, budget))


def cycle_offspring_sample(
    i, env, rng, final_product="service_time", budget=DEFAULT_BUDGET
) -> OffspringDraw:
    return _single(cycle_offspring_batch(i, env, rng, 1, final_product, budget))


# ---------------------------------------------------------------- exact means


@dataclass(frozen=True, eq=False)
class MeanPair:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray | None
    C: np.ndarray | None
    stable: tuple[bool, ...]

    @property
    def all_stable(self) -> bool:
        return all(self.stable)

    def to_dict(self) -> dict:
        return {
            "H": self.H.tolist(),
            "c": self.c.tolist(),
            "A": None if self.A is None else self.A.tolist(),
            "C": None if self.C is None else self.C.tolist(),
            "stable": list(self.stable),
        }


def row_substitution(H: np.ndarray, i: int) -> np.ndarray:
    """Identity matrix with row ``i`` replaced by row ``i`` of ``H``."""
    out = np.eye(H.shape[0])
    out[i] = H[i]
    return out


def cycle_mean_matrix(H: np.ndarray) -> np.ndarray:
    A = np.eye(H.shape[0])
    for i in range(H.shape[0]):
        A = A @ row_substitution(H, i)
    return A


def cycle_mean_recursion(H: np.ndarray) -> np.ndarray:
    """Same matrix as :func:`cycle_mean_matrix`, built bottom row first."""
    m = H.shape[0]
    A = np.zeros_like(H, dtype=float)
    for i in range(m - 1, -1, -1):
        for j in range(m):
            A[i, j] = (H[i, j] if j <= i else 0.0) + sum(H[i, k] * A[k, j] for k in range(i + 1, m))
    return A


def cycle_mean_product(H: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Solve ``(E - upper(H)) C = c`` by back-substitution."""
    m = len(c)
    C = np.zeros(m)
    for i in range(m - 1, -1, -1):
        C[i] = c[i] + H[i, i + 1 :] @ C[i + 1 :]
    return C


def station_means(env: EnvState, final_product: str = "service_time") -> MeanPair:
    m = env.m
    H = np.zeros((m, m))
    c = np.zeros(m)
    stable = []
    for i in range(m):
        mt = env.service[i].mean
        if env.policy[i] == "gated":
            H[i] = env.gamma[i, 1:] + env.eps[i] * mt
            c[i] = mt if final_product == "service_time" else 1.0
            stable.append(True)
            continue
        g_ii = env.gamma[i, i + 1]
        slack = 1.0 - g_ii - env.eps[i, i] * mt
        if not exhaustive_stable(i, env):
            H[i] = np.inf
            c[i] = np.inf
            stable.append(False)
            continue
        H[i] = (env.gamma[i, 1:] + env.eps[i] * mt) / slack
        H[i, i] = 0.0
        c[i] = mt / slack if final_product == "service_time" else (1.0 - g_ii) / slack
        stable.append(True)
    if not all(stable):
        return MeanPair(H, c, None, None, tuple(stable))
    return MeanPair(H, c, cycle_mean_matrix(H), cycle_mean_product(H, c), tuple(stable))
