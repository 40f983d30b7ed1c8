"""Random valid environments and small statistical helpers for the tests."""

from __future__ import annotations

import numpy as np

from pollkappa.env import EnvState, ServiceDist

SERVICE_MAKERS = (
    lambda rng: ServiceDist.deterministic(rng.uniform(0.2, 1.0)),
    lambda rng: ServiceDist.exponential(rng.uniform(1.5, 4.0)),
    lambda rng: ServiceDist.gamma(rng.uniform(0.5, 3.0), rng.uniform(2.0, 6.0)),
    lambda rng: ServiceDist.lognormal(rng.uniform(-1.5, -0.5), rng.uniform(0.2, 0.8)),
)


def random_env_state(rng: np.random.Generator, m: int, policies=None) -> EnvState:
    """A valid state whose exhaustive stations are comfortably stable."""
    policies = policies or [("gated", "exhaustive")[rng.integers(2)] for _ in range(m)]
    service = [SERVICE_MAKERS[rng.integers(len(SERVICE_MAKERS))](rng) for _ in range(m)]
    gamma = rng.dirichlet(np.ones(m + 1), size=m)
    eps = rng.uniform(0.0, 0.6, size=(m, m)) / m
    for i in range(m):
        if policies[i] == "exhaustive":
            # keep eps_ii * E tau below half of 1 - gamma_ii
            cap = 0.5 * (1 - gamma[i, i + 1]) / service[i].mean
            eps[i, i] = min(eps[i, i], cap)
    return EnvState(eps, gamma, service, policies)


def z_score(sample, exact) -> float:
    sample = np.asarray(sample, float)
    se = sample.std(ddof=1) / np.sqrt(sample.size)
    if se == 0:
        return 0.0 if np.all(sample == exact) else np.inf
    return float((sample.mean() - exact) / se)
