"""Multitype branching process in random environment with a final product.

Each generation corresponds to one server cycle: a fresh environment state is
drawn, every particle independently produces its per-cycle offspring and
final-product amount, and the amounts accumulate in ``phi_acc``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .env import EnvModel, EnvState, sample_env_state
from .policy import DEFAULT_BUDGET, cycle_offspring_batch
from .polling import BusyPeriodRecord

OffspringLaw = Callable[..., tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class Population:
    z: np.ndarray
    phi_acc: float = 0.0
    generation: int = 0

    def __post_init__(self):
        z = np.array(self.z, dtype=np.int64)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def size(self) -> int:
        return int(self.z.sum())


@dataclass
class Trajectory:
    snapshots: list[Population]
    tau: int | None
    phi_total: float | None

    @property
    def extinct(self) -> bool:
        return self.tau is not None


@dataclass(frozen=True)
class Caps:
    max_generations: int = 10_000
    max_population: int = 10_000_000


def step_generation(
    pop: Population,
    env: EnvState,
    rng: np.random.Generator,
    final_product: str = "service_time",
    offspring: OffspringLaw = cycle_offspring_batch,
    budget: int = DEFAULT_BUDGET,
) -> Population:
    z_new = np.zeros(len(pop.z), dtype=np.int64)
    dphi = 0.0
    for i, n in enumerate(pop.z):
        if n == 0:
            continue
        xi, phi = offspring(i, env, rng, int(n), final_product, budget)
        z_new += xi.sum(axis=0)
        dphi += float(phi.sum())
    return Population(z_new, pop.phi_acc + dphi, pop.generation + 1)


def run_to_extinction(
    init: Population,
    model: EnvModel,
    rng: np.random.Generator,
    caps: Caps = Caps(),
    offspring: OffspringLaw = cycle_offspring_batch,
) -> Trajectory:
    """Iterate generations until extinction or a cap.

    A capped run reports ``tau=None`` and no ``phi_total``.
    """
    pop = init
    snapshots = [pop]
    while pop.size > 0:
        if pop.generation >= caps.max_generations or pop.size > caps.max_population:
            return Trajectory(snapshots, None, None)
        env = sample_env_state(model, rng)
        pop = step_generation(pop, env, rng, model.final_product, offspring)
        snapshots.append(pop)
    return Trajectory(snapshots, pop.generation, pop.phi_acc)


def simulate_busy_period_branching(
    J: int,
    model: EnvModel,
    rng: np.random.Generator,
    caps: Caps = Caps(),
    offspring: OffspringLaw = cycle_offspring_batch,
) -> BusyPeriodRecord:
    """Busy period of the polling system through its branching representation.

    The run starts from one type-``J`` particle whose first cycle uses the
    type-``J`` cycle law; generation ``n`` then matches the queue lengths at
    the end of polling cycle ``n - 1``.
    """
    z0 = np.zeros(model.m, dtype=np.int64)
    z0[J] = 1
    traj = run_to_extinction(Population(z0), model, rng, caps, offspring)
    snaps = [tuple(int(v) for v in p.z) for p in traj.snapshots[1:]]
    last = traj.snapshots[-1]
    return BusyPeriodRecord(
        phi_total=last.phi_acc,
        cycles=len(snaps),
        snapshots=snaps,
        capped=not traj.extinct,
    )
