"""Discrete-event simulation of one busy period of the polling system.

The server visits stations ``0..m-1`` cyclically with zero switchover times.
Queues hold indistinguishable customers, so only counts are tracked. Within a
service of length ``tau`` the Poisson arrivals are placed at uniform instants
and pushed on an event heap together with the completion event; the heap is
keyed by ``(time, seq)`` so simultaneous events resolve in insertion order.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np

from .env import EnvModel, sample_env_state

_ARRIVAL = 0
_COMPLETION = 1


@dataclass(frozen=True)
class PollingCaps:
    max_cycles: int = 10_000
    max_customers: int = 10_000_000


@dataclass
class BusyPeriodRecord:
    """One busy period started by a single customer.

    ``snapshots[k]`` holds the queue lengths at the end of cycle ``k`` (cycle
    0 being the partial cycle that starts at the arrival station).
    """

    phi_total: float
    cycles: int
    snapshots: list[tuple[int, ...]]
    capped: bool
    elapsed: float | None = None
    services: int = 0
    departures: list[tuple[int, int, tuple[int, ...]]] = field(default_factory=list)


def simulate_busy_period_events(
    J: int,
    model: EnvModel,
    rng: np.random.Generator,
    caps: PollingCaps = PollingCaps(),
    record_departures: bool = False,
) -> BusyPeriodRecord:
    """Run the polling system from one customer at station ``J`` until empty.

    With ``record_departures`` every visit appends ``(cycle, station, queues)``
    taken when the server leaves the station.
    """
    m = model.m
    unit = model.final_product == "unit"
    queue = [0] * m
    queue[J] = 1
    in_system = 1
    t = 0.0
    phi = 0.0
    services = 0
    seq = itertools.count()
    heap: list = []
    snapshots: list[tuple[int, ...]] = []
    departures = []
    env = sample_env_state(model, rng)
    station, cycle = J, 0
    while True:
        gated = env.policy[station] == "gated"
        batch = queue[station]
        while (batch > 0) if gated else (queue[station] > 0):
            queue[station] -= 1
            batch -= 1
            tau = float(env.service[station].sample(rng, 1)[0])
            counts = rng.poisson(env.eps[station] * tau)
            for j in np.flatnonzero(counts):
                for u in rng.random(counts[j]):
                    heapq.heappush(heap, (t + u * tau, next(seq), _ARRIVAL, int(j)))
            heapq.heappush(heap, (t + tau, next(seq), _COMPLETION, station))
            while True:
                t, _, kind, j = heapq.heappop(heap)
                if kind == _COMPLETION:
                    break
                queue[j] += 1
                in_system += 1
            services += 1
            dest = int(np.searchsorted(env.route_cum[station], rng.random(), side="right"))
            dest = min(dest, m)
            if not unit:
                phi += tau
            elif gated or dest != station + 1:
                # an exhaustive customer is counted once, when it leaves the station
                phi += 1.0
            if dest == 0:
                in_system -= 1
            else:
                queue[dest - 1] += 1
            if in_system > caps.max_customers:
                return BusyPeriodRecord(phi, cycle, snapshots, True, t, services, departures)
        if record_departures:
            departures.append((cycle, station, tuple(queue)))
        station += 1
        if station < m:
            continue
        snapshots.append(tuple(queue))
        cycle += 1
        if in_system == 0:
            return BusyPeriodRecord(phi, cycle, snapshots, False, t, services, departures)
        if cycle >= caps.max_cycles:
            return BusyPeriodRecord(phi, cycle, snapshots, True, t, services, departures)
        env = sample_env_state(model, rng)
        station = 0
