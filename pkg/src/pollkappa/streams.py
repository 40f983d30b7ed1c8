"""Per-replica random streams and order-preserving replica fan-out.

Replica ``r`` of a command tagged ``tag`` always draws from the stream seeded
by a BLAKE2 mix of ``(seed, tag, r)``, so results do not depend on how the
replicas are split over workers.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def replica_seed(seed: int, tag: str, replica: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{tag}:{replica}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def replica_stream(seed: int, tag: str, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replica_seed(seed, tag, replica)))


def _run_chunk(func, seed, tag, replicas, args):
    return [func(replica_stream(seed, tag, r), r, *args) for r in replicas]


def map_replicas(
    func: Callable[..., T],
    n: int,
    seed: int,
    tag: str,
    args: Sequence = (),
    workers: int = 1,
    chunk: int | None = None,
) -> list[T]:
    """Evaluate ``func(rng, r, *args)`` for ``r in range(n)``, results in replica order.

    ``func`` must be picklable (module level) when ``workers > 1``.
    """
    if workers <= 1 or n < 2:
        return _run_chunk(func, seed, tag, range(n), args)
    chunk = chunk or max(1, -(-n // (4 * workers)))
    bounds = [range(lo, min(n, lo + chunk)) for lo in range(0, n, chunk)]
    out: list[T] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, func, seed, tag, b, args) for b in bounds]
        for fut in futures:
            out.extend(fut.result())
    return out
