"""Counter-based random streams addressed by (seed, replication, particle, role).

Every stream is a Philox generator keyed by its full address, so draws are a
pure function of the address: independent of execution order, thread count,
and of how many other streams exist.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence, TypeVar

import numpy as np

_MASK64 = (1 << 64) - 1

T = TypeVar("T")
U = TypeVar("U")


def _role_id(role: str) -> int:
    # crc32 is stable across platforms and python versions
    return zlib.crc32(role.encode("utf-8"))


@dataclass(frozen=True)
class RngKey:
    """Address of one independent random stream."""

    seed: int
    replication: int = 0
    particle: int = 0
    role: str = "main"

    def __post_init__(self) -> None:
        if self.replication < 0 or self.particle < 0:
            raise ValueError("replication and particle indices must be non-negative")

    def rep(self, index: int) -> "RngKey":
        return replace(self, replication=index)

    def part(self, index: int) -> "RngKey":
        return replace(self, particle=index)

    def tagged(self, role: str) -> "RngKey":
        return replace(self, role=role)

    def generator(self) -> np.random.Generator:
        entropy = (self.seed & _MASK64, self.replication, self.particle, _role_id(self.role))
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def pmap(fn: Callable[[T], U], items: Sequence[T], threads: int = 1) -> list[U]:
    """Order-preserving map over items; output is identical for any thread count."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
