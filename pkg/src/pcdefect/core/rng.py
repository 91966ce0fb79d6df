"""Deterministic counter-based random streams.

Every consumer asks for a generator by purpose tag. The tag and the master
seed are hashed into a Philox key, so a stream never depends on how many
draws other consumers made before it, and parallel workers can rebuild the
exact stream they need.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _digest(seed: int, tag: tuple) -> bytes:
    payload = repr((int(seed),) + tuple(tag)).encode("utf-8")
    return hashlib.sha256(payload).digest()


class Rng:
    """A 64-bit seed plus a namespace of purpose-tagged Philox streams."""

    __slots__ = ("seed",)

    def __init__(self, seed: int = 0):
        if int(seed) < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed) & _MASK64

    def generator(self, *tag) -> np.random.Generator:
        key = int.from_bytes(_digest(self.seed, tag)[:16], "little")
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *tag) -> "Rng":
        return Rng(int.from_bytes(_digest(self.seed, ("child",) + tag)[:8], "little"))

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    def __eq__(self, other):
        return isinstance(other, Rng) and other.seed == self.seed

    def __hash__(self):
        return hash(("Rng", self.seed))
