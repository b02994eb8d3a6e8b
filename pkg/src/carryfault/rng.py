"""Seedable, splittable randomness source.

Every stream is addressed by ``(seed, key)`` where ``key`` is a tuple of
non-negative integers. Two generators built from the same address produce
identical output; distinct keys are statistically independent because the
address is hashed through :class:`numpy.random.SeedSequence`.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class DeterministicRng:
    def __init__(self, seed: int, stream: int | tuple = 0):
        self.seed = int(seed) & _MASK64
        self.key = tuple(_word(x) for x in stream) if isinstance(stream, tuple) else (_word(stream),)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *labels) -> "DeterministicRng":
        """Derive an independent stream; labels may be ints or strings."""
        return DeterministicRng(self.seed, self.key + tuple(_word(x) for x in labels))

    def uniform(self, high: int, size=None) -> np.ndarray:
        return self.gen.integers(0, high, size=size, dtype=np.int64)

    def words(self, width: int, size=None) -> np.ndarray:
        return self.gen.integers(0, 1 << width, size=size, dtype=np.int64)

    def random(self, size=None):
        return self.gen.random(size)

    def bytes(self, n: int) -> bytes:
        return self.gen.bytes(n)

    def __repr__(self):
        return f"DeterministicRng(seed={self.seed}, key={self.key})"
