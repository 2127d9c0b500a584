"""Seeded random streams with explicit sub-stream derivation.

Every stochastic decision in the package draws from an :class:`RngStream`
identified by a root seed and a derivation path of small integers, e.g.
``RngStream(7).child(clone, trajectory, spec)``. Streams are backed by
numpy's PCG64 seeded through ``SeedSequence(seed, spawn_key=path)``, so the
draw sequence depends only on ``(seed, path)`` and never on call order
elsewhere in the program.
"""

from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "PCG64/SeedSequence"


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("derivation keys must be non-negative")
        return int(part)
    # strings (pipeline ids, layout names) hash to a stable 32-bit key
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


class RngStream:
    """A named, reproducible random stream.

    The underlying generator is created lazily and then advanced by draws,
    so a single stream object can be consumed incrementally (one transition
    at a time) or in bulk with identical results.
    """

    algorithm = ALGORITHM

    def __init__(self, seed: int, path: tuple = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.path = tuple(_key(p) for p in path)
        self._gen = None

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(keys))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a numpy Generator or an integer seed."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator
    raise TypeError(f"cannot make a random generator from {type(rng).__name__}")
