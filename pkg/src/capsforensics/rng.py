"""Deterministic random streams.

A stream is identified by its seed (plus an optional spawn key for child
streams): the same seed and the same draw sequence produce bit-identical
values. Training relies on this for exact replay and for
checkpoint-resume equivalence; parallel pipelines derive independent
child streams by seed-splitting instead of sharing one generator.
"""

import numpy as np


class RngStream:
    """A seeded random source with a draw counter.

    Wraps a PCG64 generator.  ``child(key)`` derives an independent
    stream from (seed, spawn_key + (key,)) without consuming draws from
    this one.
    """

    def __init__(self, seed, spawn_key=()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))
        self.draws = 0

    def child(self, key):
        return RngStream(self.seed, self.spawn_key + (int(key),))

    def normal(self, shape=(), std=1.0, mean=0.0, dtype=np.float32):
        self.draws += 1
        out = self._gen.standard_normal(size=shape, dtype=np.float64)
        return (mean + std * out).astype(dtype)

    def uniform(self, shape=(), low=0.0, high=1.0, dtype=np.float32):
        self.draws += 1
        out = self._gen.random(size=shape, dtype=np.float64)
        return (low + (high - low) * out).astype(dtype)

    def integers(self, low, high=None, shape=()):
        self.draws += 1
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n):
        self.draws += 1
        return self._gen.permutation(n)

    def __repr__(self):
        return "RngStream(seed=%d, spawn_key=%r, draws=%d)" % (
            self.seed, self.spawn_key, self.draws)
