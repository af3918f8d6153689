"""Reproducible random streams.

Every randomized operation in the package draws from an :class:`RngStream`.
Streams are backed by the counter-based Philox4x64 generator keyed through
``numpy.random.SeedSequence(seed, spawn_key=...)``, so the same
``(seed, stream_id)`` pair yields the bit-identical sample sequence on any
platform, and distinct stream ids (or :meth:`RngStream.spawn` children) are
statistically independent and never aliased.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A seeded, independently keyed random stream.

    Drawing advances internal state, so each stream should be owned by a
    single consumer; hand out :meth:`spawn` children for sub-tasks.
    """

    def __init__(self, seed: int, stream_id: int = 0, _key: tuple[int, ...] | None = None):
        self.seed = int(seed)
        self.stream_id = stream_id if _key is None else _key
        self._key = (int(stream_id),) if _key is None else _key
        seq = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, tag: int) -> "RngStream":
        """Derive an independent child stream; (seed, key path) pins it."""
        return RngStream(self.seed, _key=self._key + (int(tag),))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def complex_normal(self, size: int, variance: float) -> np.ndarray:
        """Circularly-symmetric complex Gaussian with total variance per sample."""
        scale = np.sqrt(variance / 2.0)
        return scale * (self._gen.standard_normal(size) + 1j * self._gen.standard_normal(size))


def seeded_rng(seed: int, stream_id: int = 0) -> RngStream:
    """Build the stream for ``(seed, stream_id)``."""
    return RngStream(seed, stream_id)
