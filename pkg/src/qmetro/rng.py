"""Reproducible random streams.

Layout: every chain owns a Philox-4x64 key derived from ``(seed, chain)`` via
``numpy.random.SeedSequence([seed, chain]).generate_state(2, uint64)``. Step
``k`` of that chain draws from the counter block starting at
``[0, 0, 0, k]``; draws inside a step advance the lowest counter word, so
steps never overlap. A port to another language reproduces the decisions by
implementing Philox-4x64-10 with the same key and counter.
"""

from __future__ import annotations

import numpy as np


class RngStreams:
    def __init__(self, seed: int, chain: int = 0):
        if seed < 0 or chain < 0:
            raise ValueError("seed and chain index must be nonnegative")
        self.seed = int(seed)
        self.chain = int(chain)
        self._key = np.random.SeedSequence([self.seed, self.chain]).generate_state(2, np.uint64)

    def for_step(self, step: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self._key, counter=[0, 0, 0, int(step)]))

    def auxiliary(self) -> np.random.Generator:
        """Stream for draws outside the step loop (initial states and the like)."""
        return np.random.Generator(np.random.Philox(key=self._key, counter=[0, 0, 1, 0]))


def step_generator(rng, step: int) -> np.random.Generator:
    """Generator for ``step``: a substream for :class:`RngStreams`, else ``rng`` itself."""
    if isinstance(rng, RngStreams):
        return rng.for_step(step)
    return rng
