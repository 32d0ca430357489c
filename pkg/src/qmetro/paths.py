"""Top-down delay surprisals over enumerated paths, used by the oracles.

The samplers fill their tables bottom-up as branches arrive. Here every
surprisal is instead defined recursively on the subpath it describes and
evaluated for many paths at once: ``values[k]`` is an array (or anything
that broadcasts) holding the recorded value at path position ``k``. For a subpath from position ``i`` to ``k`` with step
``sigma = sign(k - i)``::

    S(i, k)    = S(i, k - sigma)    + s(x_k - x_i + T Sbar(k, i + sigma) - T S(i, k - sigma) + shift)
    Sbar(i, k) = Sbar(i, k - sigma) + s(x_k - x_i + T Sbar(k, i + sigma) - T Sbar(i, k - sigma))

with ``S(i, i) = Sbar(i, i) = 0``. With ``shift = 0`` both coincide with the
classical surprisal.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .models import AcceptanceFunction


class PathSurprisals:
    def __init__(self, values: Sequence[np.ndarray], af: AcceptanceFunction, shift: float = 0.0):
        self.values = list(values)
        self.af = af
        self.shift = float(shift)
        self.temperature = af.temperature
        self._cache: dict[tuple[int, int, bool], np.ndarray] = {}

    def x(self, k: int) -> np.ndarray:
        return self.values[k]

    def _get(self, i: int, k: int, bar: bool):
        if i == k:
            return 0.0
        if self.shift == 0.0:
            bar = True
        key = (i, k, bar)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        sigma = 1 if k > i else -1
        T = self.temperature
        prev = self._get(i, k - sigma, bar)
        arg = self.x(k) - self.x(i) + T * self._get(k, i + sigma, True) - T * prev
        if not bar:
            arg = arg + self.shift
        out = prev + self.af.s(arg)
        self._cache[key] = out
        return out

    def S(self, i: int, k: int):
        return self._get(i, k, False)

    def Sbar(self, i: int, k: int):
        return self._get(i, k, True)

    def halting_weight(self, n: int) -> np.ndarray:
        """``f(x_{n+1} - x_0 + T Sbar(n+1, 1) - T S(0, n) + shift) exp(-S(0, n))``."""
        T = self.temperature
        arg = self.x(n + 1) - self.x(0) + T * self.Sbar(n + 1, 1) - T * self.S(0, n) + self.shift
        return self.af.f(arg) * np.exp(-np.asarray(self.S(0, n)))
