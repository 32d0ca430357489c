"""Incremental delay-surprisal tables for the rejection-free chains.

``S[i][k]`` is the surprisal of delaying acceptance along the recorded values
``x_i, ..., x_k`` (start index first). The classical ledger tracks one family;
the quantum ledger tracks ``S`` and ``Sbar`` and adds the grid shift
``1/(2 lambda T)`` to the arguments of the ``S`` updates.

Branch ``n`` only reads the forward column ``S[.][n-1]`` and the reverse row
``S[n][.]`` left by branch ``n - 1``, so only the latest column and row are
stored: memory is linear in the branch count. The per-branch sweeps are
compiled, since a step that runs to thousands of branches costs a quadratic
number of surprisal evaluations.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


def scalar_acceptance(temperature: float, delta: float):
    """Return fast scalar ``(f, s)`` for the regularized Metropolis function."""
    scale = 1.0 - delta
    inv_t = 1.0 / temperature
    exp = math.exp
    log1p = math.log1p

    def f(omega: float) -> float:
        if omega <= 0.0:
            return scale
        return scale * exp(-omega * inv_t)

    def s(omega: float) -> float:
        if omega <= 0.0:
            return -log1p(-scale)
        return -log1p(-scale * exp(-omega * inv_t))

    return f, s


@njit(cache=True)
def _s(omega, scale, inv_t):
    if omega <= 0.0:
        return -math.log1p(-scale)
    return -math.log1p(-scale * math.exp(-omega * inv_t))


@njit(cache=True)
def _sweep_classical(x, n, T, scale, col, row):
    inv_t = 1.0 / T
    col[n] = 0.0
    for m in range(n, 0, -1):
        prev = col[m - 1]
        col[m - 1] = prev + _s(x[n] - x[m - 1] + T * row[m] - T * prev, scale, inv_t)
    row[n + 1] = 0.0
    for m in range(n, 0, -1):
        prev = row[m + 1]
        row[m] = prev + _s(x[m] - x[n + 1] + T * col[m] - T * prev, scale, inv_t)


@njit(cache=True)
def _sweep_quantum(x, n, T, scale, h, col, col_bar, row, row_bar):
    inv_t = 1.0 / T
    col[n] = 0.0
    col_bar[n] = 0.0
    for m in range(n, 0, -1):
        base = x[n] - x[m - 1] + T * row_bar[m]
        prev = col[m - 1]
        prev_bar = col_bar[m - 1]
        col[m - 1] = prev + _s(base - T * prev + h, scale, inv_t)
        col_bar[m - 1] = prev_bar + _s(base - T * prev_bar, scale, inv_t)
    row[n + 1] = 0.0
    row_bar[n + 1] = 0.0
    for m in range(n, 0, -1):
        base = x[m] - x[n + 1] + T * col_bar[m]
        prev = row[m + 1]
        prev_bar = row_bar[m + 1]
        row[m] = prev + _s(base - T * prev + h, scale, inv_t)
        row_bar[m] = prev_bar + _s(base - T * prev_bar, scale, inv_t)


class _Buffers:
    """Growable float arrays sharing one capacity."""

    def __init__(self, count: int, capacity: int):
        self.arrays = [np.zeros(capacity) for _ in range(count)]

    def ensure(self, size: int) -> None:
        cap = self.arrays[0].size
        if size <= cap:
            return
        new = max(size, 2 * cap)
        for i, a in enumerate(self.arrays):
            grown = np.zeros(new)
            grown[:cap] = a
            self.arrays[i] = grown


class DelayLedger:
    """Surprisals for the classical chain.

    Call :meth:`push` with each new proposal value ``x_{n+1}``; afterwards
    :meth:`acceptance_argument` gives the argument of ``f`` for the halting test
    of branch ``n``. ``forward[i]`` is ``S[i][n]`` for ``i = 0..n`` and
    ``reverse[m]`` is ``S[n+1][m]`` for ``m = 1..n+1`` (index 0 unused).
    """

    def __init__(self, x0: float, temperature: float, delta: float, capacity: int = 32):
        self.temperature = float(temperature)
        self._scale = 1.0 - delta
        self._buf = _Buffers(3, capacity)
        self._buf.arrays[0][0] = x0
        self._len = 1

    @property
    def n(self) -> int:
        """Index of the current branch (``-1`` before the first push)."""
        return self._len - 2

    @property
    def x(self) -> np.ndarray:
        return self._buf.arrays[0][:self._len]

    @property
    def forward(self) -> np.ndarray:
        return self._buf.arrays[1][:self.n + 1]

    @property
    def reverse(self) -> np.ndarray:
        return self._buf.arrays[2][:self.n + 2]

    def push(self, x_next: float) -> None:
        self._buf.ensure(self._len + 1)
        x, col, row = self._buf.arrays
        x[self._len] = x_next
        self._len += 1
        _sweep_classical(x, self.n, self.temperature, self._scale, col, row)

    def acceptance_argument(self) -> float:
        n = self.n
        x, col, row = self._buf.arrays
        T = self.temperature
        return float(x[n + 1] - x[0] + T * row[1] - T * col[0])


class QuantumDelayLedger:
    """``S`` and ``Sbar`` surprisals for the measurement-based chain.

    ``shift`` is ``1/(2 lambda T)``; for each ``m = n..1`` the forward pair
    ``S``, ``Sbar`` is updated, then the reverse pair. Storage mirrors
    :class:`DelayLedger`, with ``forward_bar`` and ``reverse_bar`` for ``Sbar``.
    """

    def __init__(self, x0: float, temperature: float, delta: float, shift: float,
                 capacity: int = 32):
        self.temperature = float(temperature)
        self.shift = float(shift)
        self._scale = 1.0 - delta
        self._buf = _Buffers(5, capacity)
        self._buf.arrays[0][0] = x0
        self._len = 1

    @property
    def n(self) -> int:
        return self._len - 2

    @property
    def x(self) -> np.ndarray:
        return self._buf.arrays[0][:self._len]

    @property
    def forward(self) -> np.ndarray:
        return self._buf.arrays[1][:self.n + 1]

    @property
    def forward_bar(self) -> np.ndarray:
        return self._buf.arrays[2][:self.n + 1]

    @property
    def reverse(self) -> np.ndarray:
        return self._buf.arrays[3][:self.n + 2]

    @property
    def reverse_bar(self) -> np.ndarray:
        return self._buf.arrays[4][:self.n + 2]

    def push(self, x_next: float) -> None:
        self._buf.ensure(self._len + 1)
        x, col, col_bar, row, row_bar = self._buf.arrays
        x[self._len] = x_next
        self._len += 1
        _sweep_quantum(x, self.n, self.temperature, self._scale, self.shift,
                       col, col_bar, row, row_bar)

    def acceptance_argument(self) -> float:
        n = self.n
        x, col, _, _, row_bar = self._buf.arrays
        T = self.temperature
        return float(x[n + 1] - x[0] + T * row_bar[1] - T * col[0] + self.shift)
