"""Rejection-free classical Metropolis chain and its exact branch kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .delay import DelayLedger, scalar_acceptance
from .models import AcceptanceFunction, ClassicalSystem, ProposalKernel
from .paths import PathSurprisals
from .rng import step_generator

DEFAULT_N_MAX = 10_000
MAX_ORACLE_PATHS = 10_000_000


class TruncationError(RuntimeError):
    """A step ran past ``n_max`` branches without accepting.

    Forcing acceptance here would break detailed balance, so the partial
    record is attached instead and the caller decides what to do.
    """

    def __init__(self, message: str, record, step: int | None = None):
        super().__init__(message)
        self.record = record
        self.step = step


class OracleGuardError(ValueError):
    """An exact enumeration would exceed its configured size guard."""


@dataclass
class ClassicalStepRecord:
    state: int
    branches: int
    visited: list[int] = field(default_factory=list)
    accepted: bool = True


def eval_f(af: AcceptanceFunction, omega: float) -> float:
    return float(af.f(omega))


def eval_s(af: AcceptanceFunction, omega: float) -> float:
    return float(af.s(omega))


def classical_step(sys: ClassicalSystem, p: ProposalKernel, af: AcceptanceFunction, a0: int,
                   rng: np.random.Generator, n_max: int = DEFAULT_N_MAX,
                   _scalar=None) -> ClassicalStepRecord:
    """One rejection-free Metropolis step starting from state ``a0``.

    Each branch draws two uniforms from ``rng``: the first selects the proposal
    by inversion of ``P(.|a_n)``, the second is the acceptance variate ``u``.
    """
    if not 0 <= a0 < sys.num_states:
        raise ValueError(f"state {a0} out of range")
    if p.size != sys.num_states:
        raise ValueError("proposal kernel size does not match the system")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    f, s = _scalar or scalar_acceptance(af.temperature, af.delta)
    energies = sys.energies
    visited = [int(a0)]
    ledger = DelayLedger(float(energies[a0]), af.temperature, af.delta)
    random = rng.random
    for n in range(n_max + 1):
        a_next = p.sample(visited[-1], random())
        u = random()
        visited.append(a_next)
        ledger.push(float(energies[a_next]))
        if u <= f(ledger.acceptance_argument()):
            return ClassicalStepRecord(a_next, n, visited)
    partial = ClassicalStepRecord(visited[-1], n_max, visited, accepted=False)
    raise TruncationError(f"no acceptance within n_max={n_max} branches", partial)


def run_classical_chain(sys: ClassicalSystem, p: ProposalKernel | Sequence[ProposalKernel],
                        af: AcceptanceFunction, a_init: int, steps: int, rng,
                        n_max: int = DEFAULT_N_MAX,
                        sink: Callable[[int, ClassicalStepRecord], None] | None = None,
                        ) -> list[ClassicalStepRecord]:
    """Chain ``steps`` calls of :func:`classical_step`.

    ``p`` may be a sequence of kernels, used round-robin per step. ``rng`` is
    either a Generator shared by all steps or an :class:`~qmetro.rng.RngStreams`
    giving one substream per step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    kernels = [p] if isinstance(p, ProposalKernel) else list(p)
    if not kernels:
        raise ValueError("need at least one proposal kernel")
    scalar = scalar_acceptance(af.temperature, af.delta)
    records = []
    state = a_init
    for k in range(steps):
        try:
            rec = classical_step(sys, kernels[k % len(kernels)], af, state,
                                 step_generator(rng, k), n_max, _scalar=scalar)
        except TruncationError as exc:
            raise TruncationError(f"step {k}: {exc}", exc.record, step=k) from exc
        records.append(rec)
        if sink is not None:
            sink(k, rec)
        state = rec.state
    return records


# -- exact branch kernels ---------------------------------------------------


def _enumerate_paths(p: ProposalKernel, length: int, max_paths: int) -> np.ndarray:
    """All state paths of ``length`` positions with nonzero proposal probability."""
    mat = p.matrix
    paths = np.arange(p.size)[:, None]
    for _ in range(length - 1):
        last = paths[:, -1]
        nexts = [np.flatnonzero(mat[:, b]) for b in range(p.size)]
        count = int(sum(nexts[b].size for b in last))
        if count > max_paths:
            raise OracleGuardError(f"path enumeration needs {count} paths (> {max_paths})")
        rows = np.repeat(np.arange(paths.shape[0]), [nexts[b].size for b in last])
        cols = np.concatenate([nexts[b] for b in last])
        paths = np.column_stack([paths[rows], cols])
    return paths


def branch_kernel_oracle(sys: ClassicalSystem, p: ProposalKernel, af: AcceptanceFunction,
                         n: int, max_paths: int = MAX_ORACLE_PATHS) -> np.ndarray:
    """Exact ``P_M(n, a|b)`` as a matrix indexed ``[a, b]``.

    Sums the proposal products, the delay factor ``exp(-S(0, n))`` and the
    halting acceptance over every intermediate path ``a_1 .. a_n``.
    """
    if n < 0:
        raise ValueError("branch index must be >= 0")
    paths = _enumerate_paths(p, n + 2, max_paths)
    e = sys.energies
    weight = np.ones(paths.shape[0])
    for k in range(n + 1):
        weight *= p.matrix[paths[:, k + 1], paths[:, k]]
    surprisal = PathSurprisals([e[paths[:, k]] for k in range(n + 2)], af)
    weight = weight * surprisal.halting_weight(n)
    out = np.zeros((sys.num_states, sys.num_states))
    np.add.at(out, (paths[:, -1], paths[:, 0]), weight)
    return out


def branch_kernels(sys: ClassicalSystem, p: ProposalKernel, af: AcceptanceFunction,
                   n_max: int, max_paths: int = MAX_ORACLE_PATHS) -> list[np.ndarray]:
    return [branch_kernel_oracle(sys, p, af, n, max_paths) for n in range(n_max + 1)]


def db_violation(kernel: np.ndarray, energies: np.ndarray, temperature: float) -> float:
    """``max |K[a, b] exp(-E_b/T) - K[b, a] exp(-E_a/T)|``."""
    w = np.exp(-np.asarray(energies) / temperature)
    flux = kernel * w[None, :]
    return float(np.max(np.abs(flux - flux.T)))


def check_classical_db(sys: ClassicalSystem, p: ProposalKernel, af: AcceptanceFunction,
                       n_max: int, max_paths: int = MAX_ORACLE_PATHS) -> float:
    """Largest per-branch detailed-balance violation over ``n <= n_max``."""
    return max(db_violation(k, sys.energies, sys.temperature)
               for k in branch_kernels(sys, p, af, n_max, max_paths))


def total_kernel(kernels: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Summed kernel and the per-column mass missing from the truncated sum."""
    total = sum(kernels)
    return total, 1.0 - total.sum(axis=0)
