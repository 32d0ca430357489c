"""Measurement-based quantum Metropolis chain on density matrices.

A step measures the energy with GQPE, then repeats branches of
local measurement, symmetric re-preparation and another GQPE until the
acceptance test passes. Trajectories are simulated exactly on density
matrices with sampled outcomes. The branch superoperators are also assembled
exactly, by enumerating every outcome sequence on the frequency grid, for the
detailed-balance and stationarity checks.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classical_chain import DEFAULT_N_MAX, OracleGuardError, TruncationError
from .delay import QuantumDelayLedger, scalar_acceptance
from .gqpe import (GqpeConfig, GqpeConfigError, build_direct_povm, circuit_distribution,
                   circuit_povm, frequency_grid, gaussian_filter)
from .models import (AcceptanceFunction, LocalObservable, ModelError, ProposalKernel,
                     SpectralHamiltonian, gibbs_weights)
from .paths import PathSurprisals
from .rng import step_generator

BACKENDS = ("direct", "circuit", "continuum")
MAX_ORACLE_TERMS = 100_000_000
MATCH_TOL = 1e-12


@dataclass
class QuantumStepRecord:
    omega0_raw: float
    omega0_corrected: float
    d0: int
    branches: int
    omegas: list[float] = field(default_factory=list)
    outcomes: list[tuple[int, int]] = field(default_factory=list)
    accepted: bool = True


def measure_local(rho, b: LocalObservable, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Measure ``<phi_d| (x) I``; return ``d`` and the normalized rest-factor state."""
    rho = np.asarray(rho, dtype=complex)
    m, r = b.subsystem_dim, b.rest_dim
    if rho.shape != (m * r, m * r):
        raise ValueError(f"state of dim {rho.shape[0]} does not match observable dim {m * r}")
    u = np.kron(b.basis, np.eye(r))
    blocks = (u.conj().T @ rho @ u).reshape(m, r, m, r)
    diag = blocks[np.arange(m), :, np.arange(m), :]
    probs = np.real(np.trace(diag, axis1=1, axis2=2)).clip(0.0, None)
    if probs.sum() < 1e-14:
        raise ValueError("all local outcomes have vanishing probability; state is corrupt")
    cum = np.cumsum(probs)
    d = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), m - 1)
    return d, diag[d] / probs[d]


def prepare_local(rho_rest, c: int, b: LocalObservable) -> np.ndarray:
    """``|phi_c><phi_c| (x) rho_rest``."""
    if not 0 <= c < b.subsystem_dim:
        raise ValueError(f"basis label {c} out of range")
    phi = b.basis[:, c]
    return np.kron(np.outer(phi, phi.conj()), np.asarray(rho_rest, dtype=complex))


def energy_correction(omega0: float, lam: float, t: float) -> float:
    """``1/(2 lam t) + omega0 exp(-1/(4 lam t^2))``."""
    return 1.0 / (2.0 * lam * t) + omega0 * math.exp(-1.0 / (4.0 * lam * t * t))


def check_grid_matching(cfg: GqpeConfig, af: AcceptanceFunction) -> None:
    """Require the chain temperature, ``t_max = 2 pi lambda T / z``, and an on-grid shift."""
    if abs(af.temperature - cfg.temperature) > MATCH_TOL * cfg.temperature:
        raise GqpeConfigError(
            f"acceptance temperature {af.temperature} differs from the GQPE grid temperature "
            f"{cfg.temperature}")
    err = cfg.grid_matching_error()
    if err > MATCH_TOL:
        raise GqpeConfigError(f"t_max violates grid matching (relative error {err:.3e})")
    steps = cfg.shift_in_steps
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise GqpeConfigError(
            f"the shift 1/(2 lambda T) is {steps:.6g} grid steps, not an integer; "
            "only z = 1 lands it on the grid")


class _Engine:
    """Precomputed bases and back-end data shared by every step of a chain."""

    def __init__(self, h: SpectralHamiltonian, b: LocalObservable, p: ProposalKernel,
                 af: AcceptanceFunction, cfg: GqpeConfig, backend: str):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
        if b.dim != h.dim:
            raise ModelError(f"observable dim {b.dim} != Hamiltonian dim {h.dim}")
        if p.size != b.subsystem_dim:
            raise ModelError("proposal kernel size must equal the observable subsystem dim")
        check_grid_matching(cfg, af)
        self.h, self.b, self.p, self.af, self.cfg, self.backend = h, b, p, af, cfg, backend
        self.m, self.r = b.subsystem_dim, b.rest_dim
        # local-basis coordinates of eigenbasis vectors
        self.x = np.kron(b.basis, np.eye(self.r)).conj().T @ h.eigenvectors
        self.energies = h.eigenvalues
        self.f, self.s = scalar_acceptance(af.temperature, af.delta)
        if backend == "direct":
            povm = build_direct_povm(h, cfg)
            self.omegas = povm.omegas
            self.amps = povm.amplitudes
            self.weights = povm.weights
        elif backend == "circuit":
            self.omegas = frequency_grid(cfg).omegas

    def gqpe(self, rho_e: np.ndarray, rng: np.random.Generator) -> tuple[float, np.ndarray]:
        if self.backend == "direct":
            probs = self.weights @ np.real(np.diagonal(rho_e))
            cum = np.cumsum(probs)
            j = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), cum.size - 1)
            amp = self.amps[j]
            post = amp[:, None] * rho_e * amp[None, :]
            return float(self.omegas[j]), post / np.real(np.trace(post))
        if self.backend == "circuit":
            h = self.h
            probs, states = circuit_distribution(h.from_eigenbasis(rho_e), h, self.cfg)
            cum = np.cumsum(probs)
            j = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), cum.size - 1)
            return float(self.omegas[j]), h.to_eigenbasis(states[j])
        # continuum Gaussian filter: pick an energy component, then smear it
        pops = np.real(np.diagonal(rho_e)).clip(0.0, None)
        cum = np.cumsum(pops)
        a = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), cum.size - 1)
        omega = self.energies[a] + rng.normal() / math.sqrt(2.0 * self.cfg.lam)
        # sqrt(g) up to a constant; normalization below removes it
        root = np.exp(-0.5 * self.cfg.lam * (omega - self.energies) ** 2)
        post = root[:, None] * rho_e * root[None, :]
        return float(omega), post / np.real(np.trace(post))

    def measure_prepare(self, rho_e: np.ndarray, rng: np.random.Generator) -> tuple[int, int, np.ndarray]:
        m, r, x = self.m, self.r, self.x
        blocks = (x @ rho_e @ x.conj().T).reshape(m, r, m, r)
        diag = blocks[np.arange(m), :, np.arange(m), :]
        probs = np.real(np.trace(diag, axis1=1, axis2=2)).clip(0.0, None)
        cum = np.cumsum(probs)
        if cum[-1] < 1e-14:
            raise ValueError("all local outcomes have vanishing probability; state is corrupt")
        d = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), m - 1)
        rest = diag[d] / probs[d]
        c = self.p.sample(d, rng.random())
        y = x[c * r:(c + 1) * r, :]
        return d, c, y.conj().T @ rest @ y


def _quantum_step_e(engine: _Engine, rho_e: np.ndarray, rng: np.random.Generator,
                    n_max: int) -> tuple[np.ndarray, QuantumStepRecord]:
    T = engine.af.temperature
    f = engine.f
    omega0, rho_e = engine.gqpe(rho_e, rng)
    ledger = QuantumDelayLedger(omega0, T, engine.af.delta, engine.cfg.shift)
    outcomes = []
    for n in range(n_max + 1):
        d, c, rho_e = engine.measure_prepare(rho_e, rng)
        outcomes.append((d, c))
        omega, rho_e = engine.gqpe(rho_e, rng)
        u = rng.random()
        ledger.push(omega)
        if u <= f(ledger.acceptance_argument()):
            rec = QuantumStepRecord(omega0, energy_correction(omega0, engine.cfg.lam, T),
                                    outcomes[0][0], n, ledger.x.tolist(), outcomes)
            return rho_e, rec
    partial = QuantumStepRecord(omega0, energy_correction(omega0, engine.cfg.lam, T),
                                outcomes[0][0], n_max, ledger.x.tolist(), outcomes, accepted=False)
    raise TruncationError(f"no acceptance within n_max={n_max} branches", partial)


def quantum_step(rho, h: SpectralHamiltonian, b: LocalObservable, p: ProposalKernel,
                 af: AcceptanceFunction, cfg: GqpeConfig, backend: str = "direct",
                 rng: np.random.Generator | None = None,
                 n_max: int = DEFAULT_N_MAX) -> tuple[np.ndarray, QuantumStepRecord]:
    """One measurement-based Metropolis step; returns the next state and its record.

    Uniform draws per step: one for the first GQPE outcome, then per branch one
    each for the local outcome, the proposal, the GQPE outcome and ``u``. The
    continuum back end draws an extra normal variate per GQPE.
    """
    if rng is None:
        raise ValueError("quantum_step needs an explicit rng")
    engine = _Engine(h, b, p, af, cfg, backend)
    rho_e, rec = _quantum_step_e(engine, h.to_eigenbasis(np.asarray(rho, dtype=complex)), rng, n_max)
    return h.from_eigenbasis(rho_e), rec


def run_quantum_chain(rho_init, h: SpectralHamiltonian, b: LocalObservable, p: ProposalKernel,
                      af: AcceptanceFunction, cfg: GqpeConfig, backend: str, steps: int, rng,
                      n_max: int = DEFAULT_N_MAX,
                      sink: Callable[[int, QuantumStepRecord, np.ndarray], None] | None = None,
                      ) -> tuple[list[QuantumStepRecord], np.ndarray]:
    """Run ``steps`` quantum steps, feeding each output state into the next.

    ``sink(k, record, rho)`` receives every record with the state it produced.
    Returns the records and the final state.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    engine = _Engine(h, b, p, af, cfg, backend)
    rho_e = h.to_eigenbasis(np.asarray(rho_init, dtype=complex))
    records = []
    for k in range(steps):
        try:
            rho_e, rec = _quantum_step_e(engine, rho_e, step_generator(rng, k), n_max)
        except TruncationError as exc:
            raise TruncationError(f"step {k}: {exc}", exc.record, step=k) from exc
        records.append(rec)
        if sink is not None:
            sink(k, rec, h.from_eigenbasis(rho_e))
    return records, h.from_eigenbasis(rho_e)


# -- exact branch superoperators ---------------------------------------------


def local_update_superoperator(h: SpectralHamiltonian, b: LocalObservable,
                               p: ProposalKernel) -> np.ndarray:
    """Row-major superoperator of ``rho -> sum_cd P(c|d) K_cd rho K_cd^dag`` in the eigenbasis.

    ``K_cd = |phi_c><phi_d| (x) I``.
    """
    v = h.eigenvectors
    eye = np.eye(b.rest_dim)
    out = np.zeros((h.dim**2, h.dim**2), dtype=complex)
    for c in range(b.subsystem_dim):
        for d in range(b.subsystem_dim):
            w = p.matrix[c, d]
            if w == 0:
                continue
            k = v.conj().T @ np.kron(np.outer(b.basis[:, c], b.basis[:, d].conj()), eye) @ v
            out += w * np.kron(k, k.conj())
    return out


def _grid_amplitudes(h: SpectralHamiltonian, cfg: GqpeConfig, backend: str):
    if backend == "direct":
        povm = build_direct_povm(h, cfg)
    elif backend == "circuit":
        povm = circuit_povm(h, cfg)
    else:
        raise ValueError(f"the oracle supports grid back ends only, not {backend!r}")
    return povm.omegas, povm.amplitudes


def branch_superoperator_oracle(h: SpectralHamiltonian, b: LocalObservable, p: ProposalKernel,
                                af: AcceptanceFunction, cfg: GqpeConfig, n: int,
                                backend: str = "direct",
                                max_terms: int = MAX_ORACLE_TERMS) -> np.ndarray:
    """Exact superoperator of the branch that halts after ``n`` rejections.

    Returned as a row-major matrix ``Q[(a, d), (b, c)] = Q_abcd`` in the
    eigenbasis, so that ``Q(rho)_ad = sum_bc Q_abcd rho_bc``. Frequencies are
    summed over the grid the back end produces; local outcomes enter through
    :func:`local_update_superoperator`.
    """
    if n < 0:
        raise ValueError("branch index must be >= 0")
    omegas, amps = _grid_amplitudes(h, cfg, backend)
    size = omegas.size
    dd = h.dim**2
    length = n + 2
    if size**length * dd > max_terms:
        raise OracleGuardError(
            f"oracle needs {size**length * dd:.3g} terms (> {max_terms:.3g})")
    values = []
    for k in range(length):
        shape = [1] * length
        shape[k] = size
        values.append(omegas.reshape(shape))
    weight = PathSurprisals(values, af, cfg.shift).halting_weight(n)
    weight = np.broadcast_to(weight, (size,) * length)
    # diagonal GQPE superoperators: m[j, (a, b)] = amp_j(a) conj(amp_j(b))
    m = (amps[:, :, None] * amps.conj()[:, None, :]).reshape(size, dd)
    t = weight
    for _ in range(length):
        t = np.tensordot(t, m, axes=([0], [0]))
    lsup = local_update_superoperator(h, b, p)
    letters = string.ascii_letters[:length]
    operands = [t] + [lsup] * (length - 1)
    subs = [letters] + [letters[k + 1] + letters[k] for k in range(length - 1)]
    return np.einsum(",".join(subs) + "->" + letters[-1] + letters[0], *operands, optimize=True)


def transition_tensor(q: np.ndarray) -> np.ndarray:
    """``Q_abcd`` as a 4-index array from the row-major superoperator."""
    dim = int(round(math.sqrt(q.shape[0])))
    return q.reshape(dim, dim, dim, dim).transpose(0, 2, 3, 1)


def apply_superoperator(q: np.ndarray, rho_e: np.ndarray) -> np.ndarray:
    dim = rho_e.shape[0]
    return (q @ rho_e.reshape(-1)).reshape(dim, dim)


def db_violation(q: np.ndarray, energies: np.ndarray, temperature: float) -> np.ndarray:
    """Entrywise ``|Q_abcd e^{-E_bc/T} - Q*_badc e^{-E_ad/T}|``."""
    qt = transition_tensor(q)
    mid = (energies[:, None] + energies[None, :]) / 2
    boltz = np.exp(-mid / temperature)
    lhs = qt * boltz[None, :, :, None]
    rhs = qt.transpose(1, 0, 3, 2).conj() * boltz[:, None, None, :]
    return np.abs(lhs - rhs)


def branch_superoperators(h, b, p, af, cfg, n_max: int, backend: str = "direct",
                          max_terms: int = MAX_ORACLE_TERMS) -> list[np.ndarray]:
    return [branch_superoperator_oracle(h, b, p, af, cfg, n, backend, max_terms)
            for n in range(n_max + 1)]


def check_quantum_db(h, b, p, af, cfg, n_max: int, backend: str = "direct",
                     branches: list[np.ndarray] | None = None) -> dict:
    """Detailed-balance report over branches ``n <= n_max``.

    ``max_abs_q`` is the largest ``|Q_abcd|`` over all branches; ``relative``
    is ``max_violation / max_abs_q``. Trace preservation of the summed
    branches is reported alongside, with the missing (tail) mass.
    """
    qs = branches if branches is not None else branch_superoperators(h, b, p, af, cfg, n_max, backend)
    per_branch = []
    for n, q in enumerate(qs):
        viol = db_violation(q, h.eigenvalues, af.temperature)
        per_branch.append({"n": n, "max_violation": float(viol.max()),
                           "max_abs_q": float(np.abs(q).max())})
    max_v = max(e["max_violation"] for e in per_branch)
    max_q = max(e["max_abs_q"] for e in per_branch)
    qt = transition_tensor(sum(qs))
    trace_map = np.einsum("abca->bc", qt)
    tail = np.eye(h.dim) - trace_map
    return {"max_violation": max_v, "max_abs_q": max_q, "relative": max_v / max_q,
            "per_branch": per_branch,
            "trace_tail_max": float(np.max(np.abs(tail))),
            "trace_tail_offdiag_max": float(np.max(np.abs(tail - np.diag(np.diag(tail)))))}


def check_stationarity(h, b, p, af, cfg, n_max: int, backend: str = "direct",
                       branches: list[np.ndarray] | None = None) -> dict:
    """Trace distance between the truncated chain applied to the Gibbs state and the Gibbs state.

    The missing tail mass is assigned to the Gibbs state (``residual``); since
    the true remainder is a positive operator of that trace, ``worst_case`` =
    ``residual + tail`` bounds the untruncated distance.
    """
    qs = branches if branches is not None else branch_superoperators(h, b, p, af, cfg, n_max, backend)
    rho_t = np.diag(gibbs_weights(h, af.temperature)).astype(complex)
    out = sum(apply_superoperator(q, rho_t) for q in qs)
    tail = float(1.0 - np.real(np.trace(out)))
    diff = out + tail * rho_t - rho_t
    residual = 0.5 * float(np.abs(np.linalg.eigvalsh((diff + diff.conj().T) / 2)).sum())
    return {"residual": residual, "tail": tail, "worst_case": residual + tail}


def continuum_acceptance_limit(energies, af: AcceptanceFunction, lam: float) -> np.ndarray:
    """Branch-0 acceptance ``E_u f(w1 - w0 + 1/(2 lam T))`` for eigenstates, by quadrature.

    ``w1 - w0`` is Gaussian with mean ``E_a - E_b`` and variance ``1/lam``.
    Entry ``[a, b]`` is for the move ``b -> a``.
    """
    energies = np.asarray(energies, dtype=float)
    x, wts = np.polynomial.hermite_e.hermegauss(80)
    wts = wts / wts.sum()
    shift = 1.0 / (2 * lam * af.temperature)
    diff = energies[:, None] - energies[None, :]
    return np.tensordot(af.f(diff[..., None] + x / math.sqrt(lam) + shift), wts, axes=1)
