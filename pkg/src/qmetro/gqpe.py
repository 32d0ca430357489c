"""Gaussian-filtered quantum phase estimation (GQPE).

Covers the filter, resource planning, the centered time/frequency grids and
their Fourier transform, the ancilla Gaussian state, and two measurement back
ends: a direct POVM on the frequency grid and a density-matrix simulation of
the phase-estimation circuit.

Grid labels are sorted: ``t_j = (2j - 2^p + 1) t_max / 2^p`` and
``w_j = (2j - 2^p + 1) w_max / 2^p``. In terms of register bits, ``t`` reads
its bits most-significant first and ``w`` least-significant first (the usual
bit reversal between the two registers of a Fourier transform).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .models import SpectralHamiltonian

P_CAP = 16
CQFT_P_CAP = 14
SIMULATOR_ENTRY_CAP = 2**20


class GqpeConfigError(ValueError):
    pass


def gaussian_filter(omega, lam: float):
    """Normalized Gaussian ``sqrt(lam/pi) exp(-lam omega^2)``."""
    if not lam > 0:
        raise GqpeConfigError(f"lambda must be positive, got {lam}")
    omega = np.asarray(omega, dtype=float)
    return math.sqrt(lam / math.pi) * np.exp(-lam * omega**2)


@dataclass(frozen=True)
class GqpeConfig:
    """Filter width, time window and register sizes for GQPE.

    ``temperature`` is the chain temperature the grid was matched to.
    """

    lam: float
    t_max: float
    p: int
    q: int
    z: int
    epsilon: float
    e_max: float
    temperature: float

    def __post_init__(self):
        if not (self.lam > 0 and self.t_max > 0 and self.temperature > 0):
            raise GqpeConfigError("lambda, t_max and temperature must be positive")
        if self.p < 1 or self.q < 1 or self.q > self.p:
            raise GqpeConfigError(f"need 1 <= q <= p, got p={self.p}, q={self.q}")
        if self.z < 1:
            raise GqpeConfigError("z must be a positive integer")
        if self.e_max < 0:
            raise GqpeConfigError("e_max must be nonnegative")
        if self.e_max > self.omega_max:
            raise GqpeConfigError(
                f"spectral bound {self.e_max} exceeds the frequency interval {self.omega_max}")

    @property
    def omega_max(self) -> float:
        return 2.0 ** (self.p - 1) * math.pi / self.t_max

    @property
    def d_omega(self) -> float:
        return math.pi / self.t_max

    @property
    def shift(self) -> float:
        """The acceptance shift ``1/(2 lambda T)``."""
        return 1.0 / (2.0 * self.lam * self.temperature)

    @property
    def shift_in_steps(self) -> float:
        return self.shift / self.d_omega

    def grid_matching_error(self) -> float:
        """Relative deviation of ``t_max`` from ``2 pi lambda T / z``."""
        target = 2 * math.pi * self.lam * self.temperature / self.z
        return abs(self.t_max - target) / target

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omega_max"] = self.omega_max
        d["d_omega"] = self.d_omega
        d["shift"] = self.shift
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GqpeConfig":
        fields = ("lam", "t_max", "p", "q", "z", "epsilon", "e_max", "temperature")
        try:
            return cls(**{k: d[k] for k in fields})
        except KeyError as exc:
            raise GqpeConfigError(f"config is missing {exc}") from exc


def estimated_error(lam: float, t_max: float, p: int, q: int, e_max: float) -> float:
    """Leading-order filter error from the three truncations.

    Time-window aliasing, truncation of the prepared Gaussian to ``2^q`` points
    (half-width ``2^(q-p) w_max``), and wrap-around of the frequency interval.
    """
    w_max = 2.0 ** (p - 1) * math.pi / t_max
    exponent = min(t_max**2 / (2 * lam), lam * (2.0 ** (q - p) * w_max) ** 2,
                   lam * (e_max - w_max) ** 2)
    return math.exp(-exponent)


def plan_resources(epsilon: float, e_max: float, temperature: float, z: int = 1,
                   p_cap: int = P_CAP) -> GqpeConfig:
    """Resource-minimizing GQPE configuration for a target filter error.

    ``lambda = z^2 ln(1/eps) / (2 pi^2 T^2)`` and ``t_max = z ln(1/eps) / (pi T)``
    satisfy both ``t_max = sqrt(2 lambda ln(1/eps))`` and grid matching
    ``t_max = 2 pi lambda T / z``. ``p`` grows past its estimate until the
    spectrum fits inside the frequency interval.
    """
    if not 0 < epsilon < 1:
        raise GqpeConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not e_max > 0:
        raise GqpeConfigError("e_max must be positive")
    if not temperature > 0:
        raise GqpeConfigError("temperature must be positive")
    if int(z) != z or z < 1:
        raise GqpeConfigError("z must be a positive integer")
    log_inv = math.log(1 / epsilon)
    lam = z**2 * log_inv / (2 * math.pi**2 * temperature**2)
    t_max = z * log_inv / (math.pi * temperature)
    q = max(1, math.ceil(math.log2(log_inv)))
    p = max(q, math.ceil(math.log2(e_max * t_max + log_inv)))
    while e_max > 2.0 ** (p - 1) * math.pi / t_max:
        p += 1
    if p > p_cap:
        raise GqpeConfigError(f"plan needs p={p} ancilla qubits (cap {p_cap}); infeasible at desk scale")
    return GqpeConfig(lam, t_max, p, q, int(z), epsilon, e_max, temperature)


def config_for_lambda(lam: float, temperature: float, e_max: float, z: int = 1) -> GqpeConfig:
    """Grid-matched configuration for a prescribed ``lambda`` (no register cap).

    Used for the large-``lambda`` limit, where only the continuum back end is
    practical; ``epsilon`` is the estimated filter error.
    """
    t_max = 2 * math.pi * lam * temperature / z
    p = 1
    while e_max > 2.0 ** (p - 1) * math.pi / t_max:
        p += 1
    q = p
    eps = estimated_error(lam, t_max, p, q, e_max)
    return GqpeConfig(lam, t_max, p, q, z, min(max(eps, 1e-300), 0.5), e_max, temperature)


# -- grids and transforms ---------------------------------------------------


@dataclass(frozen=True)
class FrequencyGrid:
    omegas: np.ndarray
    times: np.ndarray
    d_omega: float
    d_time: float


def _check_grid_size(cfg: GqpeConfig, cap: int = 24) -> None:
    if cfg.p > cap:
        raise GqpeConfigError(f"p={cfg.p} too large to materialize a grid (cap {cap})")


def frequency_grid(cfg: GqpeConfig) -> FrequencyGrid:
    _check_grid_size(cfg)
    size = 2**cfg.p
    odd = 2 * np.arange(size) - size + 1
    return FrequencyGrid(odd * cfg.omega_max / size, odd * cfg.t_max / size,
                         cfg.d_omega, cfg.t_max / 2 ** (cfg.p - 1))


def bitwise_grid(cfg: GqpeConfig) -> FrequencyGrid:
    """Grids evaluated bit by bit; bit ``n`` of label ``j`` is ``(j >> (p - n)) & 1``."""
    _check_grid_size(cfg)
    p = cfg.p
    j = np.arange(2**p)
    t = np.zeros(j.size)
    w = np.zeros(j.size)
    for n in range(1, p + 1):
        sign = (-1.0) ** ((j >> (p - n)) & 1)
        t -= cfg.t_max * sign / 2**n
        w -= cfg.omega_max * sign / 2 ** (p - n + 1)
    return FrequencyGrid(w, t, cfg.d_omega, cfg.t_max / 2 ** (p - 1))


def cqft_matrix(cfg: GqpeConfig) -> np.ndarray:
    """Centered Fourier transform ``<w_k|CQFT|t_j> = exp(i w_k t_j) / 2^(p/2)``."""
    if cfg.p > CQFT_P_CAP:
        raise GqpeConfigError(f"p={cfg.p} exceeds the CQFT cap {CQFT_P_CAP}")
    grid = frequency_grid(cfg)
    return np.exp(1j * np.outer(grid.omegas, grid.times)) / 2 ** (cfg.p / 2)


def prepare_ancilla(cfg: GqpeConfig) -> np.ndarray:
    """Frequency-register state with amplitudes ``sqrt(g)`` on the central ``2^q`` points."""
    grid = frequency_grid(cfg)
    start = 2 ** (cfg.p - 1) - 2 ** (cfg.q - 1)
    amp = np.zeros(2**cfg.p)
    sl = slice(start, start + 2**cfg.q)
    amp[sl] = np.sqrt(gaussian_filter(grid.omegas[sl], cfg.lam))
    return amp / np.linalg.norm(amp)


def effective_filter(cfg: GqpeConfig) -> Callable[[np.ndarray], np.ndarray]:
    """The filter realized by the finite registers, as a function of ``omega``."""
    grid = frequency_grid(cfg)
    start = 2 ** (cfg.p - 1) - 2 ** (cfg.q - 1)
    support = grid.omegas[start:start + 2**cfg.q]
    root_g = np.sqrt(gaussian_filter(support, cfg.lam))
    times = grid.times
    size = 2**cfg.p

    def g_tilde(omega):
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        out = np.empty(omega.shape)
        for lo in range(0, omega.size, 4096):
            w = omega.ravel()[lo:lo + 4096]
            diff = support[None, :] - w[:, None]
            kernel = np.cos(diff[:, :, None] * times[None, None, :]).sum(axis=2) / size
            out.ravel()[lo:lo + 4096] = (kernel @ root_g) ** 2
        return out

    return g_tilde


def filter_sweep(cfg: GqpeConfig, points: int = 20001):
    """``(omega, g, g_tilde, |g - g_tilde| / g(0))`` over ``|omega| <= e_max + w_max``."""
    bound = cfg.e_max + cfg.omega_max
    omega = np.linspace(-bound, bound, points)
    g = gaussian_filter(omega, cfg.lam)
    gt = effective_filter(cfg)(omega)
    return omega, g, gt, np.abs(g - gt) / gaussian_filter(0.0, cfg.lam)


def filter_error(cfg: GqpeConfig, points: int = 20001) -> float:
    return float(filter_sweep(cfg, points)[3].max())


# -- back ends --------------------------------------------------------------


@dataclass(frozen=True)
class PovmSet:
    """Energy POVM diagonal in the eigenbasis of ``hamiltonian``.

    ``amplitudes[j, a]`` is the Kraus amplitude of outcome ``omegas[j]`` on
    eigenstate ``a``; the operators are ``M_j = V diag(amplitudes[j]) V^dag``.
    """

    omegas: np.ndarray
    amplitudes: np.ndarray
    hamiltonian: SpectralHamiltonian

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def operator(self, j: int) -> np.ndarray:
        v = self.hamiltonian.eigenvectors
        return (v * self.amplitudes[j]) @ v.conj().T

    @property
    def operators(self) -> list[np.ndarray]:
        return [self.operator(j) for j in range(self.omegas.size)]


def direct_weights(omegas: np.ndarray, energies: np.ndarray, lam: float) -> np.ndarray:
    """``c_j(E) = g(w_j - E) / sum_k g(w_k - E)``, shape ``(grid, energies)``."""
    g = gaussian_filter(omegas[:, None] - energies[None, :], lam)
    return g / g.sum(axis=0, keepdims=True)


def build_direct_povm(h: SpectralHamiltonian, cfg: GqpeConfig) -> PovmSet:
    if h.e_max > cfg.omega_max:
        raise GqpeConfigError(
            f"spectral bound {h.e_max} exceeds the frequency interval {cfg.omega_max}")
    omegas = frequency_grid(cfg).omegas
    return PovmSet(omegas, np.sqrt(direct_weights(omegas, h.eigenvalues, cfg.lam)), h)


def _sample_index(probs: np.ndarray, rng: np.random.Generator, floor: float = 1e-300,
                  tries: int = 8) -> int:
    cum = np.cumsum(probs)
    for _ in range(tries):
        j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        j = min(j, probs.size - 1)
        if probs[j] > floor:
            return j
    raise RuntimeError("repeatedly sampled a zero-probability outcome")


def direct_distribution(rho: np.ndarray, povm: PovmSet) -> np.ndarray:
    rho_e = povm.hamiltonian.to_eigenbasis(np.asarray(rho))
    probs = povm.weights @ np.real(np.diag(rho_e))
    return np.clip(probs, 0.0, None)


def povm_measure(rho, povm: PovmSet, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Sample an outcome and return ``(omega_j, M_j rho M_j^dag / prob)``."""
    rho = np.asarray(rho, dtype=complex)
    h = povm.hamiltonian
    if rho.shape != (h.dim, h.dim):
        raise ValueError("state and POVM dimensions differ")
    rho_e = h.to_eigenbasis(rho)
    probs = np.clip(povm.weights @ np.real(np.diag(rho_e)), 0.0, None)
    j = _sample_index(probs, rng)
    amp = povm.amplitudes[j]
    post = amp[:, None] * rho_e * amp.conj()[None, :] / probs[j]
    return float(povm.omegas[j]), h.from_eigenbasis(post)


def _controlled_evolution(h: SpectralHamiltonian, times: np.ndarray) -> np.ndarray:
    blocks = [h.evolution(t) for t in times]
    d = h.dim
    out = np.zeros((times.size * d, times.size * d), dtype=complex)
    for j, b in enumerate(blocks):
        out[j * d:(j + 1) * d, j * d:(j + 1) * d] = b
    return out


def circuit_distribution(rho, h: SpectralHamiltonian, cfg: GqpeConfig,
                         entry_cap: int = SIMULATOR_ENTRY_CAP):
    """Simulate the GQPE circuit on ``ancilla (x) system`` density matrices.

    The Gaussian frequency state is mapped to the time register by the inverse
    CQFT, the time register controls ``exp(-i H t_j)``, the CQFT maps back and
    the ancilla is measured in the frequency basis. Returns the outcome
    probabilities and the normalized system states for every outcome.
    """
    rho = np.asarray(rho, dtype=complex)
    d = h.dim
    size = 2**cfg.p
    if (size * d) ** 2 > entry_cap:
        raise GqpeConfigError(f"joint density matrix of dim {size * d} exceeds the simulator cap")
    if h.e_max > cfg.omega_max:
        raise GqpeConfigError("spectral bound exceeds the frequency interval")
    anc = prepare_ancilla(cfg)
    joint = np.kron(np.outer(anc, anc), rho)
    f = np.kron(cqft_matrix(cfg), np.eye(d))
    cu = _controlled_evolution(h, frequency_grid(cfg).times)
    u = f @ cu @ f.conj().T
    joint = u @ joint @ u.conj().T
    blocks = joint.reshape(size, d, size, d)
    diag_blocks = blocks[np.arange(size), :, np.arange(size), :]
    probs = np.clip(np.real(np.trace(diag_blocks, axis1=1, axis2=2)), 0.0, None)
    states = np.zeros_like(diag_blocks)
    nz = probs > 0
    states[nz] = diag_blocks[nz] / probs[nz, None, None]
    return probs, states


def circuit_gqpe_measure(rho, h: SpectralHamiltonian, cfg: GqpeConfig,
                         rng: np.random.Generator) -> tuple[float, np.ndarray]:
    probs, states = circuit_distribution(rho, h, cfg)
    j = _sample_index(probs, rng)
    return float(frequency_grid(cfg).omegas[j]), states[j]


def circuit_povm(h: SpectralHamiltonian, cfg: GqpeConfig) -> PovmSet:
    """Kraus amplitudes of the simulated circuit, read off eigenstate by eigenstate.

    The circuit acts diagonally in the eigenbasis, so its Kraus amplitude on
    ``|psi_a>`` is the ancilla amplitude left after running it on that
    eigenstate (real, because both grids are symmetric).
    """
    size = 2**cfg.p
    anc = prepare_ancilla(cfg)
    f = cqft_matrix(cfg)
    times = frequency_grid(cfg).times
    amps = np.empty((size, h.dim))
    for a, e in enumerate(h.eigenvalues):
        out = f @ (np.exp(-1j * e * times) * (f.conj().T @ anc))
        amps[:, a] = np.real(out)
    return PovmSet(frequency_grid(cfg).omegas, amps, h)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
