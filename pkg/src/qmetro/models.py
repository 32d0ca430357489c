"""Hamiltonians, observables, Gibbs states and proposal kernels.

Everything here is immutable after construction and shared read-only by the
classical and quantum chains. Tensor products always put the measured
subsystem first: ``subsystem (x) rest``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
UNITARY_TOL = 1e-10
KERNEL_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed model definitions or invalid model data."""


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ModelError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


def _unitarity_error(u: np.ndarray) -> float:
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))


@dataclass(frozen=True)
class ClassicalSystem:
    """Finite state space with an energy per state."""

    energies: np.ndarray
    temperature: float

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ModelError("a classical system needs at least 2 states")
        if not np.all(np.isfinite(e)):
            raise ModelError("energies must be finite")
        if not self.temperature > 0:
            raise ModelError(f"temperature must be positive, got {self.temperature}")
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "temperature", float(self.temperature))

    @property
    def num_states(self) -> int:
        return self.energies.size

    def gibbs_weights(self) -> np.ndarray:
        w = np.exp(-(self.energies - self.energies.min()) / self.temperature)
        return w / w.sum()

    def gibbs_mean_energy(self) -> float:
        return float(self.gibbs_weights() @ self.energies)


@dataclass(frozen=True)
class SpectralHamiltonian:
    """Eigendecomposition ``H = sum_a E_a |psi_a><psi_a|`` with a spectral bound."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    e_max: float

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        vec = np.asarray(self.eigenvectors, dtype=complex)
        if vec.shape != (ev.size, ev.size):
            raise ModelError("eigenvector matrix does not match eigenvalue count")
        if np.any(np.diff(ev) < 0):
            raise ModelError("eigenvalues must be ascending")
        err = _unitarity_error(vec)
        if err > UNITARY_TOL:
            raise ModelError(f"eigenvectors not orthonormal (error {err:.3e})")
        if np.max(np.abs(ev)) > self.e_max + 1e-12:
            raise ModelError("spectral bound e_max smaller than max |E_a|")
        ev.setflags(write=False)
        vec.setflags(write=False)
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "eigenvectors", vec)
        object.__setattr__(self, "e_max", float(self.e_max))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def matrix(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T

    def to_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        return v.conj().T @ op @ v

    def from_eigenbasis(self, op: np.ndarray) -> np.ndarray:
        v = self.eigenvectors
        return v @ op @ v.conj().T

    def evolution(self, t: float) -> np.ndarray:
        """``exp(-i H t)`` from the eigendecomposition."""
        v = self.eigenvectors
        return (v * np.exp(-1j * self.eigenvalues * t)) @ v.conj().T


@dataclass(frozen=True)
class LocalObservable:
    """``B = sum_a beta_a |phi_a><phi_a| (x) I_rest`` on the first tensor factor."""

    basis: np.ndarray
    values: np.ndarray
    rest_dim: int = 1

    def __post_init__(self):
        basis = _as_matrix(np.asarray(self.basis, dtype=complex), "basis")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (basis.shape[0],):
            raise ModelError("need one observable value per basis vector")
        if not np.all(np.isfinite(values)):
            raise ModelError("observable values must be finite")
        err = _unitarity_error(basis)
        if err > UNITARY_TOL:
            raise ModelError(f"observable basis not unitary (error {err:.3e})")
        if self.rest_dim < 1:
            raise ModelError("rest_dim must be >= 1")
        basis.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rest_dim", int(self.rest_dim))

    @property
    def subsystem_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.subsystem_dim * self.rest_dim

    @classmethod
    def computational(cls, values: Sequence[float], rest_dim: int = 1) -> "LocalObservable":
        return cls(np.eye(len(values)), values, rest_dim)

    def projector(self, a: int) -> np.ndarray:
        phi = self.basis[:, a]
        return np.kron(np.outer(phi, phi.conj()), np.eye(self.rest_dim))


@dataclass(frozen=True)
class ProposalKernel:
    """Symmetric, column-stochastic proposal matrix ``P[a, b] = P(a|b)``."""

    matrix: np.ndarray
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = _as_matrix(np.asarray(self.matrix, dtype=float), "proposal kernel")
        if np.any(p < 0) or np.any(p > 1):
            raise ModelError("proposal probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=0) - 1)) > KERNEL_TOL:
            raise ModelError("proposal kernel columns must sum to 1")
        if np.max(np.abs(p - p.T)) > KERNEL_TOL:
            raise ModelError("proposal kernel must be symmetric, P(a|b) = P(b|a)")
        p.setflags(write=False)
        cum = np.cumsum(p, axis=0)
        cum[-1, :] = 1.0
        object.__setattr__(self, "matrix", p)
        object.__setattr__(self, "_cumulative", np.ascontiguousarray(cum.T))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def sample(self, b: int, u: float) -> int:
        """Draw ``a ~ P(.|b)`` by inversion of the uniform ``u``."""
        return int(np.searchsorted(self._cumulative[b], u, side="right"))

    @classmethod
    def uniform_other(cls, k: int) -> "ProposalKernel":
        """Propose each of the other ``k - 1`` states with equal probability."""
        if k < 2:
            raise ModelError("need at least 2 states")
        p = (np.ones((k, k)) - np.eye(k)) / (k - 1)
        return cls(p)


@dataclass(frozen=True)
class AcceptanceFunction:
    """Regularized Metropolis acceptance ``f(w) = (1 - delta) min(1, exp(-w/T))``."""

    temperature: float
    delta: float = 0.05
    kind: str = "regularized-metropolis"

    def __post_init__(self):
        if self.kind != "regularized-metropolis":
            raise ModelError(f"unknown acceptance kind {self.kind!r}")
        if not 0 < self.delta < 1:
            raise ModelError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.temperature > 0:
            raise ModelError(f"temperature must be positive, got {self.temperature}")

    def f(self, omega):
        omega = np.asarray(omega, dtype=float)
        return (1 - self.delta) * np.exp(-np.maximum(omega, 0.0) / self.temperature)

    def s(self, omega):
        return -np.log1p(-self.f(omega))


# -- operations -------------------------------------------------------------


def build_spectral(h_matrix, e_max_pad: float = 0.0) -> SpectralHamiltonian:
    """Diagonalize a Hermitian matrix.

    Raises
    ------
    ModelError
        If the input is not Hermitian to 1e-10; the message carries the
        offending norm.
    """
    h = _as_matrix(np.asarray(h_matrix, dtype=complex), "Hamiltonian")
    asym = float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0
    if asym > HERMITIAN_TOL:
        raise ModelError(f"Hamiltonian is not Hermitian: max|H - H^dag| = {asym:.3e}")
    if e_max_pad < 0:
        raise ModelError("e_max_pad must be nonnegative")
    try:
        ev, vec = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"eigensolver failed: {exc}") from exc
    return SpectralHamiltonian(ev, vec, float(np.max(np.abs(ev))) + e_max_pad)


def gibbs_weights(h: SpectralHamiltonian, t: float) -> np.ndarray:
    if not t > 0:
        raise ModelError(f"temperature must be positive, got {t}")
    w = np.exp(-(h.eigenvalues - h.eigenvalues[0]) / t)
    return w / w.sum()


def gibbs_state(h: SpectralHamiltonian, t: float) -> np.ndarray:
    """Thermal state ``exp(-H/t) / tr exp(-H/t)`` in the computational basis."""
    v = h.eigenvectors
    rho = (v * gibbs_weights(h, t)) @ v.conj().T
    return (rho + rho.conj().T) / 2


def gibbs_expectation(h: SpectralHamiltonian, t: float, obs) -> float:
    obs = _as_matrix(np.asarray(obs), "observable")
    if obs.shape[0] != h.dim:
        raise ModelError(f"observable dim {obs.shape[0]} != Hamiltonian dim {h.dim}")
    diag = np.einsum("ia,ij,ja->a", h.eigenvectors.conj(), obs, h.eigenvectors)
    return float(np.real(gibbs_weights(h, t) @ diag))


def observable_matrix(b: LocalObservable) -> np.ndarray:
    local = (b.basis * b.values) @ b.basis.conj().T
    return np.kron(local, np.eye(b.rest_dim))


def check_density_matrix(rho, tol: float = 1e-10) -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity; return the array."""
    rho = _as_matrix(np.asarray(rho, dtype=complex), "density matrix")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ModelError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ModelError(f"density matrix trace {np.trace(rho).real:.12f} != 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ModelError("density matrix has negative eigenvalues")
    return rho


# -- model builders ---------------------------------------------------------

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _site_op(op: np.ndarray, site: int, n: int) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(out, op if k == site else np.eye(2))
    return out


def tfim_matrix(n: int, coupling: float = 1.0, field: float = 0.5, periodic: bool = False) -> np.ndarray:
    """Transverse-field Ising chain ``-J sum Z_i Z_{i+1} - h sum X_i``."""
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    bonds = [(i, i + 1) for i in range(n - 1)]
    if periodic and n > 2:
        bonds.append((n - 1, 0))
    for i, j in bonds:
        h -= coupling * _site_op(PAULI_Z, i, n) @ _site_op(PAULI_Z, j, n)
    for i in range(n):
        h -= field * _site_op(PAULI_X, i, n)
    return h


def ising_lattice_energies(lx: int, ly: int, coupling: float = 1.0, field: float = 0.0,
                           periodic: bool = True) -> np.ndarray:
    """Energies of all ``2**(lx*ly)`` spin configurations.

    State index bit ``k`` (most significant first) is spin ``k`` in row-major
    order, 0 -> +1 and 1 -> -1.
    """
    n = lx * ly
    configs = 1 - 2 * np.array(list(product((0, 1), repeat=n)), dtype=float)
    bonds = []
    for y in range(ly):
        for x in range(lx):
            i = y * lx + x
            if periodic or x + 1 < lx:
                bonds.append((i, y * lx + (x + 1) % lx))
            if periodic or y + 1 < ly:
                bonds.append((i, ((y + 1) % ly) * lx + x))
    e = np.zeros(2**n)
    for i, j in bonds:
        e -= coupling * configs[:, i] * configs[:, j]
    e -= field * configs.sum(axis=1)
    return e


def single_flip_kernel(n_spins: int) -> ProposalKernel:
    """Flip one uniformly chosen spin."""
    dim = 2**n_spins
    p = np.zeros((dim, dim))
    idx = np.arange(dim)
    for k in range(n_spins):
        p[idx ^ (1 << k), idx] += 1.0 / n_spins
    return ProposalKernel(p)


def site_flip_kernels(n_spins: int) -> list[ProposalKernel]:
    """One deterministic flip kernel per spin, meant to be alternated across steps.

    Each kernel only connects a configuration to its partner with that spin
    flipped, so delayed branches can return to the input state quickly.
    """
    dim = 2**n_spins
    idx = np.arange(dim)
    out = []
    for k in range(n_spins):
        p = np.zeros((dim, dim))
        p[idx ^ (1 << k), idx] = 1.0
        out.append(ProposalKernel(p))
    return out


# -- JSON model files -------------------------------------------------------


def _decode_complex_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ModelError("dense matrices are nested [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def encode_complex_matrix(m) -> list:
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


@dataclass(frozen=True)
class QuantumModel:
    hamiltonian: SpectralHamiltonian
    matrix: np.ndarray


@dataclass(frozen=True)
class ClassicalModel:
    energies: np.ndarray
    kernels: tuple[ProposalKernel, ...]


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ModelError(f"model file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from exc


def load_model(path) -> QuantumModel | ClassicalModel:
    """Load a model definition file.

    Schemas::

        {"type": "dense", "matrix": [[[re, im], ...], ...], "e_max_pad": 0}
        {"type": "tfim", "n": 2, "coupling": 1.0, "field": 0.5, "periodic": false}
        {"type": "classical-ising", "lx": 3, "ly": 3, "coupling": 1.0,
         "field": 0.0, "periodic": true, "proposal": "sweep"}
        {"type": "classical", "energies": [...], "kernel": [[...], ...]}

    ``classical-ising`` alternates per-site flip kernels step by step
    (``"proposal": "sweep"``) or uses one kernel flipping a random spin
    (``"random-site"``). ``classical`` defaults to the uniform-other kernel when
    ``kernel`` is omitted; ``kernels`` may list several to alternate.
    """
    data = _read_json(path)
    kind = data.get("type")
    try:
        if kind == "dense":
            m = _decode_complex_matrix(data["matrix"])
            return QuantumModel(build_spectral(m, data.get("e_max_pad", 0.0)), m)
        if kind == "tfim":
            m = tfim_matrix(int(data["n"]), data.get("coupling", 1.0), data.get("field", 0.5),
                            bool(data.get("periodic", False)))
            return QuantumModel(build_spectral(m, data.get("e_max_pad", 0.0)), m)
        if kind == "classical-ising":
            lx, ly = int(data["lx"]), int(data["ly"])
            e = ising_lattice_energies(lx, ly, data.get("coupling", 1.0), data.get("field", 0.0),
                                       bool(data.get("periodic", True)))
            proposal = data.get("proposal", "sweep")
            if proposal == "sweep":
                return ClassicalModel(e, tuple(site_flip_kernels(lx * ly)))
            if proposal == "random-site":
                return ClassicalModel(e, (single_flip_kernel(lx * ly),))
            raise ModelError(f"unknown proposal {proposal!r}; use 'sweep' or 'random-site'")
        if kind == "classical":
            e = np.asarray(data["energies"], dtype=float)
            if "kernels" in data:
                kernels = tuple(ProposalKernel(k) for k in data["kernels"])
            elif "kernel" in data:
                kernels = (ProposalKernel(data["kernel"]),)
            else:
                kernels = (ProposalKernel.uniform_other(e.size),)
            if not kernels:
                raise ModelError("'kernels' must not be empty")
            for k in kernels:
                if k.size != e.size:
                    raise ModelError(f"kernel size {k.size} != number of states {e.size}")
            return ClassicalModel(e, kernels)
    except KeyError as exc:
        raise ModelError(f"model of type {kind!r} is missing field {exc}") from exc
    raise ModelError(f"unknown model type {kind!r}")


def load_observable(path) -> tuple[LocalObservable, ProposalKernel]:
    """Load ``{"values": [...], "rest_dim": r, "basis": optional dense, "kernel": optional}``.

    The kernel acts on the observable's basis labels and defaults to uniform-other.
    """
    data = _read_json(path)
    try:
        values = data["values"]
    except KeyError as exc:
        raise ModelError("observable file needs 'values'") from exc
    basis = data.get("basis")
    basis = _decode_complex_matrix(basis) if basis is not None else np.eye(len(values))
    obs = LocalObservable(basis, values, int(data.get("rest_dim", 1)))
    kern = data.get("kernel")
    kernel = ProposalKernel(kern) if kern is not None else ProposalKernel.uniform_other(len(values))
    return obs, kernel
