"""Rejection-free classical and measurement-based quantum Metropolis sampling."""

from .classical_chain import (ClassicalStepRecord, OracleGuardError, TruncationError,
                              branch_kernel_oracle, check_classical_db, classical_step,
                              run_classical_chain)
from .gqpe import (GqpeConfig, GqpeConfigError, PovmSet, build_direct_povm, circuit_gqpe_measure,
                   effective_filter, filter_error, frequency_grid, gaussian_filter, plan_resources,
                   povm_measure)
from .models import (AcceptanceFunction, ClassicalSystem, LocalObservable, ModelError,
                     ProposalKernel, SpectralHamiltonian, build_spectral, gibbs_expectation,
                     gibbs_state, load_model, load_observable)
from .quantum_chain import (QuantumStepRecord, branch_superoperator_oracle, check_quantum_db,
                            check_stationarity, energy_correction, quantum_step, run_quantum_chain)
from .rng import RngStreams
from .stats import EstimateReport, autocorrelation_time, estimate

__all__ = [
    "AcceptanceFunction", "ClassicalStepRecord", "ClassicalSystem", "EstimateReport",
    "GqpeConfig", "GqpeConfigError", "LocalObservable", "ModelError", "OracleGuardError",
    "PovmSet", "ProposalKernel", "QuantumStepRecord", "RngStreams", "SpectralHamiltonian",
    "TruncationError", "autocorrelation_time", "branch_kernel_oracle",
    "branch_superoperator_oracle", "build_direct_povm", "build_spectral", "check_classical_db",
    "check_quantum_db", "check_stationarity", "circuit_gqpe_measure", "classical_step",
    "effective_filter", "energy_correction", "estimate", "filter_error", "frequency_grid",
    "gaussian_filter", "gibbs_expectation", "gibbs_state", "load_model", "load_observable",
    "plan_resources", "povm_measure", "quantum_step", "run_classical_chain", "run_quantum_chain",
]
