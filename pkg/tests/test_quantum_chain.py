import dataclasses
import math

import numpy as np
import pytest

from qmetro.classical_chain import TruncationError
from qmetro.gqpe import GqpeConfigError, build_direct_povm, config_for_lambda, plan_resources
from qmetro.models import (AcceptanceFunction, LocalObservable, ProposalKernel, build_spectral,
                           gibbs_expectation, gibbs_state, gibbs_weights, tfim_matrix)
from qmetro.quantum_chain import (apply_superoperator, branch_superoperator_oracle,
                                  branch_superoperators, check_grid_matching, check_quantum_db,
                                  check_stationarity, continuum_acceptance_limit,
                                  energy_correction, local_update_superoperator, measure_local,
                                  prepare_local, quantum_step, run_quantum_chain,
                                  transition_tensor)
from qmetro.rng import RngStreams

Z = np.diag([1.0, -1.0])
AF = AcceptanceFunction(1.0, 0.05)


def qubit_z():
    return (build_spectral(Z), LocalObservable.computational([1.0, -1.0]),
            ProposalKernel.uniform_other(2))


def tfim_pair():
    h = build_spectral(tfim_matrix(2))
    return h, LocalObservable.computational([1.0, -1.0], rest_dim=2), ProposalKernel.uniform_other(2)


def random_state(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


# -- small pieces ---------------------------------------------------------------


def test_energy_correction_limits():
    assert energy_correction(0.0, 0.4, 1.3) == pytest.approx(1 / (2 * 0.4 * 1.3))
    assert energy_correction(0.8, 1e12, 1.0) == pytest.approx(0.8, abs=1e-10)
    lam, t = 0.5, 2.0
    assert energy_correction(1.0, lam, t) == pytest.approx(0.5 + math.exp(-1 / 8))


def test_grid_matching_is_enforced():
    cfg = plan_resources(1e-2, 1.0, 1.0)
    check_grid_matching(cfg, AF)
    with pytest.raises(GqpeConfigError, match="temperature"):
        check_grid_matching(cfg, AcceptanceFunction(2.0, 0.05))
    with pytest.raises(GqpeConfigError, match="grid matching"):
        check_grid_matching(dataclasses.replace(cfg, t_max=cfg.t_max * 1.1), AF)
    with pytest.raises(GqpeConfigError, match="integer"):
        check_grid_matching(plan_resources(1e-2, 1.0, 1.0, z=2), AF)
    h, b, p = qubit_z()
    with pytest.raises(GqpeConfigError):
        quantum_step(np.eye(2) / 2, h, b, p, AcceptanceFunction(2.0, 0.05), cfg,
                     rng=np.random.default_rng(0))


def test_measure_and_prepare_local():
    b = LocalObservable.computational([1.0, -1.0], rest_dim=2)
    rest = np.diag([0.25, 0.75]).astype(complex)
    rho = prepare_local(rest, 1, b)
    d, post = measure_local(rho, b, np.random.default_rng(0))
    assert d == 1
    np.testing.assert_allclose(post, rest)


def test_local_update_is_trace_preserving():
    h, b, p = tfim_pair()
    lsup = transition_tensor(local_update_superoperator(h, b, p))
    np.testing.assert_allclose(np.einsum("abca->bc", lsup), np.eye(4), atol=1e-12)


# -- exact branch superoperators ---------------------------------------------


def test_branch_zero_closed_form_with_trivial_local_update():
    # one local outcome and P = [[1]]: the branch is two GQPEs weighted by f(w1 - w0 + shift)
    h = build_spectral(np.diag([-0.7, 0.2, 0.9]))
    b = LocalObservable.computational([0.0], rest_dim=3)
    p = ProposalKernel(np.array([[1.0]]))
    cfg = plan_resources(1e-1, h.e_max, 1.0)
    povm = build_direct_povm(h, cfg)
    w, amp = povm.omegas, povm.amplitudes
    acc = AF.f(w[None, :] - w[:, None] + cfg.shift)  # [j0, j1]
    pair = amp[:, :, None] * amp[:, None, :]  # [j, a, b]
    expected = np.einsum("xy,xab,yab->ab", acc, pair, pair)
    rho = random_state(3, np.random.default_rng(0))
    q0 = branch_superoperator_oracle(h, b, p, AF, cfg, 0)
    np.testing.assert_allclose(apply_superoperator(q0, rho), expected * rho, atol=1e-13)


def test_detailed_balance_when_energies_are_degenerate():
    h = build_spectral(0.3 * np.eye(2))
    b = LocalObservable.computational([1.0, -1.0])
    cfg = plan_resources(1e-2, h.e_max, 1.0)
    rep = check_quantum_db(h, b, ProposalKernel.uniform_other(2), AF, cfg, 2)
    assert rep["max_violation"] <= 1e-12
    st = check_stationarity(h, b, ProposalKernel.uniform_other(2), AF, cfg, 2)
    assert st["residual"] <= 1e-12


def test_detailed_balance_improves_with_epsilon_and_detuning_breaks_it():
    h, b, p = qubit_z()
    rel = []
    for eps in (1e-1, 1e-2, 1e-3):
        rel.append(check_quantum_db(h, b, p, AF, plan_resources(eps, h.e_max, 1.0), 2)["relative"])
    assert rel[0] > rel[1] > rel[2]
    assert rel[2] <= 10 * 1e-3
    cfg = plan_resources(1e-3, h.e_max, 1.0)
    detuned = dataclasses.replace(cfg, t_max=cfg.t_max * 1.13)
    assert check_quantum_db(h, b, p, AF, detuned, 2)["relative"] >= 10 * rel[2]


def test_branches_are_sub_trace_preserving():
    h, b, p = qubit_z()
    cfg = plan_resources(1e-1, h.e_max, 1.0)
    qs = branch_superoperators(h, b, p, AF, cfg, 3)
    last = np.inf
    for n in range(len(qs)):
        trace_map = np.einsum("abca->bc", transition_tensor(sum(qs[:n + 1])))
        gap = np.eye(2) - trace_map
        evals = np.linalg.eigvalsh((gap + gap.conj().T) / 2)
        assert evals.min() >= -1e-12
        assert evals.max() <= last + 1e-12
        last = evals.max()


def test_stationarity_residual_bounded_by_tail():
    h, b, p = qubit_z()
    cfg = plan_resources(1e-3, h.e_max, 1.0)
    st = check_stationarity(h, b, p, AF, cfg, 2)
    assert 0 < st["tail"] < 1
    assert st["residual"] <= 10 * 1e-3 + st["tail"]


def test_continuum_acceptance_limit():
    e = np.array([-1.0, 0.4])
    big = continuum_acceptance_limit(e, AF, 1e12)
    # f has a kink at 0, so the error there is first order in 1/sqrt(lam)
    np.testing.assert_allclose(big, AF.f(e[:, None] - e[None, :]), atol=1e-6)
    small = continuum_acceptance_limit(e, AF, 0.5)
    assert np.all(small <= 1 - AF.delta + 1e-12)


# -- trajectories --------------------------------------------------------------


def test_step_output_is_a_state_and_outcomes_on_grid():
    h, b, p = tfim_pair()
    cfg = plan_resources(1e-2, h.e_max, 1.0)
    grid = set(build_direct_povm(h, cfg).omegas.tolist())
    rng = np.random.default_rng(3)
    rho = random_state(4, rng)
    for backend in ("direct", "circuit"):
        for _ in range(10):
            try:
                out, rec = quantum_step(rho, h, b, p, AF, cfg, backend, rng, n_max=200)
            except TruncationError:
                continue
            assert np.trace(out).real == pytest.approx(1.0)
            assert np.linalg.eigvalsh(out).min() >= -1e-12
            assert set(rec.omegas) <= grid
            assert rec.omega0_corrected == energy_correction(rec.omega0_raw, cfg.lam, 1.0)


def test_step_requires_explicit_rng():
    h, b, p = qubit_z()
    with pytest.raises(ValueError):
        quantum_step(np.eye(2) / 2, h, b, p, AF, plan_resources(1e-1, 1.0, 1.0))


def test_trajectories_match_branch_superoperators():
    # E[rho' 1{halt at n <= 2}] = sum_{n <= 2} Q_n(rho); truncated runs contribute nothing
    h, b, p = qubit_z()
    cfg = plan_resources(1e-1, h.e_max, 1.0)
    rho = random_state(2, np.random.default_rng(8))
    qs = branch_superoperators(h, b, p, AF, cfg, 2)
    expected = sum(apply_superoperator(q, h.to_eigenbasis(rho)) for q in qs)
    trials = 6000
    acc = np.zeros((2, 2), dtype=complex)
    sq = np.zeros((2, 2))
    streams = RngStreams(21)
    for k in range(trials):
        try:
            out, _ = quantum_step(rho, h, b, p, AF, cfg, "direct", streams.for_step(k), n_max=2)
        except TruncationError:
            continue
        out = h.to_eigenbasis(out)
        acc += out
        sq += np.abs(out) ** 2
    mean = acc / trials
    sigma = np.sqrt(np.maximum(sq / trials - np.abs(mean) ** 2, 0) / trials)
    assert np.all(np.abs(mean - expected) <= 4 * sigma + 1e-9)


def test_chain_is_deterministic():
    h, b, p = tfim_pair()
    cfg = plan_resources(1e-1, h.e_max, 1.0)
    rho = np.eye(4) / 4

    def run(seed):
        try:
            recs, out = run_quantum_chain(rho, h, b, p, AF, cfg, "direct", 30, RngStreams(seed),
                                          n_max=300)
        except TruncationError as exc:
            return exc.step, exc.record.omegas
        return [(r.omega0_raw, r.branches, tuple(r.omegas)) for r in recs], out.tolist()

    assert run(4) == run(4)
    assert run(4) != run(5)


def test_first_measurements_on_gibbs_state():
    # GQPE is diagonal in the eigenbasis, so from rho_T the first outcomes follow rho_T
    h, b, p = tfim_pair()
    cfg = plan_resources(1e-2, h.e_max, 1.0)
    povm = build_direct_povm(h, cfg)
    pops = gibbs_weights(h, 1.0)
    rho_t = gibbs_state(h, 1.0)
    exact_w0 = float(povm.omegas @ povm.weights @ pops)
    exact_d0 = gibbs_expectation(h, 1.0, np.kron(np.diag([1.0, 0.0]), np.eye(2)))
    streams = RngStreams(12)
    w0, d0 = [], []
    trials = 3000
    for k in range(trials):
        try:
            _, rec = quantum_step(rho_t, h, b, p, AF, cfg, "direct", streams.for_step(k), n_max=5)
        except TruncationError as exc:
            rec = exc.record
        w0.append(rec.omega0_raw)
        d0.append(rec.d0 == 0)
    w0 = np.array(w0)
    assert abs(w0.mean() - exact_w0) <= 4 * w0.std() / math.sqrt(trials)
    # the raw grid mean already sits close to tr(rho_T H)
    assert abs(exact_w0 - gibbs_expectation(h, 1.0, h.matrix())) < 0.05
    sigma = math.sqrt(exact_d0 * (1 - exact_d0) / trials)
    assert abs(np.mean(d0) - exact_d0) <= 4 * sigma


def test_continuum_backend_recovers_classical_acceptance():
    h = build_spectral(np.diag([-1.0, 0.5]))
    b = LocalObservable.computational([1.0, -1.0])
    p = ProposalKernel.uniform_other(2)
    cfg = config_for_lambda(1e12, 1.0, h.e_max)
    streams = RngStreams(2)
    accepted = 0
    trials = 4000
    rho = np.diag([1.0, 0.0]).astype(complex)
    for k in range(trials):
        try:
            _, rec = quantum_step(rho, h, b, p, AF, cfg, "continuum", streams.for_step(k), n_max=0)
            accepted += 1
        except TruncationError:
            pass
    f = AF.f(1.5)
    assert abs(accepted / trials - f) <= 4 * math.sqrt(f * (1 - f) / trials)
