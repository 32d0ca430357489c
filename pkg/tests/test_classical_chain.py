import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmetro.classical_chain import (OracleGuardError, TruncationError, branch_kernel_oracle,
                                    branch_kernels, check_classical_db, classical_step,
                                    db_violation, run_classical_chain, total_kernel)
from qmetro.delay import DelayLedger, QuantumDelayLedger
from qmetro.models import (AcceptanceFunction, ClassicalSystem, ProposalKernel,
                           ising_lattice_energies, site_flip_kernels)
from qmetro.paths import PathSurprisals
from qmetro.rng import RngStreams


class ScriptedRng:
    """Returns a fixed cycle of uniforms."""

    def __init__(self, values):
        self.values = list(values)
        self.i = 0

    def random(self):
        v = self.values[self.i % len(self.values)]
        self.i += 1
        return v


def random_symmetric_kernel(k, rng):
    a = rng.random((k, k))
    a = a + a.T
    np.fill_diagonal(a, 0)
    lap = np.diag(a.sum(axis=1)) - a
    return ProposalKernel(np.eye(k) - lap / (1.2 * lap.diagonal().max()))


SWAP = ProposalKernel(np.array([[0.0, 1.0], [1.0, 0.0]]))


# -- surprisal ledgers --------------------------------------------------------


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=9), st.floats(0.3, 3),
       st.floats(0.01, 0.3), st.sampled_from([0.0, 0.4, 2.0]))
@settings(max_examples=60, deadline=None)
def test_ledger_matches_top_down_surprisals(xs, t, delta, shift):
    af = AcceptanceFunction(t, delta)
    paths = PathSurprisals([np.float64(v) for v in xs], af, shift)
    ledger = (QuantumDelayLedger(xs[0], t, delta, shift) if shift
              else DelayLedger(xs[0], t, delta))
    for n in range(len(xs) - 1):
        ledger.push(xs[n + 1])
        for i in range(n):
            assert ledger.forward[i] == pytest.approx(float(paths.S(i, n)), abs=1e-9)
        for m in range(1, n + 1):
            assert ledger.reverse[m] == pytest.approx(float(paths.S(n + 1, m)), abs=1e-9)
        if shift:
            for i in range(n):
                assert ledger.forward_bar[i] == pytest.approx(float(paths.Sbar(i, n)), abs=1e-9)
        weight = float(paths.halting_weight(n)) / np.exp(-float(paths.S(0, n)))
        assert af.f(ledger.acceptance_argument()) == pytest.approx(weight, rel=1e-9, abs=1e-300)


def test_first_branch_argument_is_energy_difference():
    ledger = DelayLedger(0.3, 1.0, 0.05)
    ledger.push(1.1)
    assert ledger.acceptance_argument() == pytest.approx(0.8)
    q = QuantumDelayLedger(0.3, 1.0, 0.05, shift=0.5)
    q.push(1.1)
    assert q.acceptance_argument() == pytest.approx(1.3)


def test_delay_weight_is_survival_probability():
    # exp(-S(0, n)) is the product of the rejection probabilities of earlier branches
    rng = np.random.default_rng(1)
    xs = rng.normal(size=8)
    af = AcceptanceFunction(0.7, 0.05)
    ledger = DelayLedger(xs[0], 0.7, 0.05)
    survive = 1.0
    for n in range(7):
        ledger.push(xs[n + 1])
        assert np.exp(-ledger.forward[0]) == pytest.approx(survive, rel=1e-12)
        survive *= 1 - af.f(ledger.acceptance_argument())


def test_ledger_grows_past_capacity():
    ledger = DelayLedger(0.0, 1.0, 0.05, capacity=2)
    for k in range(40):
        ledger.push(float(k % 3))
    assert ledger.n == 39 and ledger.forward.size == 40


# -- single steps ------------------------------------------------------------


def test_branch_zero_acceptance_is_f_of_energy_difference():
    sys_ = ClassicalSystem(np.array([0.0, 1.5]), 1.0)
    af = AcceptanceFunction(1.0, 0.05)
    k0 = branch_kernel_oracle(sys_, SWAP, af, 0)
    np.testing.assert_allclose(k0, [[0, af.f(-1.5)], [af.f(1.5), 0]])
    # u forced to 0 accepts at branch 0
    rec = classical_step(sys_, SWAP, af, 0, ScriptedRng([0.3, 0.0]))
    assert rec.branches == 0 and rec.state == 1 and rec.visited == [0, 1]


def test_truncation_carries_partial_record():
    sys_ = ClassicalSystem(np.array([0.0, 1.0, 2.0]), 1.0)
    af = AcceptanceFunction(1.0, 0.05)
    # u above 1 - delta never accepts
    with pytest.raises(TruncationError) as info:
        classical_step(sys_, ProposalKernel.uniform_other(3), af, 0, ScriptedRng([0.5, 0.99]),
                       n_max=5)
    rec = info.value.record
    assert not rec.accepted and rec.branches == 5 and len(rec.visited) == 7


def test_run_reports_failing_step():
    sys_ = ClassicalSystem(np.array([0.0, 1.0]), 1.0)
    af = AcceptanceFunction(1.0, 0.05)
    with pytest.raises(TruncationError) as info:
        run_classical_chain(sys_, SWAP, af, 0, 3, ScriptedRng([0.5, 0.99]), n_max=4)
    assert info.value.step == 0


def test_step_validates_inputs():
    sys_ = ClassicalSystem(np.array([0.0, 1.0]), 1.0)
    af = AcceptanceFunction(1.0, 0.05)
    with pytest.raises(ValueError):
        classical_step(sys_, SWAP, af, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        classical_step(sys_, ProposalKernel.uniform_other(3), af, 0, np.random.default_rng(0))


# -- exact branch kernels ----------------------------------------------------


def test_branch_detailed_balance_random_systems():
    rng = np.random.default_rng(7)
    for _ in range(3):
        e = rng.uniform(-2, 2, size=4)
        sys_ = ClassicalSystem(e, 1.0)
        p = random_symmetric_kernel(4, rng)
        assert check_classical_db(sys_, p, AcceptanceFunction(1.0, 0.05), 4) <= 1e-10


def test_detailed_balance_control_fails_with_asymmetric_acceptance():
    # plain exp(-w/T) capped at 1 - delta breaks the symmetry f(w) = f(-w) e^{-w/T}
    class Broken(AcceptanceFunction):
        def f(self, omega):
            return np.minimum(1 - self.delta, np.exp(-np.asarray(omega) / self.temperature) * 0.5)

        def s(self, omega):
            return -np.log1p(-self.f(omega))

    sys_ = ClassicalSystem(np.array([0.0, 0.7, 1.9]), 1.0)
    p = ProposalKernel.uniform_other(3)
    ks = branch_kernels(sys_, p, Broken(1.0, 0.05), 2)
    assert max(db_violation(k, sys_.energies, 1.0) for k in ks) > 1e-3


def test_two_state_swap_is_trace_preserving():
    sys_ = ClassicalSystem(np.array([0.0, 1.3]), 1.0)
    af = AcceptanceFunction(1.0, 0.05)
    total, tail = total_kernel(branch_kernels(sys_, SWAP, af, 24))
    assert np.all(tail < 1e-12) and np.all(tail > -1e-12)
    # the Gibbs distribution is stationary for the summed kernel
    w = np.exp(-sys_.energies)
    w /= w.sum()
    np.testing.assert_allclose(total @ w, w, atol=1e-12)


def test_random_system_tail_shrinks():
    rng = np.random.default_rng(3)
    sys_ = ClassicalSystem(rng.uniform(-2, 2, size=4), 1.0)
    p = random_symmetric_kernel(4, rng)
    af = AcceptanceFunction(1.0, 0.05)
    ks = branch_kernels(sys_, p, af, 6)
    tails = [total_kernel(ks[:n + 1])[1].max() for n in range(len(ks))]
    assert all(b <= a + 1e-15 for a, b in zip(tails, tails[1:]))
    assert min(total_kernel(ks)[1]) >= -1e-12


def test_oracle_guard():
    sys_ = ClassicalSystem(np.zeros(4), 1.0)
    with pytest.raises(OracleGuardError):
        branch_kernel_oracle(sys_, ProposalKernel.uniform_other(4), AcceptanceFunction(1.0, 0.05),
                             6, max_paths=1000)


def test_trajectories_match_oracle():
    sys_ = ClassicalSystem(np.array([-0.5, 0.2, 0.9]), 1.0)
    p = ProposalKernel.uniform_other(3)
    af = AcceptanceFunction(1.0, 0.05)
    ks = branch_kernels(sys_, p, af, 2)
    n_steps = 20000
    counts = np.zeros((3, 3))
    streams = RngStreams(5)
    for k in range(n_steps):
        rec = classical_step(sys_, p, af, 0, streams.for_step(k))
        if rec.branches <= 2:
            counts[rec.branches, rec.state] += 1
    expected = np.array([k[:, 0] for k in ks])
    freq = counts / n_steps
    sigma = np.sqrt(expected * (1 - expected) / n_steps)
    assert np.all(np.abs(freq - expected) <= 4 * sigma + 1e-12)


# -- chains --------------------------------------------------------------------


def test_chain_is_deterministic():
    e = ising_lattice_energies(2, 2, 1.0, 0.0)
    sys_ = ClassicalSystem(e, 2.0)
    af = AcceptanceFunction(2.0, 0.05)
    ks = site_flip_kernels(4)
    a = run_classical_chain(sys_, ks, af, 0, 300, RngStreams(9))
    b = run_classical_chain(sys_, ks, af, 0, 300, RngStreams(9))
    assert [(r.state, r.branches) for r in a] == [(r.state, r.branches) for r in b]
    c = run_classical_chain(sys_, ks, af, 0, 300, RngStreams(10))
    assert [r.state for r in a] != [r.state for r in c]


def test_chain_samples_gibbs_distribution():
    e = np.array([0.0, 0.4, 1.1, 2.0])
    sys_ = ClassicalSystem(e, 1.0)
    af = AcceptanceFunction(1.0, 0.05)
    recs = run_classical_chain(sys_, ProposalKernel.uniform_other(4), af, 0, 20000,
                               np.random.default_rng(2))
    freq = np.bincount([r.state for r in recs], minlength=4) / len(recs)
    np.testing.assert_allclose(freq, sys_.gibbs_weights(), atol=0.02)


def test_sink_sees_every_step():
    sys_ = ClassicalSystem(np.array([0.0, 1.0]), 1.0)
    seen = []
    run_classical_chain(sys_, SWAP, AcceptanceFunction(1.0, 0.05), 0, 25,
                        np.random.default_rng(0), sink=lambda k, rec: seen.append(k))
    assert seen == list(range(25))
