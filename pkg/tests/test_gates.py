import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qscnot.fock import FockError
from qscnot.gates import (
    BELL_INPUTS,
    BELL_KETS,
    IDEAL_CNOT,
    LOGICAL_INPUTS,
    QS_MODES,
    QsSpec,
    TwoQubitState,
    bell_prep,
    build_cnot_circuit,
    postselected_operator,
    qs_source_state,
    run_cnot,
    truth_table,
)
from qscnot.tomography import fidelity, linear_entropy, tangle

CNOT_PERM = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float)


def random_state(rng):
    a = rng.normal(size=4) + 1j * rng.normal(size=4)
    return TwoQubitState(a / np.linalg.norm(a))


def bell_closed_form(visibility):
    # target internal state gamma|0> + kappa|1>; the kappa part skips the two-photon interference
    g2, k2 = visibility, 1 - visibility
    return (g2 + k2 / 2) / (g2 + 2 * k2)


def test_postselected_operator_is_minus_cnot_over_three():
    assert np.allclose(postselected_operator(), -IDEAL_CNOT / 3, atol=1e-12)


def test_transfer_is_unitary():
    m = build_cnot_circuit().transfer.matrix
    assert np.allclose(m.conj().T @ m, np.eye(len(m)), atol=1e-12)


def test_success_probability_one_ninth_for_random_inputs():
    rng = np.random.default_rng(11)
    for _ in range(100):
        _, prob = run_cnot(random_state(rng))
        assert abs(prob - 1 / 9) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_output_is_cnot_of_input(seed):
    psi = random_state(np.random.default_rng(seed))
    rho, _ = run_cnot(psi)
    target = IDEAL_CNOT @ psi.amplitudes
    assert abs(fidelity(rho, target) - 1) < 1e-10


def test_truth_table_is_cnot_permutation():
    assert np.allclose(truth_table(), CNOT_PERM, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BELL_INPUTS))
def test_bell_states_at_full_overlap(name):
    rho = bell_prep(name)
    assert fidelity(rho, BELL_KETS[name]) > 1 - 1e-9
    assert abs(tangle(rho) - 1) < 1e-8
    assert linear_entropy(rho) < 1e-8


@pytest.mark.parametrize("visibility", [0.0, 0.5, 0.8, 0.94, 1.0])
def test_bell_fidelity_matches_distinguishability_closed_form(visibility):
    spec = QsSpec.from_visibility(visibility)
    for name in BELL_INPUTS:
        rho = bell_prep(name, spec)
        assert abs(fidelity(rho, BELL_KETS[name]) - bell_closed_form(visibility)) < 1e-12


def test_bell_fidelity_at_94_percent_visibility():
    assert abs(bell_closed_form(0.94) - 0.9151) < 1e-4


def test_control_v_success_independent_of_overlap():
    # a V control photon always reflects, so only one path contributes and nothing interferes
    for vis in (0.0, 0.6, 0.94):
        for label in ("VV", "VH"):
            _, prob = run_cnot(TwoQubitState.basis(label), QsSpec.from_visibility(vis))
            assert abs(prob - 1 / 9) < 1e-10


def test_truth_table_rows_are_distributions():
    table = truth_table(QsSpec.from_visibility(0.7))
    assert np.allclose(table.sum(axis=1), 1)
    assert (table >= -1e-15).all()
    # control V rows bypass the interference entirely
    assert np.allclose(table[:2, :2], np.eye(2), atol=1e-12)


def occ(*pairs):
    out = [0] * QS_MODES.count
    for port, n in pairs:
        out[QS_MODES.index(port, "V", 0)] = n
    return tuple(out)


def test_quantum_splitter_separates_pair_at_zero_phase():
    state = qs_source_state(QsSpec(0.0))
    assert abs(state.amplitude(occ(("c", 1), ("d", 1))) - 1j) < 1e-12
    assert abs(state.norm() - 1) < 1e-12


def test_quantum_splitter_bunches_at_pi_phase():
    state = qs_source_state(QsSpec(math.pi))
    assert abs(state.amplitude(occ(("d", 2))) - 1 / math.sqrt(2)) < 1e-12
    assert abs(state.amplitude(occ(("c", 2))) + 1 / math.sqrt(2)) < 1e-12
    assert abs(state.amplitude(occ(("c", 1), ("d", 1)))) < 1e-12


def test_overlap_is_clamped_and_visibility_helper():
    assert QsSpec(0.0, 1.5).overlap == 1.0
    assert abs(QsSpec.from_visibility(0.94).overlap ** 2 - 0.94) < 1e-15


def test_unnormalized_input_rejected():
    with pytest.raises(FockError):
        TwoQubitState(np.array([1, 1, 0, 0]))


def test_logical_inputs_order():
    assert LOGICAL_INPUTS == ("VV", "VH", "HV", "HH")
    assert np.allclose(TwoQubitState.basis("HV").amplitudes, [0, 0, 1, 0])
