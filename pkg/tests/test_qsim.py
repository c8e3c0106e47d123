import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biqc.qsim import (
    CircuitTape,
    EvalCounter,
    Gate,
    StateVector,
    apply_gate,
    expectation_z,
    parameter_shift_batch,
    parameter_shift_grad,
    run_tape,
    run_tape_batch,
)
from oracles import central_diff, dense_run, dense_state, random_tape


def test_rz_on_zero_is_phase_only():
    out = apply_gate(StateVector.zeros(1), Gate("RZ", (0,), (0.7,)))
    assert np.allclose(out.amplitudes, [np.exp(-0.35j), 0])


def test_rx_pi_flips_with_minus_i_phase():
    out = apply_gate(StateVector.zeros(1), Gate("RX", (0,), (np.pi,)))
    assert np.allclose(out.amplitudes, [0, -1j])


def test_cz_is_diagonal():
    assert np.allclose(apply_gate(StateVector.basis("11"), Gate("CZ", (0, 1))).amplitudes, [0, 0, 0, -1])
    assert np.allclose(apply_gate(StateVector.basis("10"), Gate("CZ", (0, 1))).amplitudes, [0, 0, 1, 0])


def test_basis_ordering_qubit0_is_msb():
    state = StateVector.basis("10")
    assert expectation_z(state, 0) == -1.0
    assert expectation_z(state, 1) == 1.0


def test_expectation_examples():
    assert expectation_z(StateVector.zeros(1), 0) == 1.0
    assert expectation_z(StateVector.basis("1"), 0) == -1.0
    half = apply_gate(StateVector.zeros(1), Gate("RY", (0,), (np.pi / 2,)))
    assert abs(expectation_z(half, 0)) < 1e-15
    tilted = apply_gate(StateVector.zeros(1), Gate("RY", (0,), (0.3,)))
    assert expectation_z(tilted, 0) == pytest.approx(np.cos(0.3), abs=1e-12)
    assert np.cos(0.3) == pytest.approx(0.955336, abs=1e-6)


def test_run_tape_examples():
    assert np.array_equal(run_tape(CircuitTape(2), []), [1.0, 1.0])
    tape = CircuitTape(2)
    tape.append(Gate("RY", (0,), (0.0,)), bind=True)
    assert np.allclose(run_tape(tape, [np.pi]), [-1.0, 1.0], atol=1e-15)


def test_shift_rule_examples():
    tape = CircuitTape(1)
    tape.append(Gate("RY", (0,), (0.0,)), bind=True)
    assert parameter_shift_grad(tape, [0.0])[0, 0] == pytest.approx(0.0, abs=1e-15)
    assert parameter_shift_grad(tape, [np.pi / 2])[0, 0] == pytest.approx(-1.0, abs=1e-15)


def test_rot_is_rz_ry_rz():
    a, b, g = 0.4, -1.1, 2.3
    psi = StateVector(1, np.array([0.6, 0.8j]))
    rot = apply_gate(psi, Gate("ROT", (0,), (a, b, g)))
    chain = psi
    for gate in (Gate("RZ", (0,), (a,)), Gate("RY", (0,), (b,)), Gate("RZ", (0,), (g,))):
        chain = apply_gate(chain, gate)
    assert np.allclose(rot.amplitudes, chain.amplitudes, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_run_tape_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    tape = random_tape(rng, d, int(rng.integers(1, 25)))
    bindings = rng.uniform(-np.pi, np.pi, tape.num_params)
    assert np.max(np.abs(run_tape(tape, bindings) - dense_run(tape, bindings))) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_apply_gate_matches_dense_state(seed):
    rng = np.random.default_rng(100 + seed)
    d = int(rng.integers(1, 5))
    tape = random_tape(rng, d, 12)
    state = StateVector.zeros(d)
    for gate in tape.gates:
        state = apply_gate(state, gate)
    assert np.max(np.abs(state.amplitudes - dense_state(tape.gates, d))) < 1e-10
    assert abs(state.norm() - 1) < 1e-10


@given(st.integers(1, 6), st.integers(0, 30), st.integers(0, 2**31 - 1))
def test_norm_and_bounds_property(d, n_gates, seed):
    rng = np.random.default_rng(seed)
    tape = random_tape(rng, d, n_gates)
    state = StateVector.zeros(d)
    for gate in tape.gates:
        state = apply_gate(state, gate)
        assert abs(state.norm() - 1) <= 1e-10
    ev = run_tape(tape, rng.uniform(-np.pi, np.pi, tape.num_params))
    assert np.all(np.abs(ev) <= 1 + 1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_parameter_shift_matches_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    d = int(rng.integers(1, 7))
    tape = random_tape(rng, d, 16)
    if tape.num_params == 0:
        tape.append(Gate("RY", (0,), (0.0,)), bind=True)
    x = rng.uniform(-np.pi, np.pi, tape.num_params)
    jac = parameter_shift_grad(tape, x)
    fd = central_diff(lambda b: run_tape(tape, b), x)
    assert np.max(np.abs(jac - fd)) < 1e-4


def test_batch_matches_single_rows():
    rng = np.random.default_rng(7)
    tape = random_tape(rng, 3, 15)
    rows = rng.uniform(-np.pi, np.pi, (5, tape.num_params))
    values, jac = parameter_shift_batch(tape, rows)
    for r in range(5):
        assert np.allclose(values[r], run_tape(tape, rows[r]), atol=1e-13)
        assert np.allclose(jac[r], parameter_shift_grad(tape, rows[r]), atol=1e-13)
    assert np.allclose(run_tape_batch(tape, rows), values, atol=1e-13)


def test_deterministic_replay():
    rng = np.random.default_rng(3)
    tape = random_tape(rng, 4, 20)
    b = rng.uniform(-1, 1, tape.num_params)
    assert np.array_equal(run_tape(tape, b), run_tape(tape, b))


def test_counter_tallies_shift_circuits():
    tape = CircuitTape(2)
    tape.append(Gate("ROT", (0,), (0.0, 0.0, 0.0)), bind=True)
    tape.append(Gate("CZ", (0, 1)))
    counter = EvalCounter()
    parameter_shift_batch(tape, np.zeros((4, 3)), counter=counter)
    assert counter.circuits == 4 * (1 + 2 * 3)
    assert counter.gates == counter.circuits * 2


def test_errors():
    with pytest.raises(ValueError, match="out of range"):
        apply_gate(StateVector.zeros(2), Gate("RX", (2,), (0.1,)))
    with pytest.raises(ValueError, match="distinct"):
        Gate("CZ", (1, 1))
    with pytest.raises(ValueError, match="angle"):
        Gate("ROT", (0,), (0.1,))
    with pytest.raises(ValueError, match="not a rotation"):
        CircuitTape(2, [Gate("CZ", (0, 1))], [(0, 0)])
    tape = CircuitTape(1)
    tape.append(Gate("RY", (0,), (0.0,)), bind=True)
    with pytest.raises(ValueError, match="bindings"):
        run_tape(tape, [0.1, 0.2])
    with pytest.raises(ValueError):
        expectation_z(StateVector.zeros(1), 1)
    with pytest.raises(ValueError, match="amplitudes"):
        StateVector(2, np.ones(3, dtype=complex))
