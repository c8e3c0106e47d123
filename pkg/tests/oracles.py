"""Independent reference implementations used by the tests."""
from __future__ import annotations

from functools import reduce
from itertools import product

import numpy as np

from biqc.qsim import CircuitTape, Gate

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)


def pauli_rotation(p: np.ndarray, theta: float) -> np.ndarray:
    # exp(-i theta P / 2) = cos(theta/2) I - i sin(theta/2) P for any Pauli P
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * p


def single_qubit_matrix(kind: str, angles) -> np.ndarray:
    if kind == "RX":
        return pauli_rotation(X, angles[0])
    if kind == "RY":
        return pauli_rotation(Y, angles[0])
    if kind == "RZ":
        return pauli_rotation(Z, angles[0])
    a, b, g = angles
    return pauli_rotation(Z, g) @ pauli_rotation(Y, b) @ pauli_rotation(Z, a)


def embed(op: np.ndarray, target: int, d: int) -> np.ndarray:
    """Kronecker embedding with qubit 0 as the leftmost (most significant) factor."""
    return reduce(np.kron, [op if q == target else I2 for q in range(d)])


def dense_gate(gate: Gate, d: int) -> np.ndarray:
    if gate.kind == "CZ":
        q0, q1 = gate.targets
        p1 = np.diag([0, 1]).astype(complex)
        both = reduce(np.kron, [p1 if q in (q0, q1) else I2 for q in range(d)])
        return np.eye(2**d) - 2 * both
    return embed(single_qubit_matrix(gate.kind, gate.angles), gate.targets[0], d)


def bound_gates(tape: CircuitTape, bindings) -> list[Gate]:
    angles = [list(g.angles) for g in tape.gates]
    for k, (g, a) in enumerate(tape.param_slots):
        angles[g][a] = float(bindings[k])
    return [Gate(g.kind, g.targets, tuple(angles[i])) for i, g in enumerate(tape.gates)]


def dense_state(gates: list[Gate], d: int, start: np.ndarray | None = None) -> np.ndarray:
    psi = np.zeros(2**d, dtype=complex)
    psi[0] = 1.0
    if start is not None:
        psi = start.astype(complex)
    unitary = np.eye(2**d, dtype=complex)
    for gate in gates:
        unitary = dense_gate(gate, d) @ unitary
    return unitary @ psi


def dense_z(psi: np.ndarray, d: int) -> np.ndarray:
    return np.array([np.real(np.vdot(psi, embed(Z, j, d) @ psi)) for j in range(d)])


def dense_run(tape: CircuitTape, bindings) -> np.ndarray:
    return dense_z(dense_state(bound_gates(tape, bindings), tape.num_qubits), tape.num_qubits)


def random_tape(rng: np.random.Generator, d: int, n_gates: int) -> CircuitTape:
    tape = CircuitTape(d)
    for _ in range(n_gates):
        kinds = ["RX", "RY", "RZ", "ROT"] + (["CZ"] if d > 1 else [])
        kind = kinds[rng.integers(len(kinds))]
        if kind == "CZ":
            q = rng.choice(d, size=2, replace=False)
            tape.append(Gate("CZ", tuple(q)))
        else:
            n = 3 if kind == "ROT" else 1
            tape.append(Gate(kind, (int(rng.integers(d)),), tuple(rng.uniform(-np.pi, np.pi, n))), bind=bool(rng.integers(2)))
    return tape


def naive_dft2(region: np.ndarray) -> np.ndarray:
    h = region.shape[0]
    out = np.zeros((h, h), dtype=complex)
    for u, v in product(range(h), repeat=2):
        acc = 0j
        for x, y in product(range(h), repeat=2):
            acc += region[x, y] * np.exp(-2j * np.pi * (u * x / h + v * y / h))
        out[u, v] = acc
    return out


def brute_r_metric(region: np.ndarray, cutoff: float, eps: float) -> float:
    c = naive_dft2(region)
    h = region.shape[0]
    high = low = 0.0
    for u, v in product(range(h), repeat=2):
        e = abs(c[u, v]) ** 2
        if np.hypot(u / h, v / h) > cutoff:
            high += e
        else:
            low += e
    return float(np.sqrt(high / max(low, eps)))


def brute_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def central_diff(f, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Jacobian of f at x by central differences; rows follow f's flattened output."""
    x = np.array(x, dtype=np.float64)
    base = np.asarray(f(x)).reshape(-1)
    jac = np.zeros((base.size, x.size))
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[k] += step
        xm.flat[k] -= step
        jac[:, k] = (np.asarray(f(xp)).reshape(-1) - np.asarray(f(xm)).reshape(-1)) / (2 * step)
    return jac


def generic_params(config, seed: int) -> dict:
    """Seeded init with nonzero biases; zero biases put relu pre-activations on the kink."""
    from biqc.model import init_params

    rng = np.random.default_rng([seed, 99])
    params = init_params(config, seed)
    for key in params:
        if key.endswith(".bias"):
            params[key] = rng.uniform(-0.1, 0.1, params[key].shape)
    return params


def model_fd_check(config, params, images, labels, step: float = 1e-4) -> float:
    """Max abs deviation between biqc_backward and central differences of the batch-mean BCE."""
    from biqc.model import biqc_backward, biqc_forward

    def loss(p):
        prob = np.clip(biqc_forward(config, p, images).prob, 1e-7, 1 - 1e-7)
        return float(np.mean(-(labels * np.log(prob) + (1 - labels) * np.log(1 - prob))))

    grads = biqc_backward(config, params, biqc_forward(config, params, images, grad=True), labels)
    worst = 0.0
    for key, value in params.items():
        def f(v, key=key):
            p = dict(params)
            p[key] = v.reshape(value.shape)
            return loss(p)

        fd = central_diff(f, value.reshape(-1), step)[0]
        worst = max(worst, float(np.max(np.abs(grads[key].reshape(-1) - fd))))
    return worst
