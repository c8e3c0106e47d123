"""Statevector simulation of small rotation/CZ circuits.

Basis ordering: qubit 0 is the most significant bit of the basis index, so
for two qubits the amplitudes are ordered |00>, |01>, |10>, |11>.

Two entry points share one set of gate kernels:

* ``apply_gate`` / ``run_tape`` / ``parameter_shift_grad`` work on a single
  state and a single binding vector.
* ``run_tape_batch`` / ``parameter_shift_batch`` evaluate many binding rows of
  one tape at once; these are what the model uses during training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import pi

import numpy as np

ROTATIONS = ("RX", "RY", "RZ", "ROT")
GATE_KINDS = ROTATIONS + ("CZ",)
_N_ANGLES = {"RX": 1, "RY": 1, "RZ": 1, "ROT": 3, "CZ": 0}
_N_TARGETS = {"RX": 1, "RY": 1, "RZ": 1, "ROT": 1, "CZ": 2}
SHIFT = pi / 2


@dataclass(frozen=True)
class StateVector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError(f"num_qubits must be >= 1, got {self.num_qubits}")
        if self.amplitudes.shape != (2**self.num_qubits,):
            raise ValueError(
                f"expected {2**self.num_qubits} amplitudes for {self.num_qubits} qubits, "
                f"got shape {self.amplitudes.shape}"
            )

    @classmethod
    def zeros(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(2**num_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(num_qubits, amps)

    @classmethod
    def basis(cls, bits: str) -> "StateVector":
        """|bits> with bits written qubit 0 first, e.g. ``basis("10")``."""
        amps = np.zeros(2 ** len(bits), dtype=np.complex128)
        amps[int(bits, 2)] = 1.0
        return cls(len(bits), amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}; expected one of {GATE_KINDS}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if len(self.targets) != _N_TARGETS[self.kind]:
            raise ValueError(f"{self.kind} takes {_N_TARGETS[self.kind]} target(s), got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError(f"{self.kind} targets must be distinct, got {self.targets}")
        if len(self.angles) != _N_ANGLES[self.kind]:
            raise ValueError(f"{self.kind} takes {_N_ANGLES[self.kind]} angle(s), got {self.angles}")


@dataclass
class CircuitTape:
    """Ordered gate list plus the angle slots that bindings write into.

    ``param_slots[k] = (gate_index, angle_index)`` says binding ``k`` replaces
    angle ``angle_index`` of gate ``gate_index``.
    """

    num_qubits: int
    gates: list[Gate] = field(default_factory=list)
    param_slots: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        for gate in self.gates:
            _check_targets(gate, self.num_qubits)
        for k, (g, a) in enumerate(self.param_slots):
            if not 0 <= g < len(self.gates):
                raise ValueError(f"param slot {k} points at missing gate {g}")
            gate = self.gates[g]
            if gate.kind not in ROTATIONS:
                raise ValueError(f"param slot {k} binds gate {g} of kind {gate.kind}, not a rotation")
            if not 0 <= a < len(gate.angles):
                raise ValueError(f"param slot {k} binds angle {a} of a {gate.kind} gate")

    @property
    def num_params(self) -> int:
        return len(self.param_slots)

    def append(self, gate: Gate, bind: bool | tuple[int, ...] = False) -> list[int]:
        """Add ``gate``; ``bind=True`` makes every angle a slot. Returns new slot indices."""
        _check_targets(gate, self.num_qubits)
        self.gates.append(gate)
        g = len(self.gates) - 1
        if bind is True:
            which = tuple(range(len(gate.angles)))
        elif bind is False:
            which = ()
        else:
            which = tuple(bind)
        if which and gate.kind not in ROTATIONS:
            raise ValueError("CZ has no angles to bind")
        first = len(self.param_slots)
        self.param_slots.extend((g, a) for a in which)
        return list(range(first, len(self.param_slots)))


def _check_targets(gate: Gate, num_qubits: int) -> None:
    for t in gate.targets:
        if not 0 <= t < num_qubits:
            raise ValueError(
                f"{gate.kind} target {t} out of range for a {num_qubits}-qubit state"
            )


# ---------------------------------------------------------------------------
# column kernels: states have shape (2**d, C), one column per simulated circuit


def _rotation_elements(kind: str, angles: list[np.ndarray]):
    """(m00, m01, m10, m11) for a batch of rotation angles."""
    if kind == "RX":
        c, s = np.cos(angles[0] / 2), np.sin(angles[0] / 2)
        return c, -1j * s, -1j * s, c
    if kind == "RY":
        c, s = np.cos(angles[0] / 2), np.sin(angles[0] / 2)
        return c, -s, s, c
    # ROT(a, b, g) = RZ(g) RY(b) RZ(a)
    a, b, g = angles
    c, s = np.cos(b / 2), np.sin(b / 2)
    ep, em = np.exp(-0.5j * (a + g)), np.exp(0.5j * (a - g))
    return c * ep, -s * em, s * np.conj(em), c * np.conj(ep)


def _apply_cols(states: np.ndarray, d: int, gate: Gate, angles: list[np.ndarray]) -> np.ndarray:
    """Apply ``gate`` with per-column ``angles`` to (2**d, C) states; returns a new array."""
    cols = states.shape[1]
    if gate.kind == "CZ":
        return states * _cz_signs(d, *gate.targets)[:, None]
    q = gate.targets[0]
    view = states.reshape(2**q, 2, 2 ** (d - q - 1), cols)
    a0, a1 = view[:, 0], view[:, 1]
    out = np.empty_like(view)
    if gate.kind == "RZ":
        phase = np.exp(-0.5j * angles[0])
        np.multiply(a0, phase, out=out[:, 0])
        np.multiply(a1, np.conj(phase), out=out[:, 1])
    else:
        m00, m01, m10, m11 = _rotation_elements(gate.kind, angles)
        np.multiply(a0, m00, out=out[:, 0])
        out[:, 0] += m01 * a1
        np.multiply(a0, m10, out=out[:, 1])
        out[:, 1] += m11 * a1
    return out.reshape(2**d, cols)


@lru_cache(maxsize=None)
def _cz_signs(d: int, q0: int, q1: int) -> np.ndarray:
    idx = np.arange(2**d)
    b0 = (idx >> (d - 1 - q0)) & 1
    b1 = (idx >> (d - 1 - q1)) & 1
    return np.where(b0 & b1, -1.0, 1.0)


@lru_cache(maxsize=None)
def _z_signs(d: int) -> np.ndarray:
    """(2**d, d): +1 where qubit j is 0 in the basis state, -1 where it is 1."""
    idx = np.arange(2**d)[:, None]
    bits = (idx >> (d - 1 - np.arange(d))[None, :]) & 1
    return 1.0 - 2.0 * bits


def apply_gate_batch(states: np.ndarray, d: int, gate: Gate, angles: list[np.ndarray] | None = None) -> np.ndarray:
    """Apply ``gate`` to every row of (rows, 2**d) ``states``; ``angles`` overrides the gate's own."""
    _check_targets(gate, d)
    if angles is None:
        angles = [np.full(states.shape[0], a) for a in gate.angles]
    return _apply_cols(np.ascontiguousarray(states.T), d, gate, angles).T


def expectation_z_batch(states: np.ndarray, d: int) -> np.ndarray:
    """<Z_j> for every row of (rows, 2**d) states, shape (rows, d)."""
    probs = states.real**2 + states.imag**2
    return probs @ _z_signs(d)


# ---------------------------------------------------------------------------
# single-state API


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    _check_targets(gate, state.num_qubits)
    out = apply_gate_batch(state.amplitudes[None, :], state.num_qubits, gate)
    return StateVector(state.num_qubits, out[0])


def expectation_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.num_qubits:
        raise ValueError(f"qubit {qubit} out of range for a {state.num_qubits}-qubit state")
    return float(expectation_z_batch(state.amplitudes[None, :], state.num_qubits)[0, qubit])


# ---------------------------------------------------------------------------
# batched evaluation with shift variants
#
# States are held as (2**d, V, B): B binding rows ("samples") and V variants
# of each, where variant 0 is unshifted and variants 1 + 2k / 2 + 2k shift
# slot k by +pi/2 / -pi/2. A slot is *shared* when every sample binds it to
# the same value. Runs of gates whose angles are all fixed or shared are the
# same unitary for every unshifted column, so they are fused into one dense
# matrix; only the variant columns that shift a slot inside the run are
# replayed gate by gate.


def _check_bindings(tape: CircuitTape, bindings) -> np.ndarray:
    bindings = np.atleast_2d(np.asarray(bindings, dtype=np.float64))
    if bindings.ndim != 2 or bindings.shape[1] != tape.num_params:
        raise ValueError(
            f"tape has {tape.num_params} parameter slots but bindings have shape {bindings.shape}"
        )
    return bindings


def _angle_sources(tape: CircuitTape) -> list[list[int | None]]:
    """For each gate and angle, the slot that binds it (None when fixed)."""
    src: list[list[int | None]] = [[None] * len(g.angles) for g in tape.gates]
    for k, (g, a) in enumerate(tape.param_slots):
        src[g][a] = k
    return src


def _variant_angles(gate: Gate, sources, bindings, variants: np.ndarray, shared) -> list[np.ndarray]:
    """Angle arrays of shape (len(variants) * B,) for the given variant indices."""
    rows = bindings.shape[0]
    out = []
    for a, k in enumerate(sources):
        if k is None:
            out.append(np.full(len(variants) * rows, gate.angles[a]))
            continue
        shift = np.where(variants == 1 + 2 * k, SHIFT, 0.0) - np.where(variants == 2 + 2 * k, SHIFT, 0.0)
        base = bindings[0, k] if shared[k] else bindings[:, k]
        out.append((shift[:, None] + np.broadcast_to(base, (rows,))[None, :]).reshape(-1))
    return out


def evolve_variants(tape: CircuitTape, bindings, shifts: bool = False, counter: "EvalCounter | None" = None) -> np.ndarray:
    """Final states, shape (2**d, V, B) with V = 1 + 2P when ``shifts`` else 1."""
    bindings = _check_bindings(tape, bindings)
    rows, p = bindings.shape
    d, dim = tape.num_qubits, 2**tape.num_qubits
    n_var = 1 + 2 * p if shifts else 1
    all_variants = np.arange(n_var)
    shared = [bool(np.all(bindings[:, k] == bindings[0, k])) for k in range(p)]
    sources = _angle_sources(tape)

    states = np.zeros((dim, n_var, rows), dtype=np.complex128)
    states[0] = 1.0
    g = 0
    gates = tape.gates
    while g < len(gates):
        fusable = all(k is None or shared[k] for k in sources[g])
        if not fusable:
            angles = _variant_angles(gates[g], sources[g], bindings, all_variants, shared)
            states = _apply_cols(states.reshape(dim, -1), d, gates[g], angles).reshape(dim, n_var, rows)
            g += 1
            continue
        end = g
        while end < len(gates) and all(k is None or shared[k] for k in sources[end]):
            end += 1
        run = range(g, end)
        # dense unitary of the unshifted run, built column by column from the identity
        unitary = np.eye(dim, dtype=np.complex128)
        for i in run:
            angles = [np.full(dim, bindings[0, k] if k is not None else gates[i].angles[a]) for a, k in enumerate(sources[i])]
            unitary = _apply_cols(unitary, d, gates[i], angles)
        touched = sorted({k for i in run for k in sources[i] if k is not None}) if shifts else []
        variants = np.array([v for k in touched for v in (1 + 2 * k, 2 + 2 * k)], dtype=int)
        saved = states[:, variants, :].reshape(dim, -1) if len(variants) else None
        states = (unitary @ states.reshape(dim, -1)).reshape(dim, n_var, rows)
        if saved is not None:
            for i in run:
                angles = _variant_angles(gates[i], sources[i], bindings, variants, shared)
                saved = _apply_cols(saved, d, gates[i], angles)
            states[:, variants, :] = saved.reshape(dim, len(variants), rows)
        g = end
    if counter is not None:
        counter.add(n_var * rows, len(gates))
    return states


def _expectations(states: np.ndarray, d: int) -> np.ndarray:
    """(2**d, V, B) states -> (V, B, d) expectations."""
    probs = states.real**2 + states.imag**2
    return np.einsum("svb,sj->vbj", probs, _z_signs(d))


def evolve_batch(tape: CircuitTape, bindings, counter: "EvalCounter | None" = None) -> np.ndarray:
    """Final states for each binding row, shape (rows, 2**d)."""
    return evolve_variants(tape, bindings, counter=counter)[:, 0, :].T


def run_tape_batch(tape: CircuitTape, bindings, counter: "EvalCounter | None" = None, post=None) -> np.ndarray:
    """<Z_j> for each binding row, shape (rows, d)."""
    states = evolve_variants(tape, bindings, counter=counter)
    if post is not None:
        states = post(states)
    return _expectations(states, tape.num_qubits)[0]


def run_tape(tape: CircuitTape, bindings) -> np.ndarray:
    """Bind, simulate from |0...0>, and return <Z_j> for j = 0..d-1."""
    bindings = np.asarray(bindings, dtype=np.float64).reshape(-1)
    if bindings.shape[0] != tape.num_params:
        raise ValueError(f"expected {tape.num_params} bindings, got {bindings.shape[0]}")
    return run_tape_batch(tape, bindings[None, :])[0]


def parameter_shift_batch(tape: CircuitTape, bindings, post=None, counter: "EvalCounter | None" = None) -> tuple[np.ndarray, np.ndarray]:
    """Expectations and Jacobians for many binding rows in one sweep.

    Returns ``(values, jac)`` of shapes (rows, d) and (rows, d, P).
    ``post`` may transform the final (2**d, V, rows) states before
    measurement; it is how fixed per-row noise draws are applied.
    """
    bindings = _check_bindings(tape, bindings)
    states = evolve_variants(tape, bindings, shifts=True, counter=counter)
    if post is not None:
        states = post(states)
    ev = _expectations(states, tape.num_qubits)  # (V, rows, d)
    jac = ((ev[1::2] - ev[2::2]) / 2).transpose(1, 2, 0)
    return ev[0], jac


def parameter_shift_grad(tape: CircuitTape, bindings) -> np.ndarray:
    """Jacobian d<Z_j>/d binding_k, shape (d, P), by the two-term shift rule."""
    bindings = np.asarray(bindings, dtype=np.float64).reshape(-1)
    if bindings.shape[0] != tape.num_params:
        raise ValueError(f"expected {tape.num_params} bindings, got {bindings.shape[0]}")
    return parameter_shift_batch(tape, bindings[None, :])[1][0]


@dataclass
class EvalCounter:
    """Tallies simulated circuits and the gates they applied."""

    circuits: int = 0
    gates: int = 0

    def add(self, circuits: int, gates_per_circuit: int) -> None:
        self.circuits += circuits
        self.gates += circuits * gates_per_circuit

    def reset(self) -> None:
        self.circuits = 0
        self.gates = 0
