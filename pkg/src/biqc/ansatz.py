"""Stacked data re-uploading blocks.

One block is, in time order,

    for k in 1..L_layers:  U_SE(theta_k), then RZ(z_k,j) on every qubit j
    U_SE(theta_out)
    [optional RX noise], then <Z_j> on every qubit

where U_SE is a ROT on every qubit followed by a CZ ring. Blocks are chained
through their measurements: the d expectations of block l are mapped by an
encoder callback to the L_layers*d angles uploaded into block l+1.

Slot order of a block tape: all theta angles in C order of the
(L_layers + 1, d, 3) tensor, then the z angles in C order of (L_layers, d).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import pi
from typing import Callable

import numpy as np

from .qsim import (
    CircuitTape,
    EvalCounter,
    Gate,
    StateVector,
    apply_gate,
    _apply_cols,
    parameter_shift_batch,
    run_tape_batch,
)

Encoder = Callable[[int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AnsatzConfig:
    num_qubits: int = 4
    num_blocks: int = 2
    layers_per_block: int = 2
    noise_level: float = 0.0

    def __post_init__(self):
        if self.num_qubits < 1 or self.num_blocks < 1 or self.layers_per_block < 1:
            raise ValueError(f"qubits, blocks and layers must all be >= 1: {self}")
        if self.noise_level < 0:
            raise ValueError(f"noise_level must be >= 0, got {self.noise_level}")

    @property
    def theta_shape(self) -> tuple[int, int, int]:
        return (self.layers_per_block + 1, self.num_qubits, 3)

    @property
    def params_per_block(self) -> int:
        return 3 * self.num_qubits * (self.layers_per_block + 1)

    @property
    def inputs_per_block(self) -> int:
        return self.layers_per_block * self.num_qubits

    @property
    def num_params(self) -> int:
        return self.params_per_block * self.num_blocks


@dataclass
class AnsatzParams:
    theta: list[np.ndarray]

    @classmethod
    def init(cls, config: AnsatzConfig, rng: np.random.Generator) -> "AnsatzParams":
        return cls([rng.uniform(-pi, pi, size=config.theta_shape) for _ in range(config.num_blocks)])

    def check(self, config: AnsatzConfig) -> None:
        if len(self.theta) != config.num_blocks:
            raise ValueError(f"expected {config.num_blocks} theta tensors, got {len(self.theta)}")
        for l, t in enumerate(self.theta):
            if t.shape != config.theta_shape:
                raise ValueError(f"theta[{l}] has shape {t.shape}, expected {config.theta_shape}")


def ring_pairs(d: int) -> list[tuple[int, int]]:
    if d == 1:
        return []
    if d == 2:
        return [(0, 1)]
    return [(j, (j + 1) % d) for j in range(d)]


def build_block_tape(config: AnsatzConfig) -> CircuitTape:
    return _block_tape(config.num_qubits, config.layers_per_block)


@lru_cache(maxsize=None)
def _block_tape(d: int, layers: int) -> CircuitTape:
    gates: list[Gate] = []
    theta_slots: dict[tuple[int, int, int], tuple[int, int]] = {}
    z_slots: dict[tuple[int, int], tuple[int, int]] = {}

    def entangling_layer(k: int) -> None:
        for j in range(d):
            gates.append(Gate("ROT", (j,), (0.0, 0.0, 0.0)))
            for a in range(3):
                theta_slots[(k, j, a)] = (len(gates) - 1, a)
        for pair in ring_pairs(d):
            gates.append(Gate("CZ", pair))

    for k in range(layers):
        entangling_layer(k)
        for j in range(d):
            gates.append(Gate("RZ", (j,), (0.0,)))
            z_slots[(k, j)] = (len(gates) - 1, 0)
    entangling_layer(layers)

    slots = [theta_slots[key] for key in sorted(theta_slots)]
    slots += [z_slots[key] for key in sorted(z_slots)]
    return CircuitTape(d, gates, slots)


def block_bindings(theta: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Binding rows for a batch: theta (shared) then per-row z of shape (B, L*d)."""
    z = np.atleast_2d(z)
    return np.concatenate([np.broadcast_to(theta.reshape(1, -1), (z.shape[0], theta.size)), z], axis=1)


def draw_noise(rng: np.random.Generator | None, config: AnsatzConfig) -> np.ndarray | None:
    """Per-block RX angles, shape (num_blocks, d); None when noise is off."""
    if config.noise_level == 0:
        return None
    if rng is None:
        raise ValueError("noise_level > 0 needs a seeded generator")
    return np.stack([rng.uniform(0.0, config.noise_level, size=config.num_qubits) for _ in range(config.num_blocks)])


def inject_noise(state: StateVector, noise_level: float, rng: np.random.Generator) -> StateVector:
    """RX(theta_j) on every qubit, theta_j ~ U(0, noise_level)."""
    if noise_level < 0:
        raise ValueError(f"noise_level must be >= 0, got {noise_level}")
    if noise_level == 0:
        return state
    angles = rng.uniform(0.0, noise_level, size=state.num_qubits)
    for j, a in enumerate(angles):
        state = apply_gate(state, Gate("RX", (j,), (a,)))
    return state


def _noise_post(d: int, angles: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Final-state hook applying each sample's RX draws to all of its shift variants."""

    def post(states: np.ndarray) -> np.ndarray:
        dim, n_var, rows = states.shape
        flat = states.reshape(dim, -1)
        for j in range(d):
            per_col = np.broadcast_to(angles[None, :, j], (n_var, rows)).reshape(-1)
            flat = _apply_cols(flat, d, Gate("RX", (j,), (0.0,)), [per_col])
        return flat.reshape(dim, n_var, rows)

    return post


def default_encoder(layers: int) -> Encoder:
    """Re-upload previous measurements scaled to [-pi/2, pi/2], once per layer."""
    return lambda l, h: np.tile(h * (pi / 2), (1, layers))


@dataclass
class BlockRecord:
    inputs: np.ndarray  # (B, L*d) angles fed to the RZ encoders
    outputs: np.ndarray  # (B, d)
    jac_theta: np.ndarray | None = None  # (B, d, params_per_block)
    jac_z: np.ndarray | None = None  # (B, d, L*d)


def forward_blocks_batch(
    config: AnsatzConfig,
    params: AnsatzParams,
    first_inputs: np.ndarray,
    encoder: Encoder | None = None,
    noise: np.ndarray | None = None,
    jacobians: bool = False,
    counter: EvalCounter | None = None,
) -> tuple[np.ndarray, list[BlockRecord]]:
    """Run the stacked blocks for a batch.

    ``noise`` holds per-sample RX draws of shape (B, num_blocks, d) or None.
    With ``jacobians=True`` each record also carries parameter-shift
    Jacobians of the block outputs w.r.t. its theta and z slots, evaluated
    on the same noise draws.
    """
    params.check(config)
    z = np.asarray(first_inputs, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != config.inputs_per_block:
        raise ValueError(f"first_inputs must have shape (B, {config.inputs_per_block}), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("block inputs contain non-finite values")
    if noise is not None and noise.shape != (z.shape[0], config.num_blocks, config.num_qubits):
        raise ValueError(f"noise draws have shape {noise.shape}")
    if encoder is None:
        encoder = default_encoder(config.layers_per_block)

    tape = build_block_tape(config)
    d, n_theta = config.num_qubits, config.params_per_block
    records: list[BlockRecord] = []
    for l in range(config.num_blocks):
        if l > 0:
            z = encoder(l, records[-1].outputs)
            if z.shape != (records[-1].outputs.shape[0], config.inputs_per_block):
                raise ValueError(f"encoder for block {l} returned shape {z.shape}")
        bindings = block_bindings(params.theta[l], z)
        post = None if noise is None else _noise_post(d, noise[:, l, :])
        if jacobians:
            h, jac = parameter_shift_batch(tape, bindings, post=post, counter=counter)
            records.append(BlockRecord(z, h, jac[:, :, :n_theta], jac[:, :, n_theta:]))
        else:
            records.append(BlockRecord(z, run_tape_batch(tape, bindings, counter, post=post)))
    return records[-1].outputs, records


def forward_blocks(
    config: AnsatzConfig,
    params: AnsatzParams,
    first_input,
    rng: np.random.Generator | None = None,
    encoder: Encoder | None = None,
) -> tuple[np.ndarray, list[BlockRecord]]:
    """Single-sample forward pass; returns h_quantum (length d) and per-block records."""
    z = np.asarray(first_input, dtype=np.float64).reshape(1, -1)
    draws = draw_noise(rng, config)
    noise = None if draws is None else draws[None]
    h, records = forward_blocks_batch(config, params, z, encoder=encoder, noise=noise)
    return h[0], records
