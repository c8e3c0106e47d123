"""End-to-end hybrid classifier: CNN pathway, two patch selectors, quantum blocks, fusion head.

Data flow for a batch of normalized images X (B, H, W):

    X -> conv/relu/pool x2 -> Z_LSF -> global avg pool -> lsf features
    Z_LSF -> 1x1 conv -> A_HSF -> argmax cell -> attention patch
    X -> tiled r-metric -> argmax tile -> metric patch
    patch -> linear -> (pi/2) tanh -> stacked quantum blocks -> h_Q
    [lsf | sigmoid(max A_HSF) * h_Q(attention) | h_Q(metric)] -> linear -> sigmoid

Patch locations are argmax choices and are treated as constants by the
backward pass. Parameters live in a flat dict keyed by tensor name.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from math import pi
from typing import Sequence

import numpy as np

from . import nnet
from .ansatz import AnsatzConfig, AnsatzParams, BlockRecord, build_block_tape, draw_noise, forward_blocks_batch
from .nnet import LayerSpec
from .qsim import EvalCounter
from .spectral import PatchRegion, SpectralConfig, select_hsf_batch

ABLATIONS = ("Ab-EVC", "Ab-OFC", "Ab-HSF", "Ab-Quantum")
VARIANTS = ("none",) + ABLATIONS
PATCH_MODES = ("both", "metric", "attention")
POOL_FACTOR = 4  # two 2x2 max-pools
LOGIT_CLAMP = 30.0
INPUT_BOUND = pi / 2 + 1e-6


def default_patch_size(image_h: int, image_w: int) -> int:
    return 4 if max(image_h, image_w) <= 32 else 32


@dataclass(frozen=True)
class BiqcConfig:
    image_h: int = 8
    image_w: int = 8
    patch_size: int = 0  # 0 -> default rule
    ansatz: AnsatzConfig = field(default_factory=AnsatzConfig)
    cutoff: float = 0.25
    epsilon: float = 1e-12
    folded_frequencies: bool = False
    conv1_channels: int = 8
    lsf_feature_dim: int = 16
    kernel: int = 3
    ablation: frozenset = frozenset()
    patch_mode: str = "both"

    def __post_init__(self):
        if self.patch_size == 0:
            object.__setattr__(self, "patch_size", default_patch_size(self.image_h, self.image_w))
        object.__setattr__(self, "ablation", frozenset(self.ablation))
        unknown = set(self.ablation) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation variant(s) {sorted(unknown)}; choose from {ABLATIONS}")
        if self.patch_mode not in PATCH_MODES:
            raise ValueError(f"patch_mode must be one of {PATCH_MODES}, got {self.patch_mode!r}")
        if self.patch_size > min(self.image_h, self.image_w):
            raise ValueError(f"patch {self.patch_size} does not fit a {self.image_h}x{self.image_w} image")
        if self.uses_cnn and min(self.image_h, self.image_w) < POOL_FACTOR:
            raise ValueError("images smaller than 4x4 cannot pass the two pooling stages")
        self.spectral  # validates cutoff/epsilon
        if self.fusion_dim == 0:
            raise ValueError(f"ablation set {sorted(self.ablation)} leaves nothing to classify on")

    @property
    def spectral(self) -> SpectralConfig:
        return SpectralConfig(self.patch_size, self.cutoff, self.epsilon, self.folded_frequencies)

    @property
    def uses_cnn(self) -> bool:
        return "Ab-EVC" not in self.ablation

    @property
    def uses_attention_patch(self) -> bool:
        return (
            self.uses_cnn
            and not {"Ab-OFC", "Ab-HSF"} & self.ablation
            and self.patch_mode in ("both", "attention")
        )

    @property
    def uses_metric_patch(self) -> bool:
        return "Ab-HSF" not in self.ablation and self.patch_mode in ("both", "metric")

    @property
    def num_patches(self) -> int:
        return int(self.uses_attention_patch) + int(self.uses_metric_patch)

    @property
    def uses_quantum(self) -> bool:
        return self.num_patches > 0 and "Ab-Quantum" not in self.ablation

    @property
    def uses_mlp(self) -> bool:
        return self.num_patches > 0 and "Ab-Quantum" in self.ablation

    @property
    def fusion_dim(self) -> int:
        return self.lsf_feature_dim * int(self.uses_cnn) + self.ansatz.num_qubits * self.num_patches

    @property
    def variant(self) -> str:
        return "+".join(v for v in ABLATIONS if v in self.ablation) or "none"

    def layers(self) -> dict[str, LayerSpec]:
        """Named layer specs; only the ones this configuration uses."""
        d, upload = self.ansatz.num_qubits, self.ansatz.inputs_per_block
        k, pad = self.kernel, self.kernel // 2
        out: dict[str, LayerSpec] = {}
        if self.uses_cnn:
            out["conv1"] = LayerSpec("conv2d", 1, self.conv1_channels, k, 1, pad, name="conv1")
            out["conv2"] = LayerSpec("conv2d", self.conv1_channels, self.lsf_feature_dim, k, 1, pad, name="conv2")
        if self.uses_attention_patch:
            out["attn"] = LayerSpec("conv2d", self.lsf_feature_dim, 1, 1, name="attn")
        if self.num_patches:
            out["enc0"] = LayerSpec("linear", in_features=self.patch_size**2, out_features=upload, name="enc0")
        if self.uses_quantum:
            for l in range(1, self.ansatz.num_blocks):
                out[f"enc{l}"] = LayerSpec("linear", in_features=d, out_features=upload, name=f"enc{l}")
        if self.uses_mlp:
            out["mlp1"] = LayerSpec("linear", in_features=upload, out_features=d, name="mlp1")
            out["mlp2"] = LayerSpec("linear", in_features=d, out_features=d, name="mlp2")
        out["head"] = LayerSpec("linear", in_features=self.fusion_dim, out_features=1, name="head")
        return out


def apply_ablation(config: BiqcConfig, variant: str) -> BiqcConfig:
    if variant == "none":
        return config
    if variant not in ABLATIONS:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {VARIANTS}")
    return dataclasses.replace(config, ablation=config.ablation | {variant})


def param_shapes(config: BiqcConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for name, layer in config.layers().items():
        for key, shape in layer.param_shapes().items():
            shapes[f"{name}.{key}"] = shape
    if config.uses_quantum:
        for l in range(config.ansatz.num_blocks):
            shapes[f"theta{l}"] = config.ansatz.theta_shape
    return shapes


def init_params(config: BiqcConfig, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, layer in config.layers().items():
        for key, value in nnet.init_params(layer, rng).items():
            params[f"{name}.{key}"] = value
    if config.uses_quantum:
        for l, theta in enumerate(AnsatzParams.init(config.ansatz, rng).theta):
            params[f"theta{l}"] = theta
    return params


def check_params(config: BiqcConfig, params: dict[str, np.ndarray]) -> None:
    expected = param_shapes(config)
    if set(expected) != set(params):
        missing, extra = sorted(set(expected) - set(params)), sorted(set(params) - set(expected))
        raise ValueError(f"parameter names do not match config: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


def _layer_params(params: dict[str, np.ndarray], name: str) -> dict[str, np.ndarray]:
    return {"weight": params[f"{name}.weight"], "bias": params[f"{name}.bias"]}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class ForwardTrace:
    """Everything one batched forward pass produced; arrays have a leading batch axis."""

    images: np.ndarray
    z_lsf: np.ndarray | None = None
    lsf_features: np.ndarray | None = None
    attention_map: np.ndarray | None = None
    attention_regions: list[PatchRegion] = field(default_factory=list)
    metric_regions: list[PatchRegion] = field(default_factory=list)
    r_maps: np.ndarray | None = None
    gate: np.ndarray | None = None
    h_attention: np.ndarray | None = None
    h_metric: np.ndarray | None = None
    fused: np.ndarray | None = None
    logit: np.ndarray | None = None
    prob: np.ndarray | None = None
    caches: dict = field(default_factory=dict)
    records: list[BlockRecord] = field(default_factory=list)
    counter: EvalCounter = field(default_factory=EvalCounter)
    has_jacobians: bool = False

    @property
    def batch_size(self) -> int:
        return self.images.shape[0]

    def circuits_per_sample(self) -> float:
        return self.counter.circuits / self.batch_size


def _check_images(config: BiqcConfig, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.ndim != 3 or images.shape[1:] != (config.image_h, config.image_w):
        raise ValueError(f"expected images of shape (B, {config.image_h}, {config.image_w}), got {images.shape}")
    if not np.all(np.isfinite(images)):
        raise ValueError("images contain non-finite values")
    if np.abs(images).max(initial=0.0) > INPUT_BOUND:
        raise ValueError(
            f"images must be min-max normalized to [-pi/2, pi/2]; found values up to {np.abs(images).max():.4g}"
        )
    return images


def _gather_patches(images: np.ndarray, rows: Sequence[int], cols: Sequence[int], h: int) -> np.ndarray:
    return np.stack([img[r : r + h, c : c + h].reshape(-1) for img, r, c in zip(images, rows, cols)])


def _noise_draws(config: BiqcConfig, rngs, batch: int) -> np.ndarray | None:
    """(num_patches * B, blocks, d) RX angles; attention patch draws first per sample."""
    if config.ansatz.noise_level == 0 or not config.uses_quantum:
        return None
    if rngs is None:
        raise ValueError("noise_level > 0 needs one seeded generator per sample")
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs]
    if len(rngs) != batch:
        raise ValueError(f"got {len(rngs)} generators for a batch of {batch}")
    per_patch = [[draw_noise(rng, config.ansatz) for _ in range(config.num_patches)] for rng in rngs]
    return np.stack([per_patch[b][p] for p in range(config.num_patches) for b in range(batch)])


def biqc_forward(
    config: BiqcConfig,
    params: dict[str, np.ndarray],
    images,
    rngs=None,
    grad: bool = False,
) -> ForwardTrace:
    """Forward pass for one image (H, W) or a batch (B, H, W).

    ``rngs`` supplies one generator per sample for RX noise. With
    ``grad=True`` the quantum Jacobians needed by ``biqc_backward`` are
    computed alongside the forward values.
    """
    check_params(config, params)
    images = _check_images(config, images)
    batch, h = images.shape[0], config.patch_size
    layers = config.layers()
    trace = ForwardTrace(images=images, has_jacobians=grad)
    features = []

    if config.uses_cnn:
        x = images[:, None]
        for name in ("conv1", "conv2"):
            x, trace.caches[f"{name}"] = nnet.forward(layers[name], _layer_params(params, name), x)
            x, trace.caches[f"{name}.relu"] = nnet.forward(LayerSpec("relu"), None, x)
            x, trace.caches[f"{name}.pool"] = nnet.forward(LayerSpec("maxpool2d", kernel=2, stride=2), None, x)
        trace.z_lsf = x
        trace.lsf_features, trace.caches["gap"] = nnet.forward(LayerSpec("global_avg_pool"), None, x)
        features.append(trace.lsf_features)

    patch_rows: list[np.ndarray] = []
    if config.uses_attention_patch:
        amap, trace.caches["attn"] = nnet.forward(layers["attn"], _layer_params(params, "attn"), trace.z_lsf)
        trace.attention_map = amap[:, 0]
        flat = trace.attention_map.reshape(batch, -1)
        best = np.argmax(flat, axis=1)
        trace.caches["attn.argmax"] = best
        trace.gate = _sigmoid(flat[np.arange(batch), best])
        width = trace.attention_map.shape[-1]
        for cell in best:
            r, c = nnet.attention_origin(*divmod(int(cell), width), POOL_FACTOR, h, config.image_h, config.image_w)
            trace.attention_regions.append(PatchRegion(r, c, h))
        patch_rows.append(
            _gather_patches(images, [p.row for p in trace.attention_regions], [p.col for p in trace.attention_regions], h)
        )
    if config.uses_metric_patch:
        rows, cols, trace.r_maps = select_hsf_batch(images, config.spectral)
        trace.metric_regions = [PatchRegion(int(r), int(c), h) for r, c in zip(rows, cols)]
        patch_rows.append(_gather_patches(images, rows, cols, h))

    if patch_rows:
        patches = np.concatenate(patch_rows)  # (num_patches * B, h*h), attention rows first
        pre, trace.caches["enc0"] = nnet.forward(layers["enc0"], _layer_params(params, "enc0"), patches)
        squashed = np.tanh(pre)
        trace.caches["enc0.tanh"] = squashed
        angles = (pi / 2) * squashed
        if config.uses_quantum:
            hq = _quantum_forward(config, params, angles, _noise_draws(config, rngs, batch), grad, trace)
        else:
            hq = _mlp_forward(layers, params, angles, trace)
        parts = np.split(hq, config.num_patches)
        if config.uses_attention_patch:
            trace.h_attention = parts.pop(0)
            features.append(trace.gate[:, None] * trace.h_attention)
        if config.uses_metric_patch:
            trace.h_metric = parts.pop(0)
            features.append(trace.h_metric)

    trace.fused = np.concatenate(features, axis=1)
    logit, trace.caches["head"] = nnet.forward(layers["head"], _layer_params(params, "head"), trace.fused)
    trace.logit = logit[:, 0]
    trace.prob = _sigmoid(np.clip(trace.logit, -LOGIT_CLAMP, LOGIT_CLAMP))
    return trace


def _quantum_forward(config, params, angles, noise, grad, trace) -> np.ndarray:
    encoders = {l: _layer_params(params, f"enc{l}") for l in range(1, config.ansatz.num_blocks)}

    def encoder(l: int, h: np.ndarray) -> np.ndarray:
        p = encoders[l]
        return (pi / 2) * np.tanh(h @ p["weight"].T + p["bias"])

    theta = AnsatzParams([params[f"theta{l}"] for l in range(config.ansatz.num_blocks)])
    hq, trace.records = forward_blocks_batch(
        config.ansatz, theta, angles, encoder=encoder, noise=noise, jacobians=grad, counter=trace.counter
    )
    return hq


def _mlp_forward(layers, params, angles, trace) -> np.ndarray:
    x = angles
    for name in ("mlp1", "mlp2"):
        x, trace.caches[name] = nnet.forward(layers[name], _layer_params(params, name), x)
        x, trace.caches[f"{name}.tanh"] = nnet.forward(LayerSpec("tanh"), None, x)
    return x


def logit_grad(trace: ForwardTrace, labels) -> np.ndarray:
    """d(mean BCE)/d(logit) per sample: (p - y) / B, zero where the logit is clamped."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.shape != trace.prob.shape:
        raise ValueError(f"{labels.shape[0]} labels for a batch of {trace.prob.shape[0]}")
    inside = np.abs(trace.logit) <= LOGIT_CLAMP
    return np.where(inside, trace.prob - labels, 0.0) / labels.shape[0]


def biqc_backward(config: BiqcConfig, params: dict[str, np.ndarray], trace: ForwardTrace, labels) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean BCE loss for every tensor in ``params``."""
    check_params(config, params)
    if trace.fused is None or trace.fused.shape[1] != config.fusion_dim:
        raise ValueError("trace does not come from a forward pass of this configuration")
    if config.uses_quantum and not trace.has_jacobians:
        raise ValueError("trace lacks quantum Jacobians; run biqc_forward(..., grad=True)")
    layers = config.layers()
    grads: dict[str, np.ndarray] = {}

    def store(name: str, bundle: nnet.GradBundle) -> np.ndarray:
        for key, value in bundle.params.items():
            grads[f"{name}.{key}"] = grads.get(f"{name}.{key}", 0.0) + value
        return bundle.input

    g_fused = store("head", nnet.backward(layers["head"], trace.caches["head"], logit_grad(trace, labels)[:, None]))
    offset = 0
    g_z = None
    if config.uses_cnn:
        lsf = config.lsf_feature_dim
        g_z = nnet.backward(LayerSpec("global_avg_pool"), trace.caches["gap"], g_fused[:, :lsf]).input
        offset = lsf
    d = config.ansatz.num_qubits
    g_h_parts = []
    if config.uses_attention_patch:
        g_gated = g_fused[:, offset : offset + d]
        offset += d
        g_h_parts.append(trace.gate[:, None] * g_gated)
        g_gate = np.sum(g_gated * trace.h_attention, axis=1)
        g_max = g_gate * trace.gate * (1.0 - trace.gate)
        batch = trace.batch_size
        g_amap = np.zeros((batch, trace.attention_map[0].size))
        g_amap[np.arange(batch), trace.caches["attn.argmax"]] = g_max
        g_amap = g_amap.reshape(batch, 1, *trace.attention_map.shape[1:])
        g_z = g_z + store("attn", nnet.backward(layers["attn"], trace.caches["attn"], g_amap))
    if config.uses_metric_patch:
        g_h_parts.append(g_fused[:, offset : offset + d])

    if g_h_parts:
        g_h = np.concatenate(g_h_parts)
        if config.uses_quantum:
            g_angles = _quantum_backward(config, params, trace, g_h, grads)
        else:
            for name in ("mlp2", "mlp1"):
                g_h = nnet.backward(LayerSpec("tanh"), trace.caches[f"{name}.tanh"], g_h).input
                g_h = store(name, nnet.backward(layers[name], trace.caches[name], g_h))
            g_angles = g_h
        squashed = trace.caches["enc0.tanh"]
        store("enc0", nnet.backward(layers["enc0"], trace.caches["enc0"], g_angles * (pi / 2) * (1.0 - squashed**2)))

    if config.uses_cnn:
        g = g_z
        for name in ("conv2", "conv1"):
            g = nnet.backward(LayerSpec("maxpool2d", kernel=2, stride=2), trace.caches[f"{name}.pool"], g).input
            g = nnet.backward(LayerSpec("relu"), trace.caches[f"{name}.relu"], g).input
            g = store(name, nnet.backward(layers[name], trace.caches[name], g))

    return {name: np.asarray(grads[name], dtype=np.float64).reshape(shape) for name, shape in param_shapes(config).items()}


def _quantum_backward(config, params, trace, g_h, grads) -> np.ndarray:
    """Chain output gradients back through the blocks; returns d/d(first-block angles)."""
    n_blocks = config.ansatz.num_blocks
    for l in range(n_blocks - 1, -1, -1):
        rec = trace.records[l]
        grads[f"theta{l}"] = np.einsum("bd,bdk->k", g_h, rec.jac_theta).reshape(config.ansatz.theta_shape)
        g_z = np.einsum("bd,bdk->bk", g_h, rec.jac_z)
        if l == 0:
            return g_z
        # inputs = (pi/2) tanh(h_prev W^T + b)
        g_pre = g_z * (pi / 2) * (1.0 - (rec.inputs / (pi / 2)) ** 2)
        h_prev = trace.records[l - 1].outputs
        grads[f"enc{l}.weight"] = g_pre.T @ h_prev
        grads[f"enc{l}.bias"] = g_pre.sum(axis=0)
        g_h = g_pre @ params[f"enc{l}.weight"]
    raise AssertionError("unreachable")


def circuit_budget(config: BiqcConfig, grad: bool = True) -> dict[str, int]:
    """Analytic per-sample quantum cost; depends only on the ansatz and patch count."""
    if not config.uses_quantum:
        return {"qubits": 0, "circuits": 0, "gates_per_circuit": 0}
    tape = build_block_tape(config.ansatz)
    per_block = 1 + (2 * tape.num_params if grad else 0)
    return {
        "qubits": config.ansatz.num_qubits,
        "circuits": config.num_patches * config.ansatz.num_blocks * per_block,
        "gates_per_circuit": len(tape.gates),
    }
