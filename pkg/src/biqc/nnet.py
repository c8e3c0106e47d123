"""Minimal layer primitives with explicit forward and backward passes.

Tensors are float64 numpy arrays with a leading batch axis: images are
(N, C, H, W), vectors are (N, F). Convolution is cross-correlation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .spectral import PatchRegion

KINDS = ("conv2d", "maxpool2d", "relu", "linear", "sigmoid", "tanh", "global_avg_pool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    in_features: int = 0
    out_features: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        if self.kind == "conv2d":
            return {
                "weight": (self.out_channels, self.in_channels, self.kernel, self.kernel),
                "bias": (self.out_channels,),
            }
        if self.kind == "linear":
            return {"weight": (self.out_features, self.in_features), "bias": (self.out_features,)}
        return {}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if self.kind == "conv2d":
            n, c, h, w = self._expect_4d(shape)
            if c != self.in_channels:
                raise ValueError(f"{self.label}: expected {self.in_channels} input channels, got shape {shape}")
            k, s, p = self.kernel, self.stride, self.padding
            ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ValueError(f"{self.label}: input {shape} too small for kernel {k}")
            return (n, self.out_channels, ho, wo)
        if self.kind == "maxpool2d":
            n, c, h, w = self._expect_4d(shape)
            ho, wo = (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1
            if ho < 1 or wo < 1:
                raise ValueError(f"{self.label}: input {shape} too small for pool {self.kernel}")
            return (n, c, ho, wo)
        if self.kind == "global_avg_pool":
            n, c, _, _ = self._expect_4d(shape)
            return (n, c)
        if self.kind == "linear":
            if len(shape) != 2 or shape[1] != self.in_features:
                raise ValueError(f"{self.label}: expected (N, {self.in_features}) input, got {shape}")
            return (shape[0], self.out_features)
        return tuple(shape)

    def _expect_4d(self, shape):
        if len(shape) != 4:
            raise ValueError(f"{self.label}: expected (N, C, H, W) input, got shape {shape}")
        return shape


@dataclass
class GradBundle:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    input: np.ndarray | None = None


def glorot_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    else:
        fan_out, fan_in = shape[0], shape[1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(layer: LayerSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    shapes = layer.param_shapes()
    if not shapes:
        return {}
    return {"weight": glorot_uniform(shapes["weight"], rng), "bias": np.zeros(shapes["bias"])}


def _check_params(layer: LayerSpec, params: dict[str, np.ndarray] | None) -> None:
    for key, shape in layer.param_shapes().items():
        got = None if params is None or key not in params else params[key].shape
        if got != shape:
            raise ValueError(f"{layer.label}: parameter {key!r} has shape {got}, expected {shape}")


def forward(layer: LayerSpec, params: dict[str, np.ndarray] | None, x: np.ndarray) -> tuple[np.ndarray, Any]:
    x = np.asarray(x, dtype=np.float64)
    out_shape = layer.output_shape(x.shape)
    _check_params(layer, params)
    kind = layer.kind
    if kind == "conv2d":
        out, cache = _conv_forward(layer, params["weight"], params["bias"], x)
    elif kind == "maxpool2d":
        out, cache = _pool_forward(layer, x)
    elif kind == "relu":
        out, cache = np.maximum(x, 0.0), x > 0
    elif kind == "linear":
        out, cache = x @ params["weight"].T + params["bias"], (x, params["weight"])
    elif kind == "sigmoid":
        out = 1.0 / (1.0 + np.exp(-x))
        cache = out
    elif kind == "tanh":
        out = np.tanh(x)
        cache = out
    else:  # global_avg_pool
        out, cache = x.mean(axis=(2, 3)), x.shape
    assert out.shape == out_shape, (layer, out.shape, out_shape)
    return out, (kind, x.shape, cache)


def backward(layer: LayerSpec, cache, upstream: np.ndarray) -> GradBundle:
    kind, in_shape, inner = cache
    if kind != layer.kind:
        raise ValueError(f"{layer.label}: cache was produced by a {kind} layer")
    out_shape = layer.output_shape(in_shape)
    if upstream.shape != out_shape:
        raise ValueError(f"{layer.label}: upstream gradient shape {upstream.shape} != output shape {out_shape}")
    if kind == "conv2d":
        return _conv_backward(layer, inner, upstream)
    if kind == "maxpool2d":
        return GradBundle(input=_pool_backward(layer, in_shape, inner, upstream))
    if kind == "relu":
        return GradBundle(input=upstream * inner)
    if kind == "linear":
        x, w = inner
        return GradBundle({"weight": upstream.T @ x, "bias": upstream.sum(axis=0)}, upstream @ w)
    if kind == "sigmoid":
        return GradBundle(input=upstream * inner * (1.0 - inner))
    if kind == "tanh":
        return GradBundle(input=upstream * (1.0 - inner**2))
    n, c, h, w = in_shape
    return GradBundle(input=np.broadcast_to(upstream[:, :, None, None] / (h * w), in_shape).copy())


def _offsets(k: int, s: int, ho: int, wo: int):
    """Kernel offsets (i, j) with the input slices they read for a strided output."""
    for i in range(k):
        for j in range(k):
            yield i, j, slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s)


def _conv_forward(layer: LayerSpec, w: np.ndarray, b: np.ndarray, x: np.ndarray):
    # im2col: one (N*Ho*Wo, C*k*k) patch matrix, one GEMM
    k, s, p = layer.kernel, layer.stride, layer.padding
    n, c = x.shape[:2]
    _, _, ho, wo = layer.output_shape(x.shape)
    xp = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (p, p), (p, p), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
    cols = windows.reshape(n * ho * wo, c * k * k)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)), (cols, w, xp.shape)


def _conv_backward(layer: LayerSpec, inner, upstream: np.ndarray) -> GradBundle:
    cols, w, padded_shape = inner
    k, s, p = layer.kernel, layer.stride, layer.padding
    n, o, ho, wo = upstream.shape
    up = upstream.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (up.T @ cols).reshape(w.shape)
    dcols = (up @ w.reshape(o, -1)).reshape(n, ho, wo, w.shape[1], k, k)
    dxp = np.zeros(padded_shape)  # (N, Hp, Wp, C)
    for i, j, rows, cols_ in _offsets(k, s, ho, wo):
        dxp[:, rows, cols_] += dcols[..., i, j]
    hp, wp = padded_shape[1:3]
    dx = dxp[:, p : hp - p, p : wp - p].transpose(0, 3, 1, 2)
    return GradBundle({"weight": dw, "bias": up.sum(axis=0)}, np.ascontiguousarray(dx))


def _pool_windows(layer: LayerSpec, x: np.ndarray, ho: int, wo: int) -> np.ndarray:
    """(N, C, ho, wo, k*k) windows, offsets in row-major order."""
    k, s = layer.kernel, layer.stride
    if k == s:
        n, c = x.shape[:2]
        blocks = x[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k)
        return blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    return np.stack([x[:, :, rows, cols] for _, _, rows, cols in _offsets(k, s, ho, wo)], axis=-1)


def _pool_forward(layer: LayerSpec, x: np.ndarray):
    _, _, ho, wo = layer.output_shape(x.shape)
    windows = _pool_windows(layer, x, ho, wo)
    arg = np.argmax(windows, axis=-1)  # ties -> first offset in row-major order
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _pool_backward(layer: LayerSpec, in_shape, arg: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    k, s = layer.kernel, layer.stride
    n, c, ho, wo = upstream.shape
    routed = np.zeros(arg.shape + (k * k,))
    np.put_along_axis(routed, arg[..., None], upstream[..., None], axis=-1)
    dx = np.zeros(in_shape)
    if k == s:
        blocks = routed.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        dx[:, :, : ho * k, : wo * k] = blocks
        return dx
    for i, j, rows, cols in _offsets(k, s, ho, wo):
        dx[:, :, rows, cols] += routed[..., i * k + j]
    return dx


def attention_origin(cell_row: int, cell_col: int, factor: int, patch_size: int, image_h: int, image_w: int) -> tuple[int, int]:
    center_r = cell_row * factor + factor // 2
    center_c = cell_col * factor + factor // 2
    row = min(max(center_r - patch_size // 2, 0), image_h - patch_size)
    col = min(max(center_c - patch_size // 2, 0), image_w - patch_size)
    return row, col


def attention_locate(attention_map, downsample_factor: int, patch_size: int, image_h: int, image_w: int) -> PatchRegion:
    """Patch centred on the argmax cell of a single-channel attention map."""
    amap = np.asarray(attention_map, dtype=np.float64)
    amap = amap.reshape(amap.shape[-2:]) if amap.ndim > 2 and np.prod(amap.shape[:-2]) == 1 else amap
    if amap.ndim != 2:
        raise ValueError(f"attention map must be single-channel 2-D, got shape {np.shape(attention_map)}")
    if patch_size > image_h or patch_size > image_w:
        raise ValueError(f"patch size {patch_size} exceeds image {image_h}x{image_w}")
    r, c = divmod(int(np.argmax(amap)), amap.shape[1])
    row, col = attention_origin(r, c, downsample_factor, patch_size, image_h, image_w)
    return PatchRegion(row, col, patch_size)
