"""Patch complexity from 2D-DFT energy and high-frequency patch selection."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class SpectralConfig:
    patch_size: int = 4
    cutoff: float = 0.25
    epsilon: float = 1e-12
    folded_frequencies: bool = False

    def __post_init__(self):
        if self.patch_size < 2:
            raise ValueError(f"patch_size must be >= 2, got {self.patch_size}")
        if not 0 < self.cutoff < np.sqrt(2):
            raise ValueError(f"cutoff must lie in (0, sqrt(2)), got {self.cutoff}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class PatchRegion:
    row: int
    col: int
    size: int

    def slice(self, image: np.ndarray) -> np.ndarray:
        return image[..., self.row : self.row + self.size, self.col : self.col + self.size]

    def inside(self, height: int, width: int) -> bool:
        return 0 <= self.row and 0 <= self.col and self.row + self.size <= height and self.col + self.size <= width


@dataclass
class RMetricMap:
    values: np.ndarray  # (H // h, W // h)
    patch_size: int

    @property
    def origins(self) -> list[tuple[int, int]]:
        h = self.patch_size
        return [(i * h, j * h) for i in range(self.values.shape[0]) for j in range(self.values.shape[1])]


@lru_cache(maxsize=None)
def _dft_matrix(h: int) -> np.ndarray:
    k = np.arange(h)
    return np.exp(-2j * np.pi * np.outer(k, k) / h)


def dft2_batch(regions: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D-DFT over the last two axes (square, h x h).

    The transform is taken of ``R - R[0, 0]`` with ``R[0, 0] * h**2`` added
    back at DC, so constant regions produce exact zeros off DC.
    """
    regions = np.asarray(regions, dtype=np.float64)
    h = regions.shape[-1]
    ref = regions[..., :1, :1]
    f = _dft_matrix(h)
    coeffs = f @ (regions - ref) @ f.T
    coeffs[..., 0, 0] += ref[..., 0, 0] * h * h
    return coeffs


def dft2(region) -> np.ndarray:
    region = np.asarray(region, dtype=np.float64)
    if region.ndim != 2 or region.shape[0] != region.shape[1] or region.size == 0:
        raise ValueError(f"dft2 needs a non-empty square matrix, got shape {region.shape}")
    if not np.all(np.isfinite(region)):
        raise ValueError("dft2 input contains non-finite values")
    return dft2_batch(region)


@lru_cache(maxsize=None)
def high_frequency_mask(h: int, cutoff: float, folded: bool = False) -> np.ndarray:
    """True where f_{u,v} > cutoff; f uses raw indices u/h unless ``folded``."""
    k = np.arange(h)
    if folded:
        k = np.minimum(k, h - k)
    f = np.sqrt((k[:, None] / h) ** 2 + (k[None, :] / h) ** 2)
    return f > cutoff


def r_metric_batch(regions: np.ndarray, config: SpectralConfig) -> np.ndarray:
    coeffs = dft2_batch(regions)
    energy = coeffs.real**2 + coeffs.imag**2
    high = high_frequency_mask(regions.shape[-1], config.cutoff, config.folded_frequencies)
    e_high = np.where(high, energy, 0.0).sum(axis=(-2, -1))
    e_low = np.where(high, 0.0, energy).sum(axis=(-2, -1))
    return np.sqrt(e_high / np.maximum(e_low, config.epsilon))


def r_metric(region, config: SpectralConfig) -> float:
    """sqrt(E_high / max(E_low, epsilon)) for one square region."""
    region = np.asarray(region, dtype=np.float64)
    if region.ndim != 2 or region.shape[0] != region.shape[1]:
        raise ValueError(f"r_metric needs a square matrix, got shape {region.shape}")
    return float(r_metric_batch(region, config))


def tile(images: np.ndarray, h: int) -> np.ndarray:
    """(..., H, W) -> (..., H//h, W//h, h, h), dropping trailing pixels."""
    *lead, height, width = images.shape
    nh, nw = height // h, width // h
    cropped = images[..., : nh * h, : nw * h]
    tiles = cropped.reshape(*lead, nh, h, nw, h)
    return np.moveaxis(tiles, -3, -2)


def r_metric_maps(images: np.ndarray, config: SpectralConfig) -> np.ndarray:
    h = config.patch_size
    if images.shape[-2] < h or images.shape[-1] < h:
        raise ValueError(f"image of shape {images.shape[-2:]} is smaller than one {h}x{h} patch")
    return r_metric_batch(tile(np.asarray(images, dtype=np.float64), h), config)


def select_hsf_batch(images: np.ndarray, config: SpectralConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Origins (rows, cols) of the max-r tile for each image, plus the maps."""
    maps = r_metric_maps(images, config)
    flat = maps.reshape(maps.shape[0], -1)
    best = np.argmax(flat, axis=1)  # first maximum = smallest row-major index
    nw = maps.shape[-1]
    h = config.patch_size
    return (best // nw) * h, (best % nw) * h, maps


def select_hsf_patch(image, config: SpectralConfig) -> tuple[PatchRegion, RMetricMap]:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    rows, cols, maps = select_hsf_batch(image[None], config)
    region = PatchRegion(int(rows[0]), int(cols[0]), config.patch_size)
    return region, RMetricMap(maps[0], config.patch_size)


def format_r_map(rmap: RMetricMap, precision: int = 4) -> str:
    lines = []
    for i, row in enumerate(rmap.values):
        cells = " ".join(f"{v:.{precision}g}".rjust(precision + 7) for v in row)
        lines.append(f"{i * rmap.patch_size:5d} | {cells}")
    header = "  row | " + " ".join(f"col {j * rmap.patch_size}".rjust(precision + 7) for j in range(rmap.values.shape[1]))
    return "\n".join([header] + lines)
