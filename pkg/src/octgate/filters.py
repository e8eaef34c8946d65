"""Small shared 1D signal utilities (depth-axis Gaussian filtering)."""

from __future__ import annotations

import numpy as np


def gaussian_kernel1d(sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Normalized 1D Gaussian kernel truncated at ``truncate`` sigmas."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(truncate * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def smooth_depth(signal: np.ndarray, sigma: float, truncate: float = 4.0) -> np.ndarray:
    """Gaussian smoothing along the last (depth) axis, edge-replicate padded.

    Works on a single A-scan (1D) or a stack of A-scans (..., P).
    """
    kernel = gaussian_kernel1d(sigma, truncate)
    radius = kernel.size // 2
    arr = np.asarray(signal, dtype=np.float64)
    pad = [(0, 0)] * (arr.ndim - 1) + [(radius, radius)]
    padded = np.pad(arr, pad, mode="edge")
    if arr.ndim == 1:
        return np.convolve(padded, kernel, mode="valid")
    flat = padded.reshape(-1, padded.shape[-1])
    out = np.stack([np.convolve(row, kernel, mode="valid") for row in flat])
    return out.reshape(arr.shape)
