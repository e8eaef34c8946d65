"""Preprocessing chain applied to an M-scan before feature extraction.

Pipeline: rescale intensities to byte range -> bicubic resize to the target
grid -> divide to [0, 1], replicate grayscale to 3 channels and z-score
normalize per channel. Every step is a pure function; identical input bytes
produce identical output bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scan import MScan

# Widely published channel statistics used by pretrained image networks.
IMAGENET_MEANS = (0.485, 0.456, 0.406)
IMAGENET_STDS = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class PreprocConfig:
    """Target grid and channel-normalization constants for preprocessing."""

    target_height: int = 64
    target_width: int = 224
    channel_means: tuple[float, float, float] = IMAGENET_MEANS
    channel_stds: tuple[float, float, float] = IMAGENET_STDS
    byte_range_max: float = 255.0

    def __post_init__(self):
        if self.target_height < 2 or self.target_width < 2:
            raise ValueError("target dims must be >= 2")
        if any(s <= 0 for s in self.channel_stds):
            raise ValueError("channel stds must be strictly positive")
        if self.byte_range_max <= 0:
            raise ValueError("byte_range_max must be positive")

    def as_dict(self) -> dict:
        return {
            "target_height": self.target_height,
            "target_width": self.target_width,
            "channel_means": list(self.channel_means),
            "channel_stds": list(self.channel_stds),
            "byte_range_max": self.byte_range_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocConfig":
        return cls(
            target_height=int(d["target_height"]),
            target_width=int(d["target_width"]),
            channel_means=tuple(float(x) for x in d["channel_means"]),
            channel_stds=tuple(float(x) for x in d["channel_stds"]),
            byte_range_max=float(d["byte_range_max"]),
        )


@dataclass(frozen=True)
class PreppedImage:
    """Normalized 3-channel grid, shape ``(3, H, W)``, ready for an extractor."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) pixels, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("prepped image must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


def rescale_to_byte_range(mscan: MScan, byte_range_max: float = 255.0) -> MScan:
    """Linearly map the M-scan's [min, max] onto [0, byte_range_max].

    The scope is per M-scan: scoring stays independent of dataset-level
    statistics. A constant M-scan maps to all-zeros (min == max guard) so that
    degenerate scans still flow through every scorer.
    """
    s = mscan.samples.astype(np.float64)
    lo = float(s.min())
    hi = float(s.max())
    if hi == lo:
        out = np.zeros_like(s)
    else:
        out = (s - lo) * (byte_range_max / (hi - lo))
    return mscan.with_samples(out.astype(np.float32))


def _catmull_rom_weights(s: np.ndarray) -> np.ndarray:
    """Kernel weights for taps at offsets (-1, 0, 1, 2) around fraction ``s``.

    Keys cubic with a = -0.5 (Catmull-Rom); rows sum to 1 exactly in analytic
    terms, so constants are preserved.
    """
    s = np.asarray(s, dtype=np.float64)
    s2 = s * s
    s3 = s2 * s
    w_m1 = -0.5 * s3 + s2 - 0.5 * s
    w_0 = 1.5 * s3 - 2.5 * s2 + 1.0
    w_1 = -1.5 * s3 + 2.0 * s2 + 0.5 * s
    w_2 = 0.5 * s3 - 0.5 * s2
    return np.stack([w_m1, w_0, w_1, w_2], axis=-1)


@lru_cache(maxsize=32)
def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) Catmull-Rom resampling operator along one axis.

    Output sample i reads input coordinate ``(i + 0.5) * n_in/n_out - 0.5``
    (pixel-center convention); out-of-range taps are clamped to the edge.
    """
    if n_in < 2:
        raise ValueError(f"need at least 2 samples along an axis, got {n_in}")
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    weights = _catmull_rom_weights(frac)  # (n_out, 4)
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for k, off in enumerate((-1, 0, 1, 2)):
        taps = np.clip(base + off, 0, n_in - 1)
        np.add.at(mat, (rows, taps), weights[:, k])
    mat.flags.writeable = False
    return mat


def resize_bicubic(grid: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Separable Catmull-Rom resize of a 2D grid to (out_height, out_width).

    Edge-clamped; linear in the input values and constant-preserving. Input
    must be at least 2x2.
    """
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2D grid, got shape {arr.shape}")
    h, w = arr.shape
    if h < 2 or w < 2:
        raise ValueError(f"degenerate input dims {arr.shape}; need >= 2x2")
    row_op = _resample_matrix(h, out_height)
    col_op = _resample_matrix(w, out_width)
    return row_op @ arr @ col_op.T


def resample_1d(signal: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Catmull-Rom interpolation of a 1D signal at arbitrary real coordinates.

    Taps outside the signal are clamped to the edge samples.
    """
    sig = np.asarray(signal, dtype=np.float64)
    if sig.ndim != 1 or sig.size < 2:
        raise ValueError("need a 1D signal with at least 2 samples")
    c = np.asarray(coords, dtype=np.float64)
    base = np.floor(c).astype(np.int64)
    frac = c - base
    weights = _catmull_rom_weights(frac)  # (..., 4)
    out = np.zeros_like(c)
    for k, off in enumerate((-1, 0, 1, 2)):
        taps = np.clip(base + off, 0, sig.size - 1)
        out += weights[..., k] * sig[taps]
    return out


def normalize_channels(grid: np.ndarray, config: PreprocConfig) -> PreppedImage:
    """Scale a byte-range grid to [0, 1], replicate to 3 channels, z-score each.

    Channel c becomes ``(grid / byte_range_max - mean_c) / std_c``.
    """
    arr = np.asarray(grid, dtype=np.float64) / config.byte_range_max
    means = np.asarray(config.channel_means, dtype=np.float64)[:, None, None]
    stds = np.asarray(config.channel_stds, dtype=np.float64)[:, None, None]
    channels = (arr[None, :, :] - means) / stds
    return PreppedImage(channels)


def preprocess_mscan(mscan: MScan, config: PreprocConfig | None = None) -> PreppedImage:
    """Full deterministic chain: rescale -> bicubic resize -> channel normalize."""
    cfg = config or PreprocConfig()
    rescaled = rescale_to_byte_range(mscan, cfg.byte_range_max)
    resized = resize_bicubic(rescaled.samples, cfg.target_height, cfg.target_width)
    # Resize overshoot is inherent to cubic kernels; keep values in byte range
    # so the [0, 1] contract of normalize_channels holds.
    resized = np.clip(resized, 0.0, cfg.byte_range_max)
    return normalize_channels(resized, cfg)
