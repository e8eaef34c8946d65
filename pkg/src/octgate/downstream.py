"""Downstream ILM localization: per-A-scan heatmaps, argmax distance, MAE.

The reference estimator is a deterministic matched-filter pipeline standing in
for a trained network so every experiment runs without learned weights; an
exported TorchScript model can be loaded as a drop-in alternative. Heatmaps
are per-location probabilities in [0, 1] (not normalized distributions); the
argmax becomes the ILM depth estimate and, via the depth resolution, the
instrument-to-retina distance.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import smooth_depth
from .scan import DEFAULT_DEPTH_RESOLUTION_UM

REFERENCE_SMOOTH_SIGMA = 3.0


@dataclass(frozen=True)
class IlmEstimate:
    """ILM location for one A-scan: pixel index, metric distance, confidence."""

    index: int
    distance_um: float
    confidence: float


def reference_heatmap(ascan: np.ndarray) -> np.ndarray:
    """Bright-rising-edge heatmap of one A-scan.

    Depth-smooth (Gaussian sigma=3), forward-difference gradient, half-wave
    rectify (keep rising edges toward brighter tissue), normalize by the scan's
    max rectified gradient. An A-scan with no rising edge yields all zeros.
    """
    arr = np.asarray(ascan, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1D A-scan, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("A-scan must be finite")
    smoothed = smooth_depth(arr, REFERENCE_SMOOTH_SIGMA)
    grad = np.zeros_like(smoothed)
    grad[:-1] = smoothed[1:] - smoothed[:-1]
    rectified = np.maximum(grad, 0.0)
    peak = rectified.max()
    if peak <= 0.0:
        return np.zeros_like(rectified)
    return rectified / peak


def confidence_heatmap(ascan: np.ndarray, softness: float = 2.0) -> np.ndarray:
    """Reference pipeline with an absolute confidence scale for uncertainty scoring.

    :func:`reference_heatmap` saturates its peak to exactly 1 (argmax
    localization does not care about scale), which makes the entropy of the
    peak probability degenerate. Here the rectified gradient g is mapped to
    ``g / (g_max + softness)``: a strong edge pushes the peak toward 1, a weak
    or absent edge keeps it low, so peak probability tracks edge strength.
    """
    if softness <= 0:
        raise ValueError(f"softness must be positive, got {softness}")
    arr = np.asarray(ascan, dtype=np.float64)
    smoothed = smooth_depth(arr, REFERENCE_SMOOTH_SIGMA)
    grad = np.zeros_like(smoothed)
    grad[:-1] = smoothed[1:] - smoothed[:-1]
    rectified = np.maximum(grad, 0.0)
    return rectified / (rectified.max() + softness)


class ExportedHeatmapModel:
    """Per-A-scan heatmap from an exported TorchScript model.

    The archive must map a float32 ``(P,)`` input to a ``(P,)`` raw output;
    raw values are clamped into [0, 1]. Inference calls are serialized behind
    a lock, so instances are safe to share across threads.
    """

    def __init__(self, model_path: str | Path):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise ImportError(
                "exported heatmap models require the optional 'torch' dependency"
            ) from exc
        path = Path(model_path)
        if not path.is_file():
            raise FileNotFoundError(f"model file not found: {path}")
        self._torch = torch
        self._lock = threading.Lock()
        try:
            self._model = torch.jit.load(str(path), map_location="cpu")
        except Exception as exc:
            raise ValueError(f"could not load TorchScript archive {path}: {exc}") from exc
        self._model.eval()
        self.model_path = path

    def __call__(self, ascan: np.ndarray) -> np.ndarray:
        torch = self._torch
        # Always copy: frozen library arrays would trip torch's writable check.
        arr = np.array(ascan, dtype=np.float32, order="C")
        if arr.ndim != 1:
            raise ValueError(f"expected a 1D A-scan, got shape {arr.shape}")
        with self._lock, torch.no_grad():
            raw = self._model(torch.from_numpy(arr))
        out = raw.double().cpu().numpy().reshape(-1)
        if out.size != arr.size:
            raise ValueError(
                f"model produced {out.size} outputs for a {arr.size}-pixel A-scan"
            )
        return np.clip(out, 0.0, 1.0)


def exported_heatmap(ascan: np.ndarray, model_path: str | Path) -> np.ndarray:
    """One-shot convenience wrapper around :class:`ExportedHeatmapModel`."""
    return ExportedHeatmapModel(model_path)(ascan)


def ilm_from_heatmap(
    heatmap: np.ndarray, resolution_um: float = DEFAULT_DEPTH_RESOLUTION_UM
) -> IlmEstimate:
    """Argmax localization; ties break to the smallest index.

    The smallest-index tie-break is the conservative choice for a
    distance-keeping system: it reports the boundary closest to the instrument.
    """
    probs = np.asarray(heatmap, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise ValueError(f"expected a non-empty 1D heatmap, got shape {probs.shape}")
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValueError("heatmap values must lie in [0, 1]")
    index = int(np.argmax(probs))
    return IlmEstimate(
        index=index,
        distance_um=index * resolution_um,
        confidence=float(probs[index]),
    )


def estimate_mscan_ilm(samples: np.ndarray, estimator=None) -> np.ndarray:
    """Per-A-scan ILM pixel indices for a (W, P) sample grid."""
    heatmap_fn = estimator or reference_heatmap
    return np.array([ilm_from_heatmap(heatmap_fn(row)).index for row in samples])


def mae(
    estimates: np.ndarray,
    truths: np.ndarray,
    mask: np.ndarray | None = None,
) -> float:
    """Mean absolute error in pixels over masked-in entries.

    ``mask`` marks A-scans retained for evaluation (True = kept). An empty
    retained set returns NaN so the caller must report it explicitly rather
    than mistake it for a perfect score.
    """
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    if est.shape != tru.shape:
        raise ValueError(f"length mismatch: estimates {est.shape}, truths {tru.shape}")
    if mask is None:
        kept_est, kept_tru = est, tru
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != est.shape:
            raise ValueError(f"mask shape {m.shape} does not match {est.shape}")
        kept_est, kept_tru = est[m], tru[m]
    if kept_est.size == 0:
        return float("nan")
    return float(np.abs(kept_est - kept_tru).mean())


def mae_um(mae_px: float, resolution_um: float = DEFAULT_DEPTH_RESOLUTION_UM) -> float:
    """Convert a pixel MAE to micrometers at the reporting boundary."""
    return mae_px * resolution_um
