"""Comparison OoD scorers sharing one contract: higher score = more OoD.

Four alternatives to the multi-scale Mahalanobis detector: a raw-signal
single-Gaussian Mahalanobis ablation, a signal-to-noise-ratio score, the
entropy of the downstream estimator's peak confidence, and a simplified
supervised classifier (logistic head on frozen features) trained against four
of the eight corruption kinds.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from . import mahal
from .datagen import SUPERVISED_TRAINING_KINDS, corrupt_fraction
from .downstream import confidence_heatmap
from .features import ExtractorDescriptor, FeatureSet, extractor_for_descriptor, make_builtin_extractor
from .mahal import DetectorModel, ModelFormatError
from .preprocess import PreprocConfig, preprocess_mscan, rescale_to_byte_range
from .scan import MScan

SCORER_NAMES = ("mahaad", "raw-mahaad", "snr", "uncertainty", "supervised-lite")

DEFAULT_POOL_FACTOR = 10
SUPERVISED_FORMAT_VERSION = 1


def snr_score(mscan: MScan) -> float:
    """Negated signal-to-noise ratio -mean/std over all samples of the M-scan.

    Negation keeps the shared orientation (higher = more OoD). A constant
    M-scan (std == 0) carries no anatomy and maps to +inf, the most-OoD
    sentinel.
    """
    s = mscan.samples.astype(np.float64)
    sigma = float(s.std())
    if sigma == 0.0:
        return float("inf")
    return -float(s.mean()) / sigma


def binary_entropy(p: np.ndarray | float) -> np.ndarray | float:
    """Entropy of a Bernoulli(p) in nats, defined as 0 at p in {0, 1}."""
    arr = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(arr)
    interior = (arr > 0.0) & (arr < 1.0)
    q = arr[interior]
    out[interior] = -q * np.log(q) - (1.0 - q) * np.log(1.0 - q)
    return out if out.ndim else float(out)


def uncertainty_score(mscan: MScan, estimator: Callable | None = None) -> float:
    """Mean binary entropy of each A-scan's peak heatmap probability.

    A saturated estimator (peak 1.0 everywhere) scores exactly 0; the score
    is capped by ln 2 at peak probability 0.5. Heatmap values outside [0, 1]
    are rejected. The default estimator is the confidence-preserving variant
    of the reference pipeline, since a max-normalized heatmap makes the
    entropy identically zero.
    """
    heatmap_fn = estimator or confidence_heatmap
    peaks = []
    for row in mscan.samples:
        heatmap = np.asarray(heatmap_fn(row), dtype=np.float64)
        if heatmap.min() < 0.0 or heatmap.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")
        peaks.append(heatmap.max())
    return float(np.mean(binary_entropy(np.array(peaks))))


def pooled_raw_vector(mscan: MScan, pool_factor: int = DEFAULT_POOL_FACTOR) -> np.ndarray:
    """Byte-rescale, average-pool along depth, flatten to one raw vector.

    Pooling keeps the raw-signal character while cutting W*P dims to a size a
    covariance fit can support; a trailing remainder shorter than
    ``pool_factor`` is dropped (674 -> 67 pools of 10).
    """
    if pool_factor < 1:
        raise ValueError(f"pool_factor must be >= 1, got {pool_factor}")
    s = rescale_to_byte_range(mscan).samples.astype(np.float64)
    n_pools = s.shape[1] // pool_factor
    if n_pools < 1:
        raise ValueError(
            f"pool_factor {pool_factor} exceeds depth {s.shape[1]}"
        )
    pooled = s[:, : n_pools * pool_factor].reshape(s.shape[0], n_pools, pool_factor)
    return pooled.mean(axis=2).reshape(-1)


def raw_mahaad_fit(
    mscans: Sequence[MScan],
    pool_factor: int = DEFAULT_POOL_FACTOR,
    epsilon: float = mahal.DEFAULT_EPSILON,
) -> DetectorModel:
    """Fit the single-Gaussian (K=1) raw-signal ablation.

    Re-uses the multi-scale fitting machinery, so regularization, triangular
    solves and persistence behave identically to the feature-space detector.
    """
    feature_sets = [
        FeatureSet((pooled_raw_vector(m, pool_factor),)) for m in mscans
    ]
    return mahal.fit(feature_sets, epsilon)


def raw_mahaad_score(
    mscan: MScan, model: DetectorModel, pool_factor: int = DEFAULT_POOL_FACTOR
) -> float:
    """Mahalanobis distance of the pooled raw vector to the fitted Gaussian."""
    return mahal.mahalanobis(pooled_raw_vector(mscan, pool_factor), model.scales[0])


@dataclass(frozen=True)
class SupervisedLiteModel:
    """Logistic head over concatenated, standardized feature vectors.

    Trained only on the four corruption kinds in ``training_corruptions``;
    the remaining kinds stay unseen, which is exactly what the per-corruption
    evaluation probes.
    """

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    training_corruptions: tuple[str, ...]
    extractor: ExtractorDescriptor
    preproc: PreprocConfig

    def __post_init__(self):
        for name in ("weights", "feature_means", "feature_stds"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.weights.size


def _logistic_loss_grad(params, X, y, l2):
    w = params[:-1]
    b = params[-1]
    z = X @ w + b
    # log(1 + exp(-y z)) with y in {-1, +1}, numerically stable
    yz = y * z
    loss = float(np.mean(np.logaddexp(0.0, -yz))) + 0.5 * l2 * float(w @ w)
    s = -y / (1.0 + np.exp(yz))
    grad_w = X.T @ s / X.shape[0] + l2 * w
    grad_b = float(np.mean(s))
    return loss, np.concatenate([grad_w, [grad_b]])


def supervised_lite_fit(
    clean_mscans: Sequence[MScan],
    seed: int = 0,
    extractor=None,
    preproc: PreprocConfig | None = None,
    kinds: Sequence[str] = SUPERVISED_TRAINING_KINDS,
    l2: float = 1e-2,
    max_iter: int = 200,
) -> SupervisedLiteModel:
    """Train the simplified supervised OoD classifier.

    Corrupts a random 50% of the training M-scans (kinds drawn with equal
    probability from ``kinds``), labels corrupted = 1, and fits an
    L2-regularized logistic regression on standardized concatenated features
    with a deterministic L-BFGS budget of ``max_iter`` iterations.
    """
    if len(clean_mscans) < 20:
        raise ValueError(
            f"need at least 20 training M-scans, got {len(clean_mscans)}"
        )
    ext = extractor or make_builtin_extractor()
    cfg = preproc or PreprocConfig()
    labeled = corrupt_fraction(list(clean_mscans), 0.5, kinds, seed)
    X = np.stack(
        [
            ext.extract(preprocess_mscan(lab.mscan, cfg)).concatenated()
            for lab in labeled
        ]
    )
    y01 = np.array([lab.is_corrupted for lab in labeled], dtype=np.float64)
    if y01.min() == y01.max():
        raise ValueError("training data is single-class; cannot fit a classifier")
    means = X.mean(axis=0)
    stds = np.maximum(X.std(axis=0), 1e-12)
    Xs = (X - means) / stds
    y = 2.0 * y01 - 1.0
    x0 = np.zeros(Xs.shape[1] + 1)
    result = minimize(
        _logistic_loss_grad,
        x0,
        args=(Xs, y, l2),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter},
    )
    params = result.x
    return SupervisedLiteModel(
        weights=params[:-1],
        bias=float(params[-1]),
        feature_means=means,
        feature_stds=stds,
        training_corruptions=tuple(kinds),
        extractor=ext.descriptor,
        preproc=cfg,
    )


def supervised_lite_score(
    mscan: MScan, model: SupervisedLiteModel, extractor=None
) -> float:
    """Classifier probability that the M-scan is corrupted (in (0, 1))."""
    ext = extractor if extractor is not None else extractor_for_descriptor(model.extractor)
    x = ext.extract(preprocess_mscan(mscan, model.preproc)).concatenated()
    xs = (x - model.feature_means) / model.feature_stds
    z = float(xs @ model.weights + model.bias)
    return 1.0 / (1.0 + np.exp(-z))


def _supervised_payload(model: SupervisedLiteModel) -> dict:
    return {
        "format_version": SUPERVISED_FORMAT_VERSION,
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "feature_means": model.feature_means.tolist(),
        "feature_stds": model.feature_stds.tolist(),
        "training_corruptions": list(model.training_corruptions),
        "extractor": model.extractor.as_dict(),
        "preproc": model.preproc.as_dict(),
    }


def save_supervised_lite(model: SupervisedLiteModel, path: str | Path) -> None:
    payload = _supervised_payload(model)
    envelope = dict(payload)
    envelope["checksum"] = hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    Path(path).write_text(json.dumps(envelope, indent=1))


def load_supervised_lite(path: str | Path) -> SupervisedLiteModel:
    envelope = json.loads(Path(path).read_text())
    if envelope.get("format_version") != SUPERVISED_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported supervised-lite format version "
            f"{envelope.get('format_version')!r}"
        )
    checksum = envelope.pop("checksum", None)
    actual = hashlib.sha256(
        json.dumps(envelope, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    if checksum != actual:
        raise ModelFormatError("supervised-lite payload checksum mismatch")
    return SupervisedLiteModel(
        weights=np.asarray(envelope["weights"], dtype=np.float64),
        bias=float(envelope["bias"]),
        feature_means=np.asarray(envelope["feature_means"], dtype=np.float64),
        feature_stds=np.asarray(envelope["feature_stds"], dtype=np.float64),
        training_corruptions=tuple(envelope["training_corruptions"]),
        extractor=ExtractorDescriptor.from_dict(envelope["extractor"]),
        preproc=PreprocConfig.from_dict(envelope["preproc"]),
    )


class MahaAdScorer:
    """Multi-scale Mahalanobis detector behind the uniform scorer interface."""

    name = "mahaad"

    def __init__(self, model: DetectorModel, extractor=None):
        self.model = model
        self.extractor = (
            extractor
            if extractor is not None
            else extractor_for_descriptor(model.extractor)
        )

    def score(self, mscan: MScan) -> float:
        return mahal.score(mscan, self.model, self.extractor).score


class RawMahaAdScorer:
    name = "raw-mahaad"

    def __init__(self, model: DetectorModel, pool_factor: int = DEFAULT_POOL_FACTOR):
        self.model = model
        self.pool_factor = pool_factor

    def score(self, mscan: MScan) -> float:
        return raw_mahaad_score(mscan, self.model, self.pool_factor)


class SnrScorer:
    name = "snr"

    def score(self, mscan: MScan) -> float:
        return snr_score(mscan)


class UncertaintyScorer:
    name = "uncertainty"

    def __init__(self, estimator: Callable | None = None):
        self.estimator = estimator

    def score(self, mscan: MScan) -> float:
        return uncertainty_score(mscan, self.estimator)


class SupervisedLiteScorer:
    name = "supervised-lite"

    def __init__(self, model: SupervisedLiteModel, extractor=None):
        self.model = model
        self.extractor = (
            extractor
            if extractor is not None
            else extractor_for_descriptor(model.extractor)
        )

    def score(self, mscan: MScan) -> float:
        return supervised_lite_score(mscan, self.model, self.extractor)
