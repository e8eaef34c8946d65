"""Per-scale Gaussian fitting, summed Mahalanobis scoring and model persistence.

Training fits one multivariate Gaussian per feature scale with population
(1/N) estimators. Scoring computes, per scale, the Mahalanobis distance of the
M-scan's pooled feature vector to that Gaussian via a triangular solve against
the stored Cholesky factor (never an explicit inverse), and sums the K
distances into a single OoD score. A score above the calibrated threshold tau
declares the whole M-scan - and therefore each of its A-scans - out of
distribution.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .features import ExtractorDescriptor, FeatureSet, extractor_for_descriptor
from .preprocess import PreprocConfig, preprocess_mscan
from .scan import MScan

DEFAULT_EPSILON = 1e-3
DEFAULT_QUANTILE = 0.99
MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Detector model file is malformed, tampered with, or incompatible."""


class UncalibratedModelError(RuntimeError):
    """Classification was requested from a model with no calibrated threshold."""


@dataclass(frozen=True)
class ScaleGaussian:
    """Gaussian for one feature scale.

    ``epsilon_used`` is the effective diagonal loading added before
    factorization, so ``chol_lower @ chol_lower.T == covariance +
    epsilon_used * I`` and the raw covariance is recoverable from the factor.
    """

    mean: np.ndarray
    covariance: np.ndarray
    chol_lower: np.ndarray
    epsilon_used: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).copy()
        cov = np.asarray(self.covariance, dtype=np.float64).copy()
        chol = np.asarray(self.chol_lower, dtype=np.float64).copy()
        d = mean.size
        if cov.shape != (d, d) or chol.shape != (d, d):
            raise ValueError(
                f"inconsistent dims: mean {d}, covariance {cov.shape}, "
                f"factor {chol.shape}"
            )
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric within 1e-9")
        for a in (mean, cov, chol):
            a.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "chol_lower", chol)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class DetectorModel:
    """K per-scale Gaussians plus threshold and preprocessing identity."""

    scales: tuple[ScaleGaussian, ...]
    extractor: ExtractorDescriptor | None
    preproc: PreprocConfig
    n_train: int
    tau: float | None = None
    quantile: float | None = None

    def __post_init__(self):
        if len(self.scales) < 1:
            raise ValueError("a detector needs at least one scale")
        if self.extractor is not None:
            dims = [s.dim for s in self.scales]
            if dims != list(self.extractor.dims):
                raise ValueError(
                    f"scale dims {dims} do not match extractor dims "
                    f"{list(self.extractor.dims)}"
                )
        if self.tau is not None and not np.isfinite(self.tau):
            raise ValueError("threshold must be finite (or None when uncalibrated)")

    @property
    def k(self) -> int:
        return len(self.scales)

    @property
    def is_calibrated(self) -> bool:
        return self.tau is not None

    def with_threshold(self, tau: float, quantile: float | None) -> "DetectorModel":
        return dataclasses.replace(self, tau=float(tau), quantile=quantile)


@dataclass(frozen=True)
class Verdict:
    """Score decomposition and OoD decision for one M-scan.

    ``ascan_flags`` broadcasts the M-scan decision to all W A-scans; it is
    None (like ``is_ood``) when the model carries no threshold.
    """

    score: float
    per_scale_distances: np.ndarray
    is_ood: bool | None = None
    ascan_flags: np.ndarray | None = None


def fit(
    feature_sets: Sequence[FeatureSet],
    epsilon: float = DEFAULT_EPSILON,
    *,
    extractor: ExtractorDescriptor | None = None,
    preproc: PreprocConfig | None = None,
) -> DetectorModel:
    """Fit K per-scale Gaussians with population (1/N) mean and covariance.

    Each scale's covariance gets diagonal loading ``epsilon * c * I`` with
    ``c = mean(diag(cov))`` (guard floor c = 1 when the diagonal is all zero)
    before Cholesky factorization, keeping the loading relative to the
    feature scale. The returned model is uncalibrated (tau is None).
    """
    if len(feature_sets) < 2:
        raise ValueError(f"need at least 2 samples to fit, got {len(feature_sets)}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    k = feature_sets[0].k
    dims = feature_sets[0].dims
    for i, fs in enumerate(feature_sets):
        if fs.k != k or fs.dims != dims:
            raise ValueError(
                f"heterogeneous feature sets: sample 0 has dims {dims}, "
                f"sample {i} has dims {fs.dims}"
            )
    n = len(feature_sets)
    scales = []
    for scale_idx in range(k):
        stacked = np.stack([fs.vectors[scale_idx] for fs in feature_sets])
        mu = stacked.mean(axis=0)
        centered = stacked - mu
        cov = (centered.T @ centered) / n
        cov = 0.5 * (cov + cov.T)  # exact symmetry against fp drift
        c = float(np.mean(np.diag(cov)))
        if c == 0.0:
            c = 1.0
        loading = epsilon * c
        regularized = cov + loading * np.eye(cov.shape[0])
        try:
            chol = cholesky(regularized, lower=True)
        except np.linalg.LinAlgError as exc:
            cond = float(np.linalg.cond(regularized))
            raise ValueError(
                f"covariance factorization failed at scale {scale_idx} "
                f"(condition estimate {cond:.3e}); increase epsilon"
            ) from exc
        scales.append(ScaleGaussian(mu, cov, chol, loading))
    return DetectorModel(
        scales=tuple(scales),
        extractor=extractor,
        preproc=preproc or PreprocConfig(),
        n_train=n,
    )


def mahalanobis(feature: np.ndarray, scale: ScaleGaussian) -> float:
    """Mahalanobis distance of a feature vector to one scale's Gaussian.

    Computed as the norm of the forward-substitution solve
    ``L^-1 (f - mean)``; non-negative, and zero only at the mean.
    """
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != scale.mean.shape:
        raise ValueError(f"dim mismatch: feature {f.shape}, scale {scale.mean.shape}")
    z = solve_triangular(scale.chol_lower, f - scale.mean, lower=True)
    return float(np.sqrt(np.dot(z, z)))


def distances_for(features: FeatureSet, model: DetectorModel) -> np.ndarray:
    """Per-scale Mahalanobis distances d_1..d_K of one feature set."""
    if features.k != model.k:
        raise ValueError(f"feature set has {features.k} scales, model has {model.k}")
    return np.array(
        [mahalanobis(v, s) for v, s in zip(features.vectors, model.scales)]
    )


def score(
    mscan: MScan,
    model: DetectorModel,
    extractor=None,
    *,
    classify: bool = False,
) -> Verdict:
    """Preprocess, extract, and sum per-scale Mahalanobis distances.

    With a calibrated model the verdict carries ``is_ood = score > tau`` and
    per-A-scan flags (W copies of the M-scan decision). ``classify=True``
    demands a decision and raises on an uncalibrated model.
    """
    if classify and not model.is_calibrated:
        raise UncalibratedModelError(
            "model has no threshold; run calibrate_threshold() first"
        )
    ext = extractor if extractor is not None else _resolve_extractor(model)
    prepped = preprocess_mscan(mscan, model.preproc)
    features = ext.extract(prepped)
    d = distances_for(features, model)
    total = float(d.sum())
    if model.is_calibrated:
        decision = bool(total > model.tau)
        flags = np.full(mscan.w, decision, dtype=bool)
        return Verdict(total, d, decision, flags)
    return Verdict(total, d)


def score_many(
    mscans: Sequence[MScan], model: DetectorModel, extractor=None
) -> np.ndarray:
    """OoD scores for a batch of M-scans."""
    ext = extractor if extractor is not None else _resolve_extractor(model)
    return np.array([score(m, model, ext).score for m in mscans])


def _resolve_extractor(model: DetectorModel):
    if model.extractor is None:
        raise ValueError(
            "model stores no extractor descriptor; pass the extractor explicitly"
        )
    return extractor_for_descriptor(model.extractor)


def calibrate_threshold(
    model: DetectorModel,
    holdout_mscans: Sequence[MScan],
    quantile: float = DEFAULT_QUANTILE,
    extractor=None,
) -> DetectorModel:
    """Set tau to the empirical q-quantile (linear interpolation) of holdout scores.

    The holdout is presumed in-distribution; q is the single user-facing knob
    (default 0.99, i.e. roughly 1% expected false rejects on fresh
    in-distribution data).
    """
    if len(holdout_mscans) == 0:
        raise ValueError("holdout must be non-empty")
    if not (0.0 < quantile <= 1.0):
        raise ValueError(f"quantile must be in (0, 1], got {quantile}")
    scores = score_many(holdout_mscans, model, extractor)
    tau = float(np.quantile(scores, quantile, method="linear"))
    return model.with_threshold(tau, quantile)


def _model_payload(model: DetectorModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "extractor": model.extractor.as_dict() if model.extractor else None,
        "preproc": model.preproc.as_dict(),
        "tau": model.tau,
        "quantile": model.quantile,
        "n_train": model.n_train,
        "scales": [
            {
                "mean": s.mean.tolist(),
                "chol_lower": s.chol_lower.tolist(),
                "epsilon_used": s.epsilon_used,
            }
            for s in model.scales
        ],
    }


def _payload_checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_model(model: DetectorModel, path: str | Path) -> None:
    """Persist the detector as a versioned, checksummed JSON envelope.

    Means and Cholesky factors are stored at full decimal precision (shortest
    round-trip float repr), so a loaded model reproduces scores bit-identically.
    """
    payload = _model_payload(model)
    envelope = dict(payload)
    envelope["checksum"] = _payload_checksum(payload)
    Path(path).write_text(json.dumps(envelope, indent=1))


def load_model(path: str | Path, expected_extractor=None) -> DetectorModel:
    """Load a saved detector, verifying version and payload checksum.

    If ``expected_extractor`` (an extractor or descriptor) is given, a K or
    dims mismatch is an error; a config-digest mismatch only warns, since a
    re-created extractor of identical shape may legitimately differ in digest.
    """
    try:
        envelope = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    version = envelope.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {version!r} "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    stored_checksum = envelope.pop("checksum", None)
    if stored_checksum is None:
        raise ModelFormatError("model file carries no checksum")
    actual = _payload_checksum(envelope)
    if actual != stored_checksum:
        raise ModelFormatError(
            "model payload checksum mismatch: file is corrupt or was modified"
        )
    desc = (
        ExtractorDescriptor.from_dict(envelope["extractor"])
        if envelope.get("extractor")
        else None
    )
    scales = []
    for entry in envelope["scales"]:
        chol = np.asarray(entry["chol_lower"], dtype=np.float64)
        loading = float(entry["epsilon_used"])
        cov = chol @ chol.T - loading * np.eye(chol.shape[0])
        cov = 0.5 * (cov + cov.T)
        scales.append(
            ScaleGaussian(
                mean=np.asarray(entry["mean"], dtype=np.float64),
                covariance=cov,
                chol_lower=chol,
                epsilon_used=loading,
            )
        )
    model = DetectorModel(
        scales=tuple(scales),
        extractor=desc,
        preproc=PreprocConfig.from_dict(envelope["preproc"]),
        n_train=int(envelope["n_train"]),
        tau=envelope["tau"],
        quantile=envelope["quantile"],
    )
    if expected_extractor is not None and desc is not None:
        expected_desc = getattr(expected_extractor, "descriptor", expected_extractor)
        if expected_desc.k != desc.k or tuple(expected_desc.dims) != tuple(desc.dims):
            raise ModelFormatError(
                f"extractor shape mismatch: model was fit with K={desc.k} dims="
                f"{list(desc.dims)}, configured extractor has K={expected_desc.k} "
                f"dims={list(expected_desc.dims)}"
            )
        if expected_desc.config_digest != desc.config_digest:
            warnings.warn(
                f"extractor config digest differs from the one stored in the "
                f"model ({expected_desc.config_digest} vs {desc.config_digest}); "
                "scores may not be comparable",
                stacklevel=2,
            )
    return model


def fit_detector(
    mscans: Sequence[MScan],
    extractor,
    preproc: PreprocConfig | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> DetectorModel:
    """Convenience: preprocess + extract a training set, then fit."""
    cfg = preproc or PreprocConfig()
    feature_sets = [extractor.extract(preprocess_mscan(m, cfg)) for m in mscans]
    return fit(
        feature_sets, epsilon, extractor=extractor.descriptor, preproc=cfg
    )
