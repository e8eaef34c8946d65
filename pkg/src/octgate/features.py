"""Multi-scale feature extraction: K pooled vectors per preprocessed M-scan.

Two extractors share one interface. The builtin pyramid extractor is fully
deterministic, needs no external files, and drives the whole test suite. The
exported-network extractor loads a TorchScript archive and spatially
average-pools K named intermediate feature maps; it is the fidelity path for
pretrained backbones and is optional (requires ``torch``).
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .preprocess import PreppedImage

N_LEVEL_FEATURES = 6
DEFAULT_BUILTIN_LEVELS = 4

# 3x3 binomial smoothing kernel, [1 2 1] x [1 2 1] / 16.
_BINOMIAL_1D = np.array([0.25, 0.5, 0.25], dtype=np.float64)


@dataclass(frozen=True)
class FeatureSet:
    """K pooled feature vectors for one M-scan, ordered coarse-ward."""

    vectors: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.vectors) < 1:
            raise ValueError("a FeatureSet needs at least one scale")
        frozen = []
        for v in self.vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError("feature vectors must be 1D")
            if not np.all(np.isfinite(arr)):
                raise ValueError("feature vectors must be finite")
            arr = arr.copy()
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "vectors", tuple(frozen))

    @property
    def k(self) -> int:
        return len(self.vectors)

    @property
    def dims(self) -> list[int]:
        return [v.size for v in self.vectors]

    def concatenated(self) -> np.ndarray:
        return np.concatenate(self.vectors)


@dataclass(frozen=True)
class ExtractorDescriptor:
    """Identity of an extractor configuration; digest is stable across runs."""

    kind: str  # "builtin_pyramid" | "exported_network"
    k: int
    dims: tuple[int, ...]
    config_digest: str

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.k,
            "dims": list(self.dims),
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorDescriptor":
        return cls(
            kind=str(d["kind"]),
            k=int(d["k"]),
            dims=tuple(int(x) for x in d["dims"]),
            config_digest=str(d["config_digest"]),
        )


def _digest(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def _smooth_binomial(grid: np.ndarray) -> np.ndarray:
    """Separable 3x3 binomial smoothing with edge-replicate padding."""
    padded = np.pad(grid, 1, mode="edge")
    rows = (
        padded[:, :-2] * _BINOMIAL_1D[0]
        + padded[:, 1:-1] * _BINOMIAL_1D[1]
        + padded[:, 2:] * _BINOMIAL_1D[2]
    )
    return (
        rows[:-2] * _BINOMIAL_1D[0]
        + rows[1:-1] * _BINOMIAL_1D[1]
        + rows[2:] * _BINOMIAL_1D[2]
    )


def builtin_pyramid_levels(prepped: PreppedImage, k: int) -> list[np.ndarray]:
    """Smooth-and-decimate pyramid over the channel-mean of the input.

    Level 0 is the channel mean; level k+1 is level k smoothed with a 3x3
    binomial kernel and decimated by 2 along both axes (keeping even indices).
    Every retained level must be at least 2x2.
    """
    if k < 1:
        raise ValueError(f"need k >= 1 levels, got {k}")
    level = prepped.pixels.mean(axis=0)
    levels = [level]
    for _ in range(k - 1):
        nxt = _smooth_binomial(levels[-1])[::2, ::2]
        if nxt.shape[0] < 2 or nxt.shape[1] < 2:
            raise ValueError(
                f"k={k} is too deep for input {prepped.pixels.shape[1:]}; "
                f"level would shrink to {nxt.shape}"
            )
        levels.append(nxt)
    return levels


def builtin_level_features(grid: np.ndarray) -> np.ndarray:
    """Six pooled statistics of one pyramid level.

    (mean, std, mean |dx|, mean |dy|, mean |laplacian|, mean local contrast),
    with forward-difference gradients, 5-point interior Laplacian, and local
    contrast measured against an edge-replicated 3x3 box mean. Constant grids
    map to (c, 0, 0, 0, 0, 0).
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2 or g.shape[1] < 2:
        raise ValueError(f"need a grid of at least 2x2, got shape {g.shape}")
    mean = g.mean()
    std = g.std()
    dx = np.abs(np.diff(g, axis=1)).mean()
    dy = np.abs(np.diff(g, axis=0)).mean()
    if g.shape[0] >= 3 and g.shape[1] >= 3:
        lap = (
            g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4.0 * g[1:-1, 1:-1]
        )
        lap_mean = np.abs(lap).mean()
    else:
        lap_mean = 0.0
    padded = np.pad(g, 1, mode="edge")
    box = sum(
        padded[i : i + g.shape[0], j : j + g.shape[1]]
        for i in range(3)
        for j in range(3)
    ) / 9.0
    contrast = np.abs(g - box).mean()
    return np.array([mean, std, dx, dy, lap_mean, contrast])


class BuiltinPyramidExtractor:
    """Deterministic K-level pyramid extractor (6 statistics per level)."""

    kind = "builtin_pyramid"

    def __init__(self, levels: int = DEFAULT_BUILTIN_LEVELS):
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.levels = levels

    @property
    def k(self) -> int:
        return self.levels

    @property
    def dims(self) -> list[int]:
        return [N_LEVEL_FEATURES] * self.levels

    @property
    def descriptor(self) -> ExtractorDescriptor:
        return ExtractorDescriptor(
            kind=self.kind,
            k=self.levels,
            dims=tuple(self.dims),
            config_digest=_digest({"kind": self.kind, "levels": self.levels}),
        )

    def extract(self, prepped: PreppedImage) -> FeatureSet:
        levels = builtin_pyramid_levels(prepped, self.levels)
        return FeatureSet(tuple(builtin_level_features(lv) for lv in levels))


class ExportedNetworkExtractor:
    """Pools K named intermediate outputs of an exported TorchScript model.

    The archive must contain a module that maps a ``(1, 3, H, W)`` float input
    to either a dict of named feature maps or a single tensor (exposed under
    the name ``"output"``). ``tap_points`` selects, in order, which named maps
    become the K scales; each tapped map is average-pooled over its spatial
    axes to one vector per scale.

    TorchScript inference sessions are not documented as reentrant, so calls
    are serialized behind an internal lock; the extractor is thread-safe.
    """

    kind = "exported_network"

    def __init__(self, model_path: str | Path, tap_points: list[str]):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise ImportError(
                "the exported-network extractor requires the optional 'torch' "
                "dependency (pip install octgate[exported-models])"
            ) from exc
        path = Path(model_path)
        if not path.is_file():
            raise FileNotFoundError(f"model file not found: {path}")
        if not tap_points:
            raise ValueError("tap_points must name at least one output")
        self._torch = torch
        self._lock = threading.Lock()
        self.model_path = path
        self.tap_points = list(tap_points)
        try:
            self._model = torch.jit.load(str(path), map_location="cpu")
        except Exception as exc:
            raise ValueError(f"could not load TorchScript archive {path}: {exc}") from exc
        self._model.eval()
        self._model_sha = hashlib.sha256(path.read_bytes()).hexdigest()
        self._dims: tuple[int, ...] | None = None

    def _run(self, prepped: PreppedImage) -> dict:
        torch = self._torch
        # Always copy: frozen library arrays would trip torch's writable check.
        x = torch.from_numpy(np.array(prepped.pixels, dtype=np.float32, order="C"))
        x = x.unsqueeze(0)
        with self._lock, torch.no_grad():
            raw = self._model(x)
        if isinstance(raw, dict):
            outputs = dict(raw)
        else:
            outputs = {"output": raw}
        missing = [t for t in self.tap_points if t not in outputs]
        if missing:
            raise KeyError(
                f"tap point(s) {missing} not found in model outputs; "
                f"available taps: {sorted(outputs)}"
            )
        return outputs

    def extract(self, prepped: PreppedImage) -> FeatureSet:
        outputs = self._run(prepped)
        vectors = []
        for tap in self.tap_points:
            fmap = outputs[tap]
            if fmap.dim() < 2:
                raise ValueError(
                    f"tap {tap!r} produced a {fmap.dim()}D tensor; expected at "
                    "least (batch, channels, ...)"
                )
            spatial = tuple(range(2, fmap.dim()))
            pooled = fmap.mean(dim=spatial) if spatial else fmap
            vectors.append(pooled[0].double().cpu().numpy())
        fs = FeatureSet(tuple(vectors))
        if self._dims is None:
            self._dims = tuple(fs.dims)
        elif tuple(fs.dims) != self._dims:
            raise ValueError(
                f"model produced dims {fs.dims}, expected {list(self._dims)}"
            )
        return fs

    @property
    def k(self) -> int:
        return len(self.tap_points)

    @property
    def dims(self) -> list[int]:
        if self._dims is None:
            raise RuntimeError(
                "dims are probed on first extraction; call extract() once or "
                "use probe()"
            )
        return list(self._dims)

    def probe(self, height: int, width: int) -> list[int]:
        """Run one zero-input inference to establish per-scale dims."""
        zeros = PreppedImage(np.zeros((3, height, width)))
        self.extract(zeros)
        return self.dims

    @property
    def descriptor(self) -> ExtractorDescriptor:
        if self._dims is None:
            raise RuntimeError("probe() or extract() once before reading descriptor")
        return ExtractorDescriptor(
            kind=self.kind,
            k=self.k,
            dims=self._dims,
            config_digest=_digest(
                {
                    "kind": self.kind,
                    "model_sha256": self._model_sha,
                    "taps": self.tap_points,
                }
            ),
        )


def extract(prepped: PreppedImage, extractor) -> FeatureSet:
    """Extract the K pooled feature vectors of a preprocessed M-scan."""
    return extractor.extract(prepped)


def make_builtin_extractor(levels: int = DEFAULT_BUILTIN_LEVELS) -> BuiltinPyramidExtractor:
    return BuiltinPyramidExtractor(levels)


def extractor_for_descriptor(desc: ExtractorDescriptor, model_path=None, tap_points=None):
    """Re-create an extractor matching a stored descriptor.

    Builtin extractors reconstruct directly from K. The exported kind needs
    the archive path (and taps) supplied by the caller; a digest mismatch
    against the stored descriptor is the caller's concern (warned at model
    load, not fatal).
    """
    if desc.kind == BuiltinPyramidExtractor.kind:
        ext = BuiltinPyramidExtractor(desc.k)
        if ext.descriptor.config_digest != desc.config_digest:
            raise ValueError(
                f"builtin extractor digest mismatch: stored {desc.config_digest}, "
                f"reconstructed {ext.descriptor.config_digest}"
            )
        return ext
    if desc.kind == ExportedNetworkExtractor.kind:
        if model_path is None:
            raise ValueError(
                "descriptor names an exported network; supply model_path (and "
                "tap_points) to reconstruct it"
            )
        ext = ExportedNetworkExtractor(model_path, tap_points or [])
        return ext
    raise ValueError(f"unknown extractor kind {desc.kind!r}")
