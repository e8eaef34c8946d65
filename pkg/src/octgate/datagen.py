"""Corruption simulator and synthetic M-scan generator.

Eight corruption kinds perturb M-scans whose intensities live in the byte
range [0, 255]; every corruption is a pure function of (input, seed) and
clips its output back into byte range. The synthetic generator produces
layered retina-like M-scans with exact per-A-scan ILM ground truth, giving
the evaluation protocols a controllable stand-in for real recordings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .filters import smooth_depth
from .preprocess import rescale_to_byte_range, resample_1d
from .scan import MScan

CORRUPTION_KINDS = (
    "noise",
    "smoothing",
    "contrast",
    "intensity",
    "stripes",
    "rectangle",
    "shift",
    "zoom",
)

# Kinds the simplified supervised baseline is allowed to train on; the other
# four stay unseen for the generalization comparison.
SUPERVISED_TRAINING_KINDS = ("noise", "smoothing", "shift", "intensity")
UNSEEN_KINDS = ("stripes", "rectangle", "zoom", "contrast")

NOISE_SIGMA = 50.0
SMOOTHING_SIGMA = 5.0
CONTRAST_FACTORS = (0.1, 0.2, 0.3, 2.0, 3.0, 4.0)
INTENSITY_RANGE = (25.0, 50.0)
STRIPE_VALUE_RANGE = (100.0, 200.0)
RECT_STRETCH_RANGE = (6, 10)
RECT_DEPTH_RANGE = (15, 30)
RECT_VALUE_RANGE = (100.0, 200.0)
SHIFT_RANGE = (25.0, 100.0)
ZOOM_RANGE = (1.5, 1.75)

BYTE_MAX = 255.0
CONTRAST_PIVOT = BYTE_MAX / 2.0  # applied about the mid byte value


@dataclass(frozen=True)
class CorruptionSpec:
    """One corruption kind, its seed, and optional parameter overrides.

    Without overrides every parameter is drawn from its default range; the
    ``params`` dict pins individual choices (e.g. a forced stripe column) for
    surgical tests.
    """

    kind: str
    seed: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(
                f"unknown corruption kind {self.kind!r}; valid: {CORRUPTION_KINDS}"
            )


@dataclass(frozen=True)
class LabeledMScan:
    """An M-scan plus ground truth and corruption bookkeeping.

    ``ilm_truth`` holds one pre-corruption ILM pixel index per A-scan (None
    for data without annotations). The truth of a corrupted scan refers to
    its clean original: corrupted scans are should-be-rejected, so their
    truth never feeds MAE directly.
    """

    mscan: MScan
    ilm_truth: np.ndarray | None = None
    is_corrupted: bool = False
    corruption_kind: str | None = None

    def __post_init__(self):
        if (self.corruption_kind is not None) != self.is_corrupted:
            raise ValueError("corruption_kind must be present iff is_corrupted")
        if self.ilm_truth is not None:
            truth = np.asarray(self.ilm_truth, dtype=np.int64).copy()
            if truth.shape != (self.mscan.w,):
                raise ValueError(
                    f"ilm_truth needs one index per A-scan ({self.mscan.w}), "
                    f"got shape {truth.shape}"
                )
            if truth.min() < 0 or truth.max() >= self.mscan.p:
                raise ValueError("ilm_truth indices must lie in [0, P)")
            truth.flags.writeable = False
            object.__setattr__(self, "ilm_truth", truth)


def _clip_byte(samples: np.ndarray) -> np.ndarray:
    return np.clip(samples, 0.0, BYTE_MAX)


def _corrupt_noise(s, rng, params):
    sigma = params.get("sigma", NOISE_SIGMA)
    return s + rng.normal(0.0, sigma, size=s.shape)


def _corrupt_smoothing(s, rng, params):
    sigma = params.get("sigma", SMOOTHING_SIGMA)
    return smooth_depth(s, sigma)


def _corrupt_contrast(s, rng, params):
    factor = params.get("factor")
    if factor is None:
        factor = rng.choice(CONTRAST_FACTORS)
    pivot = params.get("pivot", CONTRAST_PIVOT)
    return (s - pivot) * factor + pivot


def _corrupt_intensity(s, rng, params):
    shift = params.get("shift")
    if shift is None:
        magnitude = rng.uniform(*INTENSITY_RANGE)
        sign = -1.0 if rng.random() < 0.5 else 1.0
        shift = sign * magnitude
    return s + shift


def _corrupt_stripes(s, rng, params):
    w = s.shape[0]
    columns = params.get("columns")
    if columns is None:
        n_stripes = params.get("n_stripes")
        if n_stripes is None:
            n_stripes = int(rng.integers(1, 3))  # one or two A-scans
        n_stripes = min(n_stripes, w)
        columns = rng.choice(w, size=n_stripes, replace=False)
    values = params.get("values")
    if values is None:
        values = rng.uniform(*STRIPE_VALUE_RANGE, size=len(columns))
    out = s.copy()
    for col, value in zip(columns, values):
        out[int(col), :] = value
    return out


def _corrupt_rectangle(s, rng, params):
    w, p = s.shape
    stretch = params.get("stretch")
    if stretch is None:
        hi = min(RECT_STRETCH_RANGE[1], w)
        lo = min(RECT_STRETCH_RANGE[0], hi)
        stretch = int(rng.integers(lo, hi + 1))
    depth = params.get("depth")
    if depth is None:
        hi = min(RECT_DEPTH_RANGE[1], p)
        lo = min(RECT_DEPTH_RANGE[0], hi)
        depth = int(rng.integers(lo, hi + 1))
    top = params.get("top")
    if top is None:
        top = int(rng.integers(0, w - stretch + 1))
    left = params.get("left")
    if left is None:
        left = int(rng.integers(0, p - depth + 1))
    value = params.get("value")
    if value is None:
        value = rng.uniform(*RECT_VALUE_RANGE)
    out = s.copy()
    out[top : top + stretch, left : left + depth] = value
    return out


def _corrupt_shift(s, rng, params):
    delta = params.get("delta")
    if delta is None:
        delta = int(round(rng.uniform(*SHIFT_RANGE)))
    positive = params.get("positive_rows")
    if positive is None:
        positive = rng.random(s.shape[0]) < 0.5  # random split of the sequence
    else:
        positive = np.asarray(positive, dtype=bool)
    out = np.empty_like(s)
    for j in range(s.shape[0]):
        out[j] = np.roll(s[j], delta if positive[j] else -delta)
    return out


def _corrupt_zoom(s, rng, params):
    factor = params.get("factor")
    if factor is None:
        factor = rng.uniform(*ZOOM_RANGE)
    origin = params.get("origin", 0.0)
    p = s.shape[1]
    # Magnify about the origin: output index i reads input coordinate
    # origin + (i - origin) / factor; stretched content past P is cropped.
    coords = origin + (np.arange(p, dtype=np.float64) - origin) / factor
    return np.stack([resample_1d(row, coords) for row in s])


_CORRUPTIONS = {
    "noise": _corrupt_noise,
    "smoothing": _corrupt_smoothing,
    "contrast": _corrupt_contrast,
    "intensity": _corrupt_intensity,
    "stripes": _corrupt_stripes,
    "rectangle": _corrupt_rectangle,
    "shift": _corrupt_shift,
    "zoom": _corrupt_zoom,
}


def corrupt(mscan: MScan, spec: CorruptionSpec) -> MScan:
    """Apply one corruption to an M-scan already rescaled to [0, 255].

    Pure and deterministic for a fixed spec; the input M-scan is untouched
    and the output is clipped back into byte range.
    """
    rng = np.random.default_rng(spec.seed)
    samples = mscan.samples.astype(np.float64)
    out = _CORRUPTIONS[spec.kind](samples, rng, spec.params)
    return mscan.with_samples(_clip_byte(out).astype(np.float32))


def _spawn_seeds(seed: int, n: int) -> list[int]:
    """Documented splitting rule: one child SeedSequence per scan index."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def corrupt_fraction(
    scans: Sequence[LabeledMScan] | Sequence[MScan],
    p: float,
    kinds: Sequence[str] = CORRUPTION_KINDS,
    seed: int = 0,
) -> list[LabeledMScan]:
    """Corrupt exactly ``round(p * n)`` scans, chosen uniformly without replacement.

    Every scan (corrupted or not) is first rescaled to [0, 255], the range
    corruptions are defined on. Kinds are sampled with equal probability from
    ``kinds``; per-scan corruption seeds derive from ``seed`` by a fixed
    splitting rule, so results do not depend on evaluation order. Labels
    (is_corrupted, kind, pre-corruption ILM truth) are carried on the output.
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"corruption fraction must be in [0, 1], got {p}")
    kinds = tuple(kinds)
    if not kinds:
        raise ValueError("kinds must be non-empty")
    for k in kinds:
        if k not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {k!r}")
    labeled = [
        s if isinstance(s, LabeledMScan) else LabeledMScan(mscan=s) for s in scans
    ]
    n = len(labeled)
    n_corrupt = round(p * n)
    children = np.random.SeedSequence(seed).spawn(n + 1)
    selection_rng = np.random.default_rng(children[0])
    chosen = set(
        selection_rng.choice(n, size=n_corrupt, replace=False).tolist()
        if n_corrupt
        else []
    )
    kind_draws = selection_rng.integers(0, len(kinds), size=n)
    scan_seeds = [int(c.generate_state(1, np.uint64)[0]) for c in children[1:]]
    out = []
    for i, lab in enumerate(labeled):
        rescaled = rescale_to_byte_range(lab.mscan)
        if i in chosen:
            kind = kinds[int(kind_draws[i])]
            spec = CorruptionSpec(kind=kind, seed=scan_seeds[i])
            out.append(
                LabeledMScan(
                    mscan=corrupt(rescaled, spec),
                    ilm_truth=lab.ilm_truth,
                    is_corrupted=True,
                    corruption_kind=kind,
                )
            )
        else:
            out.append(
                LabeledMScan(
                    mscan=rescaled,
                    ilm_truth=lab.ilm_truth,
                    is_corrupted=False,
                )
            )
    return out


@dataclass(frozen=True)
class SynthParams:
    """Knobs of the layered synthetic retina generator.

    Brightness values live on the byte scale. ``drift_rate`` is the standard
    deviation, in pixels per A-scan, of the ILM depth random walk across the
    window.
    """

    p: int = 674
    w: int = 10
    n_layers: int = 3
    ilm_depth_range: tuple[int, int] = (150, 450)
    layer_brightness: tuple[float, ...] = (165.0, 55.0, 110.0, 70.0)
    hyper_brightness: float = 190.0
    speckle_contrast: float = 0.12
    drift_rate: float = 0.6
    background_level: float = 12.0
    acquisition_hz: float = 700.0
    depth_resolution_um: float = 3.7

    def __post_init__(self):
        if not (0 <= self.ilm_depth_range[0] <= self.ilm_depth_range[1] < self.p):
            raise ValueError("ilm_depth_range must lie within [0, P)")
        if self.n_layers < 1:
            raise ValueError("need at least one retinal layer")
        if any(not (0.0 <= b <= BYTE_MAX) for b in self.layer_brightness):
            raise ValueError("layer brightness must lie in [0, 255]")


DEFAULT_SYNTH_PARAMS = SynthParams()
TRAINING_SET_SIZE = 334
TEST_SET_SIZE = 2000


def _layer_plan(params: SynthParams, rng: np.random.Generator):
    """Per-M-scan anatomy: layer thicknesses and brightness levels.

    The ILM band is the strongest dark-to-bright transition; one deeper
    hyperreflective band rises from a dark layer so its edge stays below the
    ILM's, keeping the ILM the global best rising edge for the reference
    estimator.
    """
    n_inner = int(rng.integers(max(1, params.n_layers - 1), params.n_layers + 2))
    jitter = lambda x, rel: x * (1.0 + rel * (2.0 * rng.random() - 1.0))
    bands = [(jitter(14.0, 0.3), jitter(params.layer_brightness[0], 0.08))]
    for i in range(n_inner):
        brightness = params.layer_brightness[1 + i % (len(params.layer_brightness) - 1)]
        bands.append((jitter(28.0, 0.4), jitter(brightness, 0.10)))
    # Hyperreflective band preceded by a moderate gap: its rise must stay
    # well below the vitreous-to-ILM rise or the estimator locks onto it.
    bands.append((jitter(18.0, 0.3), jitter(85.0, 0.10)))
    bands.append((jitter(16.0, 0.25), jitter(params.hyper_brightness, 0.05)))
    tail = jitter(40.0, 0.2)
    return bands, tail


def _ascan_from_plan(
    params: SynthParams, ilm_depth: float, bands, tail, rng: np.random.Generator
) -> np.ndarray:
    profile = np.full(params.p, params.background_level, dtype=np.float64)
    pos = int(round(ilm_depth))
    for thickness, brightness in bands:
        lo = max(0, pos)
        hi = min(params.p, int(round(pos + thickness)))
        if lo >= params.p:
            break
        profile[lo:hi] = brightness
        pos = int(round(pos + thickness))
    # Choroid-like decaying tail below the last band.
    if pos < params.p:
        depth_axis = np.arange(params.p - pos, dtype=np.float64)
        profile[pos:] = 25.0 + (bands[-1][1] * 0.35 - 25.0) * np.exp(-depth_axis / tail)
    profile = smooth_depth(profile, sigma=1.5)
    speckle = 1.0 + params.speckle_contrast * rng.standard_normal(params.p)
    # Sensor noise rides on the speckle knob so speckle_contrast == 0 means a
    # fully noise-free A-scan.
    sensor_sigma = 12.5 * params.speckle_contrast
    noisy = profile * np.clip(speckle, 0.0, None)
    noisy += sensor_sigma * rng.standard_normal(params.p)
    return _clip_byte(noisy)


def synth_mscan(
    params: SynthParams = DEFAULT_SYNTH_PARAMS,
    rng: np.random.Generator | int | None = None,
) -> LabeledMScan:
    """One synthetic M-scan with exact per-A-scan ILM truth.

    All W A-scans share the same layer plan; the ILM depth follows a clipped
    Gaussian random walk (step sigma = drift_rate) and every A-scan gets
    fresh multiplicative speckle. With speckle_contrast == 0 and
    drift_rate == 0 the generator is noise-free except for per-A-scan sensor
    noise, which also vanishes at speckle_contrast == 0.
    """
    rng = np.random.default_rng(rng)
    bands, tail = _layer_plan(params, rng)
    lo, hi = params.ilm_depth_range
    depth = float(rng.uniform(lo, hi))
    rows = []
    truths = []
    for _ in range(params.w):
        truths.append(int(round(depth)))
        rows.append(_ascan_from_plan(params, depth, bands, tail, rng))
        if params.drift_rate > 0:
            depth = float(np.clip(depth + rng.normal(0.0, params.drift_rate), lo, hi))
    mscan = MScan(
        np.stack(rows).astype(np.float32),
        acquisition_hz=params.acquisition_hz,
        depth_resolution_um=params.depth_resolution_um,
    )
    return LabeledMScan(mscan=mscan, ilm_truth=np.array(truths))


def synth_dataset(
    n: int,
    params: SynthParams = DEFAULT_SYNTH_PARAMS,
    seed: int = 0,
) -> list[LabeledMScan]:
    """``n`` independent synthetic M-scans, reproducible from ``seed``."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    return [
        synth_mscan(params, np.random.default_rng(s))
        for s in _spawn_seeds(seed, n)
    ]


def default_training_set(seed: int = 1001, params: SynthParams = DEFAULT_SYNTH_PARAMS):
    """Named preset: the in-distribution training collection (334 M-scans)."""
    return synth_dataset(TRAINING_SET_SIZE, params, seed)


def default_test_set(seed: int = 2002, params: SynthParams = DEFAULT_SYNTH_PARAMS):
    """Named preset: the annotated evaluation collection (2000 M-scans)."""
    return synth_dataset(TEST_SET_SIZE, params, seed)


def write_labels_csv(path, labeled: Sequence[LabeledMScan]) -> None:
    """Sidecar CSV: index, is_corrupted, kind, ilm_0..ilm_{W-1} per scan."""
    if not labeled:
        raise ValueError("nothing to write")
    w = labeled[0].mscan.w
    lines = ["index,is_corrupted,kind," + ",".join(f"ilm_{j}" for j in range(w))]
    for i, lab in enumerate(labeled):
        kind = lab.corruption_kind or ""
        if lab.ilm_truth is not None:
            truth = ",".join(str(int(t)) for t in lab.ilm_truth)
        else:
            truth = "," * (w - 1)
        lines.append(f"{i},{int(lab.is_corrupted)},{kind},{truth}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_labels_csv(path, mscans: Sequence[MScan]) -> list[LabeledMScan]:
    """Attach a sidecar CSV's labels and truths to an M-scan sequence."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("index,is_corrupted,kind"):
        raise ValueError(f"{path} is not a labels sidecar CSV")
    rows = lines[1:]
    if len(rows) != len(mscans):
        raise ValueError(
            f"labels CSV has {len(rows)} rows but the container holds "
            f"{len(mscans)} scans"
        )
    out = []
    for row, mscan in zip(rows, mscans):
        cells = row.split(",")
        is_corrupted = bool(int(cells[1]))
        kind = cells[2] or None
        truth_cells = cells[3 : 3 + mscan.w]
        truth = (
            np.array([int(c) for c in truth_cells])
            if all(c != "" for c in truth_cells)
            else None
        )
        out.append(
            LabeledMScan(
                mscan=mscan,
                ilm_truth=truth,
                is_corrupted=is_corrupted,
                corruption_kind=kind,
            )
        )
    return out
