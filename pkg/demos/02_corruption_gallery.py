"""Apply each of the eight corruption kinds to one M-scan and summarize what
changed, plus how the fitted detector scores each variant.

Run from the repo root:  python demos/02_corruption_gallery.py
"""

import numpy as np

import octgate

# %% One clean scan, rescaled to [0, 255] - the range corruptions act on.
lab = octgate.synth_mscan(rng=np.random.default_rng(3))
clean = octgate.rescale_to_byte_range(lab.mscan)

# %% A small detector for scoring the gallery.
train = [x.mscan for x in octgate.synth_dataset(200, seed=11)]
extractor = octgate.make_builtin_extractor()
model = octgate.fit_detector(train, extractor)
clean_score = octgate.score(clean, model, extractor).score
print(f"clean score: {clean_score:.2f}\n")

# %% The gallery. Every corruption is a pure function of (scan, seed); the
# parameters live inside each kind (noise sigma 50, smoothing sigma 5,
# contrast factors {0.1, 0.2, 0.3, 2, 3, 4}, intensity shifts +/-[25, 50],
# stripe/rectangle fills U(100, 200), rolls of 25-100 px, zoom 1.5-1.75x).
print(f"{'kind':<12}{'mean shift':>12}{'std shift':>12}{'pixels changed':>16}{'score':>9}")
for kind in octgate.CORRUPTION_KINDS:
    corrupted = octgate.corrupt(clean, octgate.CorruptionSpec(kind=kind, seed=7))
    delta_mean = corrupted.samples.mean() - clean.samples.mean()
    delta_std = corrupted.samples.std() - clean.samples.std()
    changed = (corrupted.samples != clean.samples).mean()
    score = octgate.score(corrupted, model, extractor).score
    print(
        f"{kind:<12}{delta_mean:>+12.2f}{delta_std:>+12.2f}{changed:>15.1%}"
        f"{score:>9.1f}"
    )

# %% Fraction-p corruption, the way the evaluation protocols build datasets:
# exactly round(p * n) scans corrupted, kinds drawn with equal probability.
dataset = octgate.corrupt_fraction(octgate.synth_dataset(40, seed=21), 0.5, seed=22)
n_bad = sum(x.is_corrupted for x in dataset)
kinds = sorted({x.corruption_kind for x in dataset if x.is_corrupted})
print(f"\ncorrupt_fraction(p=0.5) on 40 scans -> {n_bad} corrupted, kinds {kinds}")
