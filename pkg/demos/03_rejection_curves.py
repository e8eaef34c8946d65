"""The rejection protocol: corrupt a fraction p of the test data, discard the
top-p highest OoD scores, and track the downstream ILM localization MAE.

A good detector discards exactly the corrupted scans, so its MAE curve stays
at the clean floor while the no-rejection reference degrades. Writes
plot-ready CSVs next to this script.

Run from the repo root:  python demos/03_rejection_curves.py
"""

from pathlib import Path

import octgate
from octgate import baselines, evaluate

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# %% Fit the scorers on a clean training collection.
train = [lab.mscan for lab in octgate.default_training_set()]
extractor = octgate.make_builtin_extractor()
detector = octgate.fit_detector(train, extractor)

scorers = {
    "mahaad": baselines.MahaAdScorer(detector, extractor),
    "raw-mahaad": baselines.RawMahaAdScorer(baselines.raw_mahaad_fit(train)),
    "snr": baselines.SnrScorer(),
    "no-rejection": None,
}

# %% Run the protocol on an annotated test set (desk scale: 400 scans).
test = octgate.default_test_set()[:400]
grid = (0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9)

print(f"{'p':>5}", *(f"{name:>14}" for name in scorers))
curves = {}
for name, scorer in scorers.items():
    curves[name] = evaluate.rejection_experiment(
        test, scorer, p_grid=grid, seed=606
    )
    evaluate.emit_report(curves[name], OUT / f"rejection_{name}.csv", "csv")

for i, p in enumerate(grid):
    row = [f"{curves[name].mae_px[i]:>14.2f}" for name in scorers]
    print(f"{p:>5.1f}", *row)

floor = curves["mahaad"].mae_px[0]
print(f"\nclean floor: {floor:.2f} px "
      f"({octgate.mae_um(floor):.1f} um at 3.7 um/px)")
print(f"CSV reports in {OUT}/")
