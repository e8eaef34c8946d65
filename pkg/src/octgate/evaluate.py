"""Evaluation protocols: rejection/MAE curves and threshold-free detection metrics.

The rejection protocol corrupts a fraction p of an annotated dataset, discards
the top-p highest-scoring M-scans, and measures the downstream localization
MAE over what survives - a perfect detector discards exactly the corrupted
scans and keeps the MAE at its clean floor. The detection protocol skips the
downstream model and reports AUROC / average precision of the raw scores,
overall and per corruption kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .datagen import CORRUPTION_KINDS, LabeledMScan, corrupt_fraction
from .downstream import estimate_mscan_ilm, mae, mae_um
from .scan import MScan

DEFAULT_P_GRID = tuple(round(0.1 * i, 1) for i in range(10))  # 0.0 .. 0.9


@dataclass(frozen=True)
class RejectionCurve:
    """Downstream MAE after top-p rejection, per perturbation ratio.

    ``retained_indices`` records, per p, which dataset positions survived the
    cutoff; it supports verification and is not part of emitted reports.
    """

    p_grid: tuple[float, ...]
    mae_px: tuple[float, ...]
    mae_um: tuple[float, ...]
    retained_counts: tuple[int, ...]
    n_total: int
    scorer_name: str
    retained_indices: tuple[tuple[int, ...], ...] = ()


@dataclass(frozen=True)
class DetectionReport:
    """Threshold-free detection metrics for one scorer."""

    auroc: float
    ap: float
    n_pos: int
    n_neg: int
    scorer_name: str
    per_corruption: Mapping[str, float] | None = None


def _validate_binary(scores: np.ndarray, labels: np.ndarray):
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(
            f"scores and labels must be equal-length 1D, got {scores.shape} "
            f"and {labels.shape}"
        )
    if np.any(np.isnan(scores)):
        raise ValueError("scores must not contain NaN")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    return n_pos, n_neg


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a positive outscores a negative, ties counting one half.

    Mann-Whitney formulation via average ranks: exact for tied scores, and
    identical to brute-force pair counting.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = _validate_binary(s, y)
    ranks = rankdata(s)
    rank_sum = float(ranks[y].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Step-interpolated area under the precision-recall curve.

    Prefixes grow over descending scores; tied-score groups enter atomically
    so the result does not depend on the order of equal-scoring samples.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, _ = _validate_binary(s, y)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    n = s_sorted.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(y_sorted[i:j].sum())
        seen += j - i
        recall = tp / n_pos
        precision = tp / seen
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return ap


def _as_labeled_score_fn(scorer) -> Callable[[LabeledMScan], float]:
    """Uniform access: a scorer object exposes .score(mscan), a plain callable
    receives the labeled record itself (handy for oracle scorers in tests)."""
    if hasattr(scorer, "score"):
        return lambda lab: float(scorer.score(lab.mscan))
    return lambda lab: float(scorer(lab))


def rejection_experiment(
    labeled_mscans: Sequence[LabeledMScan],
    scorer,
    estimator: Callable | None = None,
    p_grid: Sequence[float] = DEFAULT_P_GRID,
    kinds: Sequence[str] = CORRUPTION_KINDS,
    seed: int = 0,
) -> RejectionCurve:
    """MAE over retained scans after top-p rejection, for each ratio in p_grid.

    For each p the clean dataset is freshly corrupted at fraction p, scored,
    and the top ``round(p * n)`` scores are discarded (ties at the cutoff
    break by stable input order). Retained scans - including corrupted ones
    the scorer failed to flag - contribute their estimator error against the
    pre-corruption truth. ``scorer=None`` is the no-rejection reference:
    nothing is discarded.
    """
    labeled = list(labeled_mscans)
    n = len(labeled)
    if n == 0:
        raise ValueError("dataset must be non-empty")
    for p in p_grid:
        if not (0.0 <= p < 1.0):
            raise ValueError(f"perturbation ratios must lie in [0, 1), got {p}")
    if any(lab.ilm_truth is None for lab in labeled):
        raise ValueError("rejection experiment needs ILM truth on every scan")
    score_fn = None if scorer is None else _as_labeled_score_fn(scorer)
    name = "no-rejection" if scorer is None else getattr(scorer, "name", "scorer")
    p_seeds = [
        int(c.generate_state(1, np.uint64)[0])
        for c in np.random.SeedSequence(seed).spawn(len(p_grid))
    ]
    resolution = labeled[0].mscan.depth_resolution_um
    mae_px_list = []
    retained_counts = []
    retained_indices = []
    for p, p_seed in zip(p_grid, p_seeds):
        dataset = corrupt_fraction(labeled, p, kinds, p_seed)
        if score_fn is None:
            kept = list(range(n))
        else:
            scores = np.array([score_fn(lab) for lab in dataset])
            n_reject = round(p * n)
            reject_idx = set(
                np.argsort(-scores, kind="stable")[:n_reject].tolist()
            )
            kept = [i for i in range(n) if i not in reject_idx]
        est_all = []
        tru_all = []
        for i in kept:
            lab = dataset[i]
            est_all.append(estimate_mscan_ilm(lab.mscan.samples, estimator))
            tru_all.append(lab.ilm_truth)
        if est_all:
            value = mae(np.concatenate(est_all), np.concatenate(tru_all))
        else:
            value = float("nan")
        mae_px_list.append(value)
        retained_counts.append(len(kept))
        retained_indices.append(tuple(kept))
    return RejectionCurve(
        p_grid=tuple(float(p) for p in p_grid),
        mae_px=tuple(mae_px_list),
        mae_um=tuple(mae_um(v, resolution) for v in mae_px_list),
        retained_counts=tuple(retained_counts),
        n_total=n,
        scorer_name=name,
        retained_indices=tuple(retained_indices),
    )


def detection_experiment(
    labeled_mscans: Sequence[LabeledMScan],
    scorer,
    per_corruption: Mapping[str, float] | None = None,
) -> DetectionReport:
    """AUROC and AP of a scorer over an already-corrupted labeled dataset."""
    score_fn = _as_labeled_score_fn(scorer)
    scores = np.array([score_fn(lab) for lab in labeled_mscans])
    labels = np.array([lab.is_corrupted for lab in labeled_mscans], dtype=int)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    return DetectionReport(
        auroc=auroc(scores, labels),
        ap=average_precision(scores, labels),
        n_pos=n_pos,
        n_neg=n_neg,
        scorer_name=getattr(scorer, "name", "scorer"),
        per_corruption=dict(per_corruption) if per_corruption else None,
    )


def per_corruption_auroc(
    clean: Sequence[MScan],
    corrupted_by_kind: Mapping[str, Sequence[MScan]],
    scorer,
) -> dict[str, float]:
    """AUROC of the scorer between the clean set and each kind's corrupted set."""
    for kind, corrupted in corrupted_by_kind.items():
        if len(corrupted) == 0:
            raise ValueError(f"corrupted set for kind {kind!r} is empty")
    clean_scores = [float(scorer.score(m)) for m in clean]
    out = {}
    for kind, corrupted in corrupted_by_kind.items():
        kind_scores = [float(scorer.score(m)) for m in corrupted]
        scores = np.array(clean_scores + kind_scores)
        labels = np.array([0] * len(clean_scores) + [1] * len(kind_scores))
        out[kind] = auroc(scores, labels)
    return out


def per_corruption_experiment(
    labeled_mscans: Sequence[LabeledMScan],
    scorer,
    kinds: Sequence[str] = CORRUPTION_KINDS,
    seed: int = 0,
) -> dict[str, float]:
    """Isolated per-kind detection at a corrupted proportion of one half.

    For each kind, half the dataset (round(n/2), chosen by the kind's derived
    seed) is corrupted with only that kind; the AUROC then compares corrupted
    against untouched scans at balanced counts.
    """
    labeled = list(labeled_mscans)
    kind_seeds = [
        int(c.generate_state(1, np.uint64)[0])
        for c in np.random.SeedSequence(seed).spawn(len(kinds))
    ]
    score_fn = _as_labeled_score_fn(scorer)
    out = {}
    for kind, kind_seed in zip(kinds, kind_seeds):
        dataset = corrupt_fraction(labeled, 0.5, [kind], kind_seed)
        scores = np.array([score_fn(lab) for lab in dataset])
        labels = np.array([lab.is_corrupted for lab in dataset], dtype=int)
        out[kind] = auroc(scores, labels)
    return out


def _float_repr(x: float) -> str:
    return repr(float(x))


def emit_report(report, path: str | Path, format: str = "csv") -> None:
    """Write a report as plot-ready CSV or NDJSON with stable columns.

    Emission is deterministic: identical reports produce byte-identical files.
    """
    path = Path(path)
    if format not in ("csv", "ndjson"):
        raise ValueError(f"format must be 'csv' or 'ndjson', got {format!r}")
    if isinstance(report, RejectionCurve):
        text = _emit_rejection(report, format)
    elif isinstance(report, DetectionReport):
        text = _emit_detection(report, format)
    elif isinstance(report, Mapping):
        text = _emit_per_corruption(report, format)
    else:
        raise TypeError(f"cannot emit report of type {type(report).__name__}")
    path.write_text(text)


def _emit_rejection(curve: RejectionCurve, format: str) -> str:
    if format == "csv":
        lines = ["scorer,p,n_total,retained,rejected,mae_px,mae_um"]
        for p, mae_px, mae_um_v, kept in zip(
            curve.p_grid, curve.mae_px, curve.mae_um, curve.retained_counts
        ):
            lines.append(
                f"{curve.scorer_name},{_float_repr(p)},{curve.n_total},{kept},"
                f"{curve.n_total - kept},{_float_repr(mae_px)},{_float_repr(mae_um_v)}"
            )
        return "\n".join(lines) + "\n"
    rows = [
        {
            "scorer": curve.scorer_name,
            "p": p,
            "n_total": curve.n_total,
            "retained": kept,
            "rejected": curve.n_total - kept,
            "mae_px": mae_px,
            "mae_um": mae_um_v,
        }
        for p, mae_px, mae_um_v, kept in zip(
            curve.p_grid, curve.mae_px, curve.mae_um, curve.retained_counts
        )
    ]
    return "\n".join(json.dumps(r, sort_keys=True) for r in rows) + "\n"


def _emit_detection(report: DetectionReport, format: str) -> str:
    if format == "csv":
        lines = ["scorer,auroc,ap,n_pos,n_neg"]
        lines.append(
            f"{report.scorer_name},{_float_repr(report.auroc)},"
            f"{_float_repr(report.ap)},{report.n_pos},{report.n_neg}"
        )
        if report.per_corruption:
            lines.append("kind,auroc")
            for kind in sorted(report.per_corruption):
                lines.append(f"{kind},{_float_repr(report.per_corruption[kind])}")
        return "\n".join(lines) + "\n"
    obj = {
        "scorer": report.scorer_name,
        "auroc": report.auroc,
        "ap": report.ap,
        "n_pos": report.n_pos,
        "n_neg": report.n_neg,
    }
    if report.per_corruption:
        obj["per_corruption"] = dict(sorted(report.per_corruption.items()))
    return json.dumps(obj, sort_keys=True) + "\n"


def _emit_per_corruption(table: Mapping[str, float], format: str) -> str:
    if format == "csv":
        lines = ["kind,auroc"]
        for kind in table:
            lines.append(f"{kind},{_float_repr(table[kind])}")
        return "\n".join(lines) + "\n"
    return (
        "\n".join(
            json.dumps({"kind": k, "auroc": v}, sort_keys=True)
            for k, v in table.items()
        )
        + "\n"
    )
