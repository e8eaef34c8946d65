"""Command-line entry points binding the library together.

Subcommands: fit, calibrate, score, gate, corrupt, synth, eval. Every command
accepting a ``--seed`` is bit-reproducible end to end. A ``--config`` file in
``key = value`` form (keys mirror the long flags, dashes optional) supplies
defaults for any flag not given on the command line.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, datagen, evaluate, gating, mahal
from .features import BuiltinPyramidExtractor, ExportedNetworkExtractor
from .preprocess import PreprocConfig
from .scan import read_mscan_container, write_mscan_container

SCORER_CHOICES = list(baselines.SCORER_NAMES)
PROTOCOLS = ("rejection", "detection", "per-corruption")


def _load_config(path: str) -> dict[str, str]:
    config = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {raw!r} is not 'key = value'")
        key, value = line.split("=", 1)
        config[key.strip().replace("-", "_")] = value.strip()
    return config


def _apply_config(argv: list[str]) -> list[str]:
    """Inject config entries as trailing flags unless already given."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    try:
        path = argv[idx + 1]
    except IndexError:
        raise SystemExit("--config needs a path")
    argv = argv[:idx] + argv[idx + 2 :]
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    extra = []
    for key, value in _load_config(path).items():
        flag = "--" + key.replace("_", "-")
        if flag not in given:
            extra.extend([flag, value])
    return argv + extra


def _make_extractor(args):
    if args.extractor == "builtin":
        return BuiltinPyramidExtractor(args.levels)
    if args.extractor == "exported":
        if not args.model_archive or not args.taps:
            raise SystemExit(
                "exported extractor needs --model-archive and --taps"
            )
        ext = ExportedNetworkExtractor(args.model_archive, args.taps.split(","))
        cfg = PreprocConfig()
        ext.probe(cfg.target_height, cfg.target_width)
        return ext
    raise SystemExit(f"unknown extractor kind {args.extractor!r}")


def _add_extractor_flags(parser):
    parser.add_argument(
        "--extractor", default="builtin", choices=["builtin", "exported"]
    )
    parser.add_argument("--levels", type=int, default=4, help="builtin pyramid depth")
    parser.add_argument("--model-archive", default=None, help="TorchScript archive")
    parser.add_argument("--taps", default=None, help="comma-separated tap names")


def cmd_fit(args) -> int:
    mscans = read_mscan_container(args.train)
    extractor = _make_extractor(args)
    model = mahal.fit_detector(mscans, extractor, epsilon=args.epsilon)
    mahal.save_model(model, args.out)
    print(f"fitted on N={model.n_train} M-scans, K={model.k} scales")
    print(f"dims: {[s.dim for s in model.scales]}")
    for i, s in enumerate(model.scales):
        reg = s.chol_lower @ s.chol_lower.T
        print(f"scale {i}: condition estimate {np.linalg.cond(reg):.3e}")
    print(f"model written to {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    model = mahal.load_model(args.model)
    holdout = read_mscan_container(args.holdout)
    calibrated = mahal.calibrate_threshold(model, holdout, args.quantile)
    mahal.save_model(calibrated, args.out)
    print(
        f"tau = {calibrated.tau!r} at quantile {args.quantile} "
        f"over {len(holdout)} holdout scans"
    )
    return 0


def cmd_score(args) -> int:
    model = mahal.load_model(args.model)
    mscans = read_mscan_container(args.input)
    out = sys.stdout if args.out == "-" else open(args.out, "w")
    try:
        for i, m in enumerate(mscans):
            verdict = mahal.score(m, model)
            record = {
                "index": i,
                "score": verdict.score,
                "per_scale": verdict.per_scale_distances.tolist(),
            }
            if verdict.is_ood is not None:
                record["is_ood"] = verdict.is_ood
            out.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_gate(args) -> int:
    model = mahal.load_model(args.model)
    stream_in = sys.stdin.buffer if args.input == "-" else open(args.input, "rb")
    stream_out = sys.stdout if args.out == "-" else open(args.out, "w")
    try:
        n = gating.run_gate(
            stream_in,
            stream_out,
            model,
            window=args.window,
            stride=args.stride,
            depth=args.depth,
        )
    finally:
        if stream_in is not sys.stdin.buffer:
            stream_in.close()
        if stream_out is not sys.stdout:
            stream_out.close()
    print(f"{n} windows gated", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    labeled = datagen.synth_dataset(args.n, seed=args.seed)
    write_mscan_container(args.out, [lab.mscan for lab in labeled])
    labels_path = args.labels or str(args.out) + ".labels.csv"
    datagen.write_labels_csv(labels_path, labeled)
    print(f"{args.n} synthetic M-scans -> {args.out} (labels: {labels_path})")
    return 0


def cmd_corrupt(args) -> int:
    mscans = read_mscan_container(args.input)
    if args.truth:
        labeled = datagen.read_labels_csv(args.truth, mscans)
    else:
        labeled = [datagen.LabeledMScan(mscan=m) for m in mscans]
    kinds = args.kinds.split(",") if args.kinds else list(datagen.CORRUPTION_KINDS)
    corrupted = datagen.corrupt_fraction(labeled, args.p, kinds, args.seed)
    write_mscan_container(args.out, [lab.mscan for lab in corrupted])
    labels_path = args.labels or str(args.out) + ".labels.csv"
    datagen.write_labels_csv(labels_path, corrupted)
    n_bad = sum(lab.is_corrupted for lab in corrupted)
    print(f"corrupted {n_bad}/{len(corrupted)} scans -> {args.out}")
    return 0


def _build_scorers(names, train_mscans, seed):
    """Fit every requested scorer on the clean training scans.

    Returns (name, scorer) pairs; the no-rejection reference maps to None.
    """
    scorers = []
    extractor = BuiltinPyramidExtractor()
    detector = None
    for name in names:
        if name == "mahaad":
            if detector is None:
                detector = mahal.fit_detector(train_mscans, extractor)
            scorers.append((name, baselines.MahaAdScorer(detector, extractor)))
        elif name == "raw-mahaad":
            model = baselines.raw_mahaad_fit(train_mscans)
            scorers.append((name, baselines.RawMahaAdScorer(model)))
        elif name == "snr":
            scorers.append((name, baselines.SnrScorer()))
        elif name == "uncertainty":
            scorers.append((name, baselines.UncertaintyScorer()))
        elif name == "supervised-lite":
            model = baselines.supervised_lite_fit(
                train_mscans, seed=seed, extractor=extractor
            )
            scorers.append((name, baselines.SupervisedLiteScorer(model, extractor)))
        elif name == "no-rejection":
            scorers.append((name, None))
        else:
            valid = ", ".join(list(SCORER_CHOICES) + ["no-rejection"])
            raise SystemExit(f"unknown scorer {name!r}; valid: {valid}")
    return scorers


def cmd_eval(args) -> int:
    train = read_mscan_container(args.train)
    test = read_mscan_container(args.test)
    if args.truth:
        labeled = datagen.read_labels_csv(args.truth, test)
    else:
        labeled = [datagen.LabeledMScan(mscan=m) for m in test]
    names = args.scorer.split(",")
    scorers = _build_scorers(names, train, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = args.format
    suffix = "csv" if fmt == "csv" else "ndjson"
    for name, scorer in scorers:
        if args.protocol == "rejection":
            report = evaluate.rejection_experiment(
                labeled, scorer, seed=args.seed
            )
        elif scorer is None:
            raise SystemExit(
                "the no-rejection reference only applies to the rejection protocol"
            )
        elif args.protocol == "detection":
            dataset = datagen.corrupt_fraction(labeled, 0.5, seed=args.seed)
            report = evaluate.detection_experiment(dataset, scorer)
        else:  # per-corruption
            report = evaluate.per_corruption_experiment(
                labeled, scorer, seed=args.seed
            )
        path = out_dir / f"{args.protocol}_{name}.{suffix}"
        evaluate.emit_report(report, path, fmt)
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octgate",
        description="OoD gating for 1D OCT M-scan streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key = value defaults file")
        return p

    p = common(sub.add_parser("fit", help="fit an uncalibrated detector"))
    p.add_argument("--train", required=True, help=".mscn training container")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--epsilon", type=float, default=mahal.DEFAULT_EPSILON)
    _add_extractor_flags(p)
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("calibrate", help="set tau from a holdout quantile"))
    p.add_argument("--model", required=True)
    p.add_argument("--holdout", required=True, help=".mscn holdout container")
    p.add_argument("--quantile", type=float, default=mahal.DEFAULT_QUANTILE)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = common(sub.add_parser("score", help="score a container of M-scans"))
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help=".mscn container")
    p.add_argument("--out", default="-", help="NDJSON path or - for stdout")
    p.set_defaults(func=cmd_score)

    p = common(sub.add_parser("gate", help="gate a framed A-scan byte stream"))
    p.add_argument("--model", required=True, help="calibrated model JSON")
    p.add_argument("--input", default="-", help="framed stream path or - for stdin")
    p.add_argument("--out", default="-", help="NDJSON path or - for stdout")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--depth", type=int, default=None, help="expected A-scan length")
    p.set_defaults(func=cmd_gate)

    p = common(sub.add_parser("synth", help="generate a synthetic dataset"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True, help="output .mscn container")
    p.add_argument("--labels", default=None, help="sidecar CSV (default <out>.labels.csv)")
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("corrupt", help="corrupt a fraction of a container"))
    p.add_argument("--input", required=True, help="clean .mscn container")
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=float, required=True, help="corrupted fraction")
    p.add_argument("--kinds", default=None, help="comma-separated kind subset")
    p.add_argument("--truth", default=None, help="labels CSV of the input")
    p.add_argument("--labels", default=None, help="output sidecar CSV")
    p.set_defaults(func=cmd_corrupt)

    p = common(sub.add_parser("eval", help="run an evaluation protocol"))
    p.add_argument("--protocol", required=True, choices=list(PROTOCOLS))
    p.add_argument("--scorer", required=True, help="comma-separated scorer names")
    p.add_argument("--train", required=True, help="clean training .mscn")
    p.add_argument("--test", required=True, help="evaluation .mscn")
    p.add_argument("--truth", default=None, help="labels CSV for the test set")
    p.add_argument("--out-dir", default="reports")
    p.add_argument("--format", default="csv", choices=["csv", "ndjson"])
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(argv)
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        code = exc.code
        if isinstance(code, str):
            print(code, file=sys.stderr)
            return 2
        return 0 if code is None else int(code)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
