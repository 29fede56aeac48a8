"""Command-line entry point.

Exit codes: 0 success, 2 invalid input or arguments, 3 a stage failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, harness
from .errors import ArchiveError, SolverError, StageError, TrainingError, ValidationError
from .featurex import FRAME_COLUMNS, FeatureDataset, SplitDataset, build_dataset, prepare, read_dataset, write_dataset
from .nn import CLASSIFY, LOCATE, NetSpec, WeightArchive, evaluate, load_weights, save_weights, train
from .powersim import REFERENCE_LENGTH, GridAxes, LineParams, generate_grid, read_waveforms, write_waveforms
from .transfer import TARGET_LENGTHS, Mode, TransferPlan, adapt, default_config, transfer_suite_report

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3
log = logging.getLogger("tlfault")


def _lengths(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated lengths, got {text!r}") from None


def _snr(text: str) -> float | None:
    return None if text.lower() in ("none", "inf", "off") else float(text)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
    parser.add_argument("--repeats", type=int, default=d(None), help="statistical repeats")
    parser.add_argument("--out", default=d(None), help="output file or directory")
    parser.add_argument("--strict-timing", action="store_true", default=d(False),
                        help="pin to one CPU and pause GC while timing")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)


def _train_overrides(args) -> dict:
    out = {}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tlfault", description="Transmission-line fault simulation, "
                                     "CNN classification/location with transfer learning, and baselines.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = add("simulate", "generate a waveform grid for one line length")
    p.add_argument("--length", type=float, default=REFERENCE_LENGTH)
    p.add_argument("--grid", default="full", help="'full', 'reduced' or a JSON file of grid axes")
    p.add_argument("--snr-db", "--snr", dest="snr", type=_snr, default=60.0, help="dB, or 'none' for noiseless")

    p = add("features", "extract 7x7 frames, split and normalize")
    p.add_argument("--waveforms", "--in", dest="waveforms", required=True)
    p.add_argument("--ratio", "--split", dest="ratio", type=float, default=0.7, help="training fraction")

    p = add("train", "train a network from scratch on a feature file")
    p.add_argument("--features", "--dataset", dest="features", required=True)
    p.add_argument("--task", choices=(CLASSIFY, LOCATE), default=CLASSIFY)
    _train_flags(p)

    p = add("transfer", "adapt a source network to other line lengths")
    p.add_argument("--source-weights", required=True)
    p.add_argument("--targets", type=_lengths, default=TARGET_LENGTHS)
    p.add_argument("--mode", action="append", help="finetune, frozen, dedicated (repeatable; default all)")
    p.add_argument("--task", choices=(CLASSIFY, LOCATE), default=CLASSIFY)
    p.add_argument("--features-dir", help="directory of features_L<length>.csv files (simulated when absent)")
    p.add_argument("--grid", choices=("full", "reduced"), default="reduced")
    _train_flags(p)

    p = add("kmeans", "K-means baseline on a feature or waveform file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=11)

    p = add("evaluate", "score saved weights on a feature file")
    p.add_argument("--weights", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")

    p = add("report", "run the full pipeline from a JSON config")
    p.add_argument("--config", help="JSON experiment config (defaults if omitted)")

    p = add("latency", "per-sample inference latency")
    p.add_argument("--weights", help="weight archive (fresh network when omitted)")
    p.add_argument("--task", choices=(CLASSIFY, LOCATE), default=CLASSIFY)
    p.add_argument("--features", help="feature file providing frames (random frames when omitted)")
    p.add_argument("--n", type=int, default=10_000, help="number of inferences")
    return parser


# ----------------------------------------------------------------- commands


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


def _grid_arg(text: str) -> GridAxes:
    if text in ("full", "reduced"):
        return getattr(GridAxes, text)()
    path = Path(text)
    if not path.exists():
        raise ValidationError(f"grid must be 'full', 'reduced' or a JSON file, got {text!r}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return harness.ExperimentConfig(grid=data, lengths=(REFERENCE_LENGTH,)).grid


def cmd_simulate(args) -> None:
    grid = _grid_arg(args.grid)
    records = generate_grid(LineParams().with_length(args.length), grid, seed=args.seed, snr_db=args.snr)
    out = args.out or f"waveforms_L{harness.length_tag(args.length)}.tlwf"
    write_waveforms(records, out)
    print(f"{len(records)} records -> {out}")


def cmd_features(args) -> None:
    ds = build_dataset(read_waveforms(args.waveforms))
    split = prepare(ds, args.ratio, seed=args.seed)
    out = args.out or str(Path(args.waveforms).with_suffix("")) + ".features.csv"
    write_dataset(split, out)
    print(f"{len(split.train)} train / {len(split.test)} test -> {out}")


def _views(split: SplitDataset, task: str):
    if task == LOCATE:
        return split.train.faulted(), split.test.faulted()
    return split.train, split.test


def cmd_train(args) -> None:
    split = read_dataset(args.features)
    config = default_config(args.task, seed=args.seed, **_train_overrides(args))
    net = NetSpec(args.task).build(seed=args.seed)
    tr, te = _views(split, args.task)
    net, history, metrics = train(net, tr, te, config)
    out = Path(args.out or f"{args.task}.tlxd")
    save_weights(net, out)
    scores = metrics.scores()
    out.with_suffix(".metrics.json").write_text(json.dumps(scores, indent=2) + "\n")
    with open(out.with_suffix(".history.csv"), "w") as fh:
        fh.write(f"epoch,train_{history.metric},val_{history.metric}\n")
        for i, (a, b) in enumerate(zip(history.train, history.val), start=1):
            fh.write(f"{i},{a!r},{b!r}\n")
    _print({"weights": str(out), **scores})


def _target_datasets(args, targets) -> dict[float, object]:
    """Raw (unsplit) datasets per target: from CSV files or freshly simulated."""
    out = {}
    for length in targets:
        if args.features_dir:
            path = Path(args.features_dir) / f"features_L{harness.length_tag(length)}.csv"
            if not path.exists():
                raise ValidationError(f"missing feature file {path}")
            out[length] = read_dataset(path)
        else:
            grid = getattr(GridAxes, args.grid)()
            seed = harness.stage_seed(args.seed, "simulate", int(round(length * 10)))
            out[length] = build_dataset(generate_grid(LineParams().with_length(length), grid, seed=seed))
    return out


def cmd_transfer(args) -> None:
    archive = WeightArchive.load(args.source_weights)
    modes = tuple(Mode.parse(m) for m in (args.mode or [m.value for m in Mode]))
    config = default_config(args.task, seed=args.seed, **_train_overrides(args))
    plan = TransferPlan(target_lengths=args.targets, modes=modes, task=args.task, config=config)
    raw = _target_datasets(args, plan.target_lengths)
    results = []
    repeats = args.repeats or 30
    for r in range(1, repeats + 1):
        seed = args.seed + r
        splits = {L: (d if isinstance(d, SplitDataset) else prepare(d, 0.7, seed=seed)) for L, d in raw.items()}
        results.append(adapt(plan, splits, archive, seed=seed))
    rows = transfer_suite_report(results)
    out = Path(args.out or "transfer_report")
    out.mkdir(parents=True, exist_ok=True)
    table = harness.write_table(rows, out / f"transfer_{args.task}.csv")
    print(f"{len(rows)} rows -> {table}")


def _load_any_dataset(path: str):
    p = Path(path)
    if p.suffix == ".csv":
        with open(p) as fh:
            header = fh.readline()
        if header.startswith(FRAME_COLUMNS[0]):
            split = read_dataset(p)
            frames = np.concatenate([split.train.frames, split.test.frames])
            labels = np.concatenate([split.train.labels, split.test.labels])
            return frames, labels, split.length
    ds = build_dataset(read_waveforms(p))
    return ds.frames, ds.labels, ds.length


def cmd_kmeans(args) -> None:
    frames, labels, length = _load_any_dataset(args.dataset)
    ds = FeatureDataset(frames, labels, np.full(len(labels), np.nan), length)
    repeats = args.repeats or 30
    seeds = [args.seed + r for r in range(1, repeats + 1)]
    runs = baselines.kmeans_repeats(ds, seeds, k=args.k)
    acc = np.array([r.accuracy for r in runs])
    frac = np.array([r.fraction_correct for r in runs])
    iters = [r.n_iter for r in runs]
    row = {
        "length": length, "k": args.k, "repeats": repeats, "seeds": " ".join(map(str, seeds)),
        "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std(ddof=1)) if repeats > 1 else 0.0,
        "fraction_correct_mean": float(frac.mean()),
        "iterations_mean": float(np.mean(iters)), "iterations_min": min(iters), "iterations_max": max(iters),
    }
    out = Path(args.out or "kmeans.csv")
    harness.write_table([row], out)
    _print({k: v for k, v in row.items() if k != "seeds"})


def cmd_evaluate(args) -> None:
    net = load_weights(args.weights)
    split = read_dataset(args.features)
    tr, te = _views(split, net.task)
    if args.split == "train":
        ds = tr
    elif args.split == "test":
        ds = te
    else:
        ds = FeatureDataset(np.concatenate([tr.frames, te.frames]), np.concatenate([tr.labels, te.labels]),
                            np.concatenate([tr.locations, te.locations]), split.length)
    scores = evaluate(net, ds).scores()
    scores.pop("train_time")
    if args.out:
        Path(args.out).write_text(json.dumps(scores, indent=2) + "\n")
    _print(scores)


def cmd_report(args) -> None:
    cfg = harness.ExperimentConfig.from_json(args.config) if args.config else harness.ExperimentConfig()
    overrides = {}
    if "seed" in args.explicit:
        overrides["seed"] = args.seed
    if args.repeats is not None:
        overrides["repeats"] = args.repeats
    if args.out:
        overrides["out"] = args.out
    if args.strict_timing:
        overrides["strict_timing"] = True
    if overrides:
        cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), **overrides})
    bundle = harness.run_pipeline(cfg)
    print(f"report -> {bundle.summary}")


def cmd_latency(args) -> None:
    if args.n < 1:
        raise ValidationError("--n must be >= 1")
    net = load_weights(args.weights) if args.weights else NetSpec(args.task).build(seed=args.seed)
    if args.features:
        frames = read_dataset(args.features).test.frames
    else:
        frames = np.random.default_rng(args.seed).random((256, 7, 7))
    with harness.timing_guard(args.strict_timing):
        stats = harness.measure_inference_latency(net, frames, min_inferences=args.n)
    row = {"task": net.task, **stats.as_row()}
    if args.out:
        harness.write_table([row], Path(args.out))
    _print(row)


COMMANDS = {
    "simulate": cmd_simulate,
    "features": cmd_features,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "kmeans": cmd_kmeans,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "latency": cmd_latency,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.explicit = {a.lstrip("-").split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, ArchiveError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StageError, SolverError, TrainingError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except Exception as exc:  # noqa: BLE001 - any other failure is a stage failure
        print(f"stage failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
