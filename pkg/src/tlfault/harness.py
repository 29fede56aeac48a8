"""Experiment orchestration.

``run_pipeline`` goes simulate -> features -> per-repeat training (source,
transfer modes, dedicated baselines, location heads) -> K-means -> latency
-> reports. Data stages and per-repeat results are cached under
``<out>/cache`` and reused only when both the stage key and the stored file
hashes match.
"""

from __future__ import annotations

import csv
import dataclasses
import gc
import hashlib
import io
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from . import baselines
from .errors import StageError, ValidationError
from .featurex import FeatureDataset, build_dataset, prepare
from .nn import CLASSIFY, LOCATE, NetSpec, Network, TrainConfig, TrainHistory, WeightArchive, train
from .powersim import REFERENCE_LENGTH, SUPPORTED_LENGTHS, GridAxes, LineParams, generate_grid, read_waveforms, write_waveforms
from .transfer import Mode, accuracy_trend, apply_freeze, default_config

log = logging.getLogger(__name__)

STAGES = ("simulate", "features", "train", "kmeans", "latency", "report")
STAGE_INDEX = {name: i + 1 for i, name in enumerate(STAGES)}
TASKS = (CLASSIFY, LOCATE)
CACHE_VERSION = 1


def _is_supported(length: float) -> bool:
    return any(math.isclose(length, L) for L in SUPPORTED_LENGTHS)


def _train_config(task: str, value) -> TrainConfig:
    if isinstance(value, TrainConfig):
        return value
    value = dict(value or {})
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(value) - fields
    if unknown:
        raise ValidationError(f"unknown {task} training key(s): {sorted(unknown)}")
    return default_config(task, **value)


def _grid(value) -> GridAxes:
    if isinstance(value, GridAxes):
        return value
    if isinstance(value, str):
        if value not in ("full", "reduced"):
            raise ValidationError(f"grid must be 'full', 'reduced' or a mapping, got {value!r}")
        return getattr(GridAxes, value)()
    value = dict(value)
    base = value.pop("base", "full")
    merged = {**_grid(base).to_dict(), **value}
    try:
        return GridAxes.from_dict(merged)
    except TypeError as exc:
        raise ValidationError(f"bad grid: {exc}") from None


@dataclass
class ExperimentConfig:
    """Everything a pipeline run depends on.

    JSON keys mirror the field names. ``grid`` may be ``"full"``,
    ``"reduced"`` or a mapping of axis overrides (optionally with ``"base"``);
    ``classify``/``locate`` are overrides of the task's training preset.
    """

    lengths: tuple[float, ...] = SUPPORTED_LENGTHS
    source_length: float = REFERENCE_LENGTH
    grid: GridAxes = field(default_factory=GridAxes.full)
    snr_db: float | None = 60.0
    split_ratio: float = 0.7
    classify: TrainConfig = field(default_factory=TrainConfig.classification)
    locate: TrainConfig = field(default_factory=TrainConfig.regression)
    modes: tuple[Mode, ...] = tuple(Mode)
    tasks: tuple[str, ...] = TASKS
    repeats: int = 30
    kmeans_repeats: int = 30
    latency_inferences: int = 10_000
    seed: int = 0
    out: str = "report"
    strict_timing: bool = False

    def __post_init__(self):
        try:
            self.lengths = tuple(sorted(float(L) for L in self.lengths))
            self.source_length = float(self.source_length)
        except (TypeError, ValueError):
            raise ValidationError("lengths must be numbers") from None
        if not self.lengths:
            raise ValidationError("at least one length is required")
        bad = [L for L in self.lengths + (self.source_length,) if not _is_supported(L)]
        if bad:
            raise ValidationError(f"unsupported length(s) {bad}; choose from {list(SUPPORTED_LENGTHS)}")
        if len(set(self.lengths)) != len(self.lengths):
            raise ValidationError("lengths must be distinct")
        self.grid = _grid(self.grid)
        self.classify = _train_config(CLASSIFY, self.classify)
        self.locate = _train_config(LOCATE, self.locate)
        self.modes = tuple(Mode.parse(m) for m in self.modes)
        self.tasks = tuple(self.tasks)
        if not self.modes or not self.tasks:
            raise ValidationError("modes and tasks must be non-empty")
        if any(t not in TASKS for t in self.tasks):
            raise ValidationError(f"tasks must be drawn from {TASKS}")
        if LOCATE in self.tasks and CLASSIFY not in self.tasks and set(self.modes) - {Mode.DEDICATED}:
            raise ValidationError("location transfer reuses the classification source; add the classify task")
        for name in ("repeats", "kmeans_repeats", "latency_inferences"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError("split_ratio must lie in (0, 1)")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ValidationError("snr_db must be finite or null")

    @property
    def targets(self) -> tuple[float, ...]:
        return tuple(L for L in self.lengths if not math.isclose(L, self.source_length))

    @property
    def data_lengths(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.lengths) | {self.source_length}))

    def train_config(self, task: str, seed: int) -> TrainConfig:
        base = self.classify if task == CLASSIFY else self.locate
        return dataclasses.replace(base, seed=int(seed))

    def to_dict(self) -> dict:
        return {
            "lengths": list(self.lengths),
            "source_length": self.source_length,
            "grid": self.grid.to_dict(),
            "snr_db": self.snr_db,
            "split_ratio": self.split_ratio,
            "classify": dataclasses.asdict(self.classify),
            "locate": dataclasses.asdict(self.locate),
            "modes": [m.value for m in self.modes],
            "tasks": list(self.tasks),
            "repeats": self.repeats,
            "kmeans_repeats": self.kmeans_repeats,
            "latency_inferences": self.latency_inferences,
            "seed": self.seed,
            "out": self.out,
            "strict_timing": self.strict_timing,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config key(s): {sorted(unknown)}")
        return cls(**dict(d))

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def stage_seed(master: int, stage: str, *extra: int) -> int:
    """Master seed plus the stage's index, mixed with any per-item integers."""
    base = int(master) + STAGE_INDEX[stage]
    if not extra:
        return base
    ss = np.random.SeedSequence([base, *[int(e) for e in extra]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def length_tag(length: float) -> str:
    return f"{length:g}".replace(".", "p")


# ------------------------------------------------------------------ repeats


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    count: int


@dataclass
class StatSummary:
    """Mean and sample standard deviation per metric over the repeats."""

    stats: dict[Hashable, Stat]
    seeds: tuple[int, ...]
    values: dict[Hashable, list[float]]

    def __getitem__(self, key) -> Stat:
        return self.stats[key]

    def __contains__(self, key) -> bool:
        return key in self.stats


class RepeatError(StageError):
    def __init__(self, repeat: int, seed: int, cause: BaseException):
        super().__init__(f"repeat {repeat} (seed {seed})", cause)
        self.repeat = repeat
        self.seed = seed


def _summarize(values: Sequence[float]) -> Stat:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return Stat(float(arr.mean()), std, int(arr.size))


def statistical_repeat(closure: Callable[[int], float | Mapping], repeats: int, master_seed: int) -> StatSummary:
    """Run ``closure(seed)`` for seeds master+1 .. master+repeats and aggregate."""
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    seeds = tuple(int(master_seed) + r for r in range(1, repeats + 1))
    values: dict[Hashable, list[float]] = {}
    for r, seed in enumerate(seeds, start=1):
        try:
            out = closure(seed)
        except Exception as exc:
            raise RepeatError(r, seed, exc) from exc
        items = out.items() if isinstance(out, Mapping) else (("value", out),)
        for key, v in items:
            values.setdefault(key, []).append(float(v))
    counts = {len(v) for v in values.values()}
    if counts and counts != {repeats}:
        raise ValidationError("closure returned different metric sets across repeats")
    return StatSummary({k: _summarize(v) for k, v in values.items()}, seeds, values)


# ------------------------------------------------------------------- timing


@contextmanager
def timing_guard(strict: bool):
    """With ``strict``, pin to one CPU and pause the garbage collector."""
    if not strict:
        yield
        return
    affinity = None
    if hasattr(os, "sched_getaffinity"):
        affinity = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(affinity)})
    was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()
        if affinity is not None:
            os.sched_setaffinity(0, affinity)


@dataclass(frozen=True)
class LatencyStats:
    mean: float  # seconds per sample
    p99: float
    median: float
    n: int

    def as_row(self) -> dict:
        return {"inferences": self.n, "mean_us": self.mean * 1e6, "median_us": self.median * 1e6,
                "p99_us": self.p99 * 1e6}


def measure_inference_latency(net: Network, samples, repetitions: int = 1, min_inferences: int = 10_000,
                              warmup: int = 100) -> LatencyStats:
    """Wall-clock latency of single-frame forward passes."""
    frames = np.asarray(samples, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.size == 0 or len(frames) == 0:
        raise ValidationError("latency measurement needs at least one sample")
    total = max(int(min_inferences), len(frames) * int(repetitions))
    for i in range(warmup):
        net.forward(frames[i % len(frames)])
    times = np.empty(total)
    clock = time.perf_counter_ns
    for i in range(total):
        frame = frames[i % len(frames)]
        t = clock()
        net.forward(frame)
        times[i] = clock() - t
    times *= 1e-9
    return LatencyStats(float(times.mean()), float(np.percentile(times, 99)), float(np.median(times)), total)


# -------------------------------------------------------------------- cache


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


class StageCache:
    """Manifest of stage outputs keyed by an input hash, verified by file hashes."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / "manifest.json"
        self.entries: dict = json.loads(self.path.read_text()) if self.path.exists() else {}
        self.hits: list[str] = []
        self.misses: list[str] = []

    def lookup(self, name: str, key: str) -> dict[str, Path] | None:
        entry = self.entries.get(name)
        if not entry or entry.get("key") != key:
            self.misses.append(name)
            return None
        files = {}
        for label, (fname, digest) in entry["files"].items():
            p = self.root / fname
            if not p.exists() or _sha256(p) != digest:
                self.misses.append(name)
                return None
            files[label] = p
        self.hits.append(name)
        return files

    def store(self, name: str, key: str, files: Mapping[str, Path]) -> None:
        self.entries[name] = {
            "key": key,
            "files": {label: (Path(p).name, _sha256(Path(p))) for label, p in files.items()},
        }
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.entries, indent=1, sort_keys=True) + "\n")
        tmp.replace(self.path)

    def digest(self, name: str) -> str:
        return _key_hash(self.entries[name]["files"])


def _save_features(ds: FeatureDataset, path: Path) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, frames=ds.frames, labels=ds.labels, locations=ds.locations, length=np.float64(ds.length))


def _load_features(path: Path) -> FeatureDataset:
    with np.load(path) as z:
        return FeatureDataset(z["frames"], z["labels"], z["locations"], float(z["length"]))


# ----------------------------------------------------------------- results


@dataclass
class RunRecord:
    """One trained network: scores, timing and its per-epoch history."""

    task: str
    length: float
    mode: Mode
    seed: int
    scores: dict[str, float]
    history: TrainHistory

    def to_dict(self) -> dict:
        return {"task": self.task, "length": self.length, "mode": self.mode.value, "seed": self.seed,
                "scores": self.scores,
                "history": {"metric": self.history.metric, "train": self.history.train, "val": self.history.val}}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        h = d["history"]
        return cls(d["task"], float(d["length"]), Mode.parse(d["mode"]), int(d["seed"]), dict(d["scores"]),
                   TrainHistory(h["metric"], list(h["train"]), list(h["val"])))


@dataclass
class ReportBundle:
    out: Path
    tables: dict[str, Path]
    summary: Path
    histories: list[Path]
    plots: list[Path]
    config: Path
    rows: dict[str, list[dict]]
    cache_hits: list[str] = field(default_factory=list)


def _run_one(task, length, mode, split, archive, config) -> tuple[Network, RunRecord]:
    net = apply_freeze(archive, mode, task, seed=config.seed)
    view_tr, view_te = (split.train, split.test) if task == CLASSIFY else (split.train.faulted(), split.test.faulted())
    net, history, metrics = train(net, view_tr, view_te, config)
    return net, RunRecord(task, length, mode, config.seed, metrics.scores(), history)


def run_repeat(cfg: ExperimentConfig, datasets: Mapping[float, FeatureDataset], seed: int):
    """Train every configured (task, length, mode) network for one repeat seed.

    The DEDICATED classifier at the source length is the transfer source.
    Returns (records, source archive, location reference archive).
    """
    splits = {L: prepare(datasets[L], cfg.split_ratio, seed=seed) for L in cfg.data_lengths}
    records: list[RunRecord] = []
    src = cfg.source_length
    archive = None
    loc_archive = None
    needs_source = CLASSIFY in cfg.tasks
    with timing_guard(cfg.strict_timing):
        if needs_source:
            net, rec = _run_one(CLASSIFY, src, Mode.DEDICATED, splits[src], None, cfg.train_config(CLASSIFY, seed))
            archive = WeightArchive.from_network(net)
            if Mode.DEDICATED in cfg.modes and src in cfg.lengths:
                records.append(rec)
        for task in cfg.tasks:
            tc = cfg.train_config(task, seed)
            for length in cfg.lengths:
                for mode in cfg.modes:
                    is_source = math.isclose(length, src)
                    if mode != Mode.DEDICATED and is_source:
                        continue
                    if task == CLASSIFY and mode == Mode.DEDICATED and is_source:
                        continue  # already trained as the source
                    net, rec = _run_one(task, length, mode, splits[length], archive, tc)
                    records.append(rec)
                    if task == LOCATE and mode == Mode.DEDICATED and is_source:
                        loc_archive = WeightArchive.from_network(net)
    return records, archive, loc_archive


def _flatten_records(records: Sequence[RunRecord]) -> dict:
    """Per-repeat scalar metrics keyed (task, length, mode, name), with time ratios."""
    out = {}
    by_key = {(r.task, r.length, r.mode): r for r in records}
    for r in records:
        names = ("accuracy", "precision", "recall", "f1", "fraction_correct") if r.task == CLASSIFY else ("mse",)
        for n in names + ("train_time",):
            out[(r.task, r.length, r.mode, n)] = r.scores[n]
        ded = by_key.get((r.task, r.length, Mode.DEDICATED))
        if ded is not None and ded.scores["train_time"] > 0:
            out[(r.task, r.length, r.mode, "time_ratio")] = r.scores["train_time"] / ded.scores["train_time"]
    return out


# ------------------------------------------------------------------ tables

CLASSIFY_METRICS = ("accuracy", "precision", "recall", "f1", "fraction_correct", "train_time", "time_ratio")
LOCATE_METRICS = ("mse", "train_time", "time_ratio")
TIMING_PREFIXES = ("train_time", "time_ratio", "mean_us", "median_us", "p99_us")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def write_table(rows: Sequence[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def read_table(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def strip_timing(path: str | Path) -> str:
    """CSV text with wall-clock columns removed (for determinism checks)."""
    rows = read_table(path)
    if not rows:
        return Path(path).read_text()
    keep = [c for c in rows[0] if not c.startswith(TIMING_PREFIXES)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keep)
    for r in rows:
        w.writerow([r[c] for c in keep])
    return buf.getvalue()


def result_rows(summary: StatSummary, cfg: ExperimentConfig, task: str) -> list[dict]:
    metrics = CLASSIFY_METRICS if task == CLASSIFY else LOCATE_METRICS
    rows = []
    seeds = " ".join(str(s) for s in summary.seeds)
    for length in cfg.lengths:
        for mode in cfg.modes:
            if (task, length, mode, metrics[0]) not in summary:
                continue
            row = {"length": length, "mode": mode.value, "repeats": len(summary.seeds), "seeds": seeds}
            for m in metrics:
                st = summary.stats.get((task, length, mode, m))
                row[f"{m}_mean"] = st.mean if st else math.nan
                row[f"{m}_std"] = st.std if st else math.nan
            rows.append(row)
    return rows


def _pm(mean: float, std: float, scale: float = 1.0, digits: int = 2) -> str:
    if math.isnan(mean):
        return "n/a"
    return f"{mean * scale:.{digits}f} ± {std * scale:.{digits}f}"


def _md_table(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines)


def markdown_summary(cfg: ExperimentConfig, rows: dict[str, list[dict]]) -> str:
    parts = [
        "# Fault classification and location report",
        "",
        f"Lengths: {', '.join(f'{L:g}' for L in cfg.lengths)} km; source {cfg.source_length:g} km; "
        f"repeats {cfg.repeats}; master seed {cfg.seed}; grid {cfg.grid.per_class} samples per faulted class.",
        "Accuracy is the one-vs-rest average over the 11 classes; values are mean ± sample std in percent.",
        "",
    ]
    if rows.get("classification"):
        parts += ["## Classification", ""]
        body = [[f"{r['length']:g}", r["mode"], _pm(r["accuracy_mean"], r["accuracy_std"], 100),
                 _pm(r["precision_mean"], r["precision_std"], 100), _pm(r["recall_mean"], r["recall_std"], 100),
                 _pm(r["f1_mean"], r["f1_std"], 100), _pm(r["fraction_correct_mean"], r["fraction_correct_std"], 100),
                 _pm(r["train_time_mean"], r["train_time_std"]), _pm(r["time_ratio_mean"], r["time_ratio_std"])]
                for r in rows["classification"]]
        parts += [_md_table(["L (km)", "mode", "accuracy", "precision", "recall", "F1", "correct", "time (s)",
                             "time / dedicated"], body), ""]
        trend = accuracy_trend([{**r, "task": CLASSIFY} for r in rows["classification"]], source_length=cfg.source_length)
        parts += [f"Fine-tune accuracy non-increasing with distance from the source length: "
                  f"{'yes' if trend['monotone_non_increasing'] else 'no'}.", ""]
    if rows.get("location"):
        parts += ["## Location", ""]
        body = [[f"{r['length']:g}", r["mode"], _pm(r["mse_mean"], r["mse_std"], 1, 5),
                 _pm(r["train_time_mean"], r["train_time_std"]), _pm(r["time_ratio_mean"], r["time_ratio_std"])]
                for r in rows["location"]]
        parts += [_md_table(["L (km)", "mode", "mse", "time (s)", "time / dedicated"], body), ""]
    if rows.get("kmeans"):
        parts += ["## K-means baseline", ""]
        body = [[f"{r['length']:g}", _pm(r["accuracy_mean"], r["accuracy_std"], 100),
                 _pm(r["fraction_correct_mean"], r["fraction_correct_std"], 100),
                 f"{r['iterations_mean']:.1f} ({r['iterations_min']}-{r['iterations_max']})"]
                for r in rows["kmeans"]]
        parts += [_md_table(["L (km)", "accuracy", "correct", "iterations"], body), ""]
    if rows.get("latency"):
        parts += ["## Inference latency", ""]
        body = [[r["task"], str(r["inferences"]), f"{r['mean_us']:.1f}", f"{r['p99_us']:.1f}"] for r in rows["latency"]]
        parts += [_md_table(["task", "inferences", "mean (µs)", "p99 (µs)"], body), ""]
    return "\n".join(parts)


# -------------------------------------------------------------------- plots


def history_path(root: Path, rec: RunRecord) -> Path:
    return root / f"{rec.task}_L{length_tag(rec.length)}_{rec.mode.value}_s{rec.seed}.csv"


def write_history(rec: RunRecord, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", f"train_{rec.history.metric}", f"val_{rec.history.metric}"])
        for i, (a, b) in enumerate(zip(rec.history.train, rec.history.val), start=1):
            w.writerow([i, _fmt(float(a)), _fmt(float(b))])
    return path


def load_histories(root: str | Path) -> dict[tuple[str, float, str], list[TrainHistory]]:
    """Read persisted history files back, grouped by (task, length, mode)."""
    out: dict[tuple[str, float, str], list[TrainHistory]] = {}
    for p in sorted(Path(root).glob("*.csv")):
        task, ltag, mode, _ = p.stem.split("_")
        rows = read_table(p)
        with open(p, newline="") as fh:
            header = next(csv.reader(fh))
        metric = header[1].split("_", 1)[1]
        h = TrainHistory(metric, [float(r[f"train_{metric}"]) for r in rows], [float(r[f"val_{metric}"]) for r in rows])
        out.setdefault((task, float(ltag[1:].replace("p", ".")), mode), []).append(h)
    return out


def emit_plot_data(histories: Mapping[tuple, Sequence[TrainHistory]], rows: Mapping[str, Sequence[dict]],
                   out_dir: str | Path) -> list[Path]:
    """Two-column curve files (mean over repeats), bar data and a gnuplot script."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    curves = []
    for (task, length, mode), hs in sorted(histories.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        mode = Mode.parse(mode).value
        for part in ("train", "val"):
            series = np.mean([getattr(h, part) for h in hs], axis=0)
            p = out / f"curve_{task}_L{length_tag(length)}_{mode}_{part}.dat"
            p.write_text("".join(f"{i} {_fmt(float(v))}\n" for i, v in enumerate(series, start=1)))
            written.append(p)
            curves.append((p.name, f"{task} {length:g} km {mode} {part}", hs[0].metric))
    bars = {
        "bars_accuracy.dat": ("classification", "accuracy_mean"),
        "bars_time_classification.dat": ("classification", "train_time_mean"),
        "bars_mse.dat": ("location", "mse_mean"),
        "bars_time_location.dat": ("location", "train_time_mean"),
    }
    for name, (table, col) in bars.items():
        entries = rows.get(table) or []
        if not entries:
            continue
        p = out / name
        p.write_text("# length mode value\n" + "".join(
            f"{float(r['length']):g} {r['mode']} {_fmt(float(r[col]))}\n" for r in entries))
        written.append(p)
    script = ["# gnuplot script; run `gnuplot plots.gp` inside this directory", "set terminal pngcairo size 900,600",
              "set key outside"]
    for fname, title, metric in curves:
        png = fname.replace(".dat", ".png")
        script += [f"set output '{png}'", f"set xlabel 'epoch'", f"set ylabel '{metric}'",
                   f"plot '{fname}' using 1:2 with lines title '{title}'"]
    for name in bars:
        if (out / name).exists():
            script += [f"set output '{name.replace('.dat', '.png')}'", "set style data histogram",
                       "set xlabel 'length (km) / mode'",
                       f"plot '{name}' using 3:xtic(sprintf('%s %s', stringcolumn(1), stringcolumn(2))) notitle"]
    gp = out / "plots.gp"
    gp.write_text("\n".join(script) + "\n")
    written.append(gp)
    return written


# ----------------------------------------------------------------- pipeline


def _stage(name: str):
    @contextmanager
    def guard():
        try:
            yield
        except (ValidationError, StageError):
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc

    return guard()


def load_datasets(cfg: ExperimentConfig, cache: StageCache) -> tuple[dict[float, FeatureDataset], dict[float, str]]:
    datasets, digests = {}, {}
    for length in cfg.data_lengths:
        tag = length_tag(length)
        sim_seed = stage_seed(cfg.seed, "simulate", int(round(length * 10)))
        sim_key = _key_hash({"v": CACHE_VERSION, "grid": cfg.grid.to_dict(), "snr": cfg.snr_db,
                             "length": length, "seed": sim_seed})
        with _stage(f"simulate L={length:g}"):
            name = f"simulate_L{tag}"
            hit = cache.lookup(name, sim_key)
            if hit is None:
                records = generate_grid(LineParams().with_length(length), cfg.grid, seed=sim_seed, snr_db=cfg.snr_db)
                path = write_waveforms(records, cache.root / f"waveforms_L{tag}.tlwf")
                cache.store(name, sim_key, {"waveforms": path})
                hit = {"waveforms": path}
                records_cached = records
            else:
                records_cached = None
        feat_key = _key_hash({"v": CACHE_VERSION, "waveforms": cache.digest(name)})
        with _stage(f"features L={length:g}"):
            fname = f"features_L{tag}"
            fhit = cache.lookup(fname, feat_key)
            if fhit is None:
                records = records_cached if records_cached is not None else read_waveforms(hit["waveforms"])
                ds = build_dataset(records)
                path = cache.root / f"features_L{tag}.npz"
                _save_features(ds, path)
                cache.store(fname, feat_key, {"features": path})
            else:
                ds = _load_features(fhit["features"])
        datasets[length] = ds
        digests[length] = cache.digest(fname)
    return datasets, digests


def _repeat_key(cfg: ExperimentConfig, digests: Mapping[float, str], seed: int) -> str:
    return _key_hash({
        "v": CACHE_VERSION, "data": {f"{k:g}": v for k, v in digests.items()}, "seed": seed,
        "classify": dataclasses.asdict(cfg.classify), "locate": dataclasses.asdict(cfg.locate),
        "modes": [m.value for m in cfg.modes], "tasks": list(cfg.tasks), "lengths": list(cfg.lengths),
        "source": cfg.source_length, "ratio": cfg.split_ratio,
    })


def run_pipeline(cfg: ExperimentConfig) -> ReportBundle:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out / "cache")
    config_path = cfg.to_json(out / "config.json")

    datasets, digests = load_datasets(cfg, cache)

    records: list[RunRecord] = []
    archives: dict[int, tuple[Path | None, Path | None]] = {}

    def one_repeat(seed: int) -> dict:
        name = f"train_s{seed}"
        key = _repeat_key(cfg, digests, seed)
        hit = cache.lookup(name, key)
        if hit is None:
            recs, arc, loc = run_repeat(cfg, datasets, seed)
            files = {"results": cache.root / f"results_s{seed}.json"}
            files["results"].write_text(json.dumps([r.to_dict() for r in recs], indent=1) + "\n")
            if arc is not None:
                files["source"] = arc.save(cache.root / f"source_s{seed}.tlxd")
            if loc is not None:
                files["locate"] = loc.save(cache.root / f"locate_s{seed}.tlxd")
            cache.store(name, key, files)
            hit = files
        else:
            recs = [RunRecord.from_dict(d) for d in json.loads(hit["results"].read_text())]
        archives[seed] = (hit.get("source"), hit.get("locate"))
        records.extend(recs)
        return _flatten_records(recs)

    with _stage("train"):
        summary = statistical_repeat(one_repeat, cfg.repeats, cfg.seed)

    rows: dict[str, list[dict]] = {}
    if CLASSIFY in cfg.tasks:
        rows["classification"] = result_rows(summary, cfg, CLASSIFY)
    if LOCATE in cfg.tasks:
        rows["location"] = result_rows(summary, cfg, LOCATE)

    with _stage("kmeans"):
        rows["kmeans"] = kmeans_table(cfg, datasets, cache)

    with _stage("latency"):
        rows["latency"] = latency_table(cfg, datasets, archives[summary.seeds[0]])

    with _stage("report"):
        tables = {name: write_table(r, out / f"{name}.csv") for name, r in rows.items()}
        hist_dir = out / "histories"
        hist_files = [write_history(r, history_path(hist_dir, r)) for r in records]
        plots = emit_plot_data(load_histories(hist_dir), rows, out / "plots")
        summary_path = out / "summary.md"
        summary_path.write_text(markdown_summary(cfg, rows))
    return ReportBundle(out, tables, summary_path, hist_files, plots, config_path, rows, list(cache.hits))


def kmeans_table(cfg: ExperimentConfig, datasets: Mapping[float, FeatureDataset], cache: StageCache) -> list[dict]:
    seeds = [stage_seed(cfg.seed, "kmeans") + r for r in range(cfg.kmeans_repeats)]
    rows = []
    for length in cfg.lengths:
        runs = baselines.kmeans_repeats(datasets[length], seeds)
        acc = _summarize([r.accuracy for r in runs])
        frac = _summarize([r.fraction_correct for r in runs])
        iters = [r.n_iter for r in runs]
        rows.append({
            "length": length, "repeats": len(runs), "seeds": " ".join(map(str, seeds)),
            "accuracy_mean": acc.mean, "accuracy_std": acc.std,
            "fraction_correct_mean": frac.mean, "fraction_correct_std": frac.std,
            "iterations_mean": float(np.mean(iters)), "iterations_min": min(iters), "iterations_max": max(iters),
        })
    return rows


def latency_table(cfg: ExperimentConfig, datasets: Mapping[float, FeatureDataset],
                  archive_paths: tuple[Path | None, Path | None]) -> list[dict]:
    split = prepare(datasets[cfg.source_length], cfg.split_ratio, seed=cfg.seed + 1)
    frames = split.test.frames
    rows = []
    for task, path in zip((CLASSIFY, LOCATE), archive_paths):
        if path is None:
            continue
        net = NetSpec(task).build(seed=0)
        WeightArchive.load(path).apply(net)
        with timing_guard(cfg.strict_timing):
            stats = measure_inference_latency(net, frames, min_inferences=cfg.latency_inferences)
        rows.append({"task": task, **stats.as_row()})
    return rows
