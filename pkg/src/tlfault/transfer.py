"""Transfer of a 100 km source network to other line lengths.

Three ways to get a target-length network:

* ``FINE_TUNE``: convolution/pooling extractor copied and frozen; F5, F6 and
  (for classification) the head start from the source and keep training.
* ``NO_FINE_TUNE``: extractor, F5 and F6 copied and frozen; only a freshly
  initialized head trains.
* ``DEDICATED``: nothing copied, every layer trains from scratch.

Location networks reuse the classification source's extractor (and F5/F6
for fine tuning) with a new single-output head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .featurex import FeatureDataset, SplitDataset
from .nn import CLASSIFY, LOCATE, Metrics, NetSpec, Network, TrainConfig, TrainHistory, WeightArchive, train
from .powersim import REFERENCE_LENGTH, SUPPORTED_LENGTHS

TARGET_LENGTHS = tuple(L for L in SUPPORTED_LENGTHS if L != REFERENCE_LENGTH)


class Mode(str, Enum):
    FINE_TUNE = "finetune"
    NO_FINE_TUNE = "frozen"
    DEDICATED = "dedicated"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        text = str(value).strip().lower()
        for m in cls:
            if text in (m.value, m.name.lower()):
                return m
        raise ValidationError(f"unknown transfer mode {value!r}")


FROZEN_LAYERS = {
    Mode.FINE_TUNE: ("C1", "C3"),
    Mode.NO_FINE_TUNE: ("C1", "C3", "F5", "F6"),
    Mode.DEDICATED: (),
}


def default_config(task: str, **kw) -> TrainConfig:
    return TrainConfig.classification(**kw) if task == CLASSIFY else TrainConfig.regression(**kw)


@dataclass
class TransferPlan:
    source_length: float = REFERENCE_LENGTH
    target_lengths: tuple[float, ...] = TARGET_LENGTHS
    modes: tuple[Mode, ...] = (Mode.FINE_TUNE, Mode.NO_FINE_TUNE, Mode.DEDICATED)
    task: str = CLASSIFY
    config: TrainConfig | None = None

    def __post_init__(self):
        self.target_lengths = tuple(float(L) for L in self.target_lengths)
        self.modes = tuple(Mode.parse(m) for m in self.modes)
        if self.task not in (CLASSIFY, LOCATE):
            raise ValidationError(f"unknown task {self.task!r}")
        if any(math.isclose(L, self.source_length) for L in self.target_lengths):
            raise ValidationError("the source length cannot also be a target")
        if self.config is None:
            self.config = default_config(self.task)


@dataclass
class TargetResult:
    length: float
    mode: Mode
    task: str
    metrics: Metrics
    history: TrainHistory
    seed: int

    @property
    def train_time(self) -> float:
        return self.metrics.train_time


@dataclass
class TransferResult:
    plan: TransferPlan
    entries: list[TargetResult] = field(default_factory=list)
    source: TargetResult | None = None

    def get(self, length: float, mode) -> TargetResult:
        mode = Mode.parse(mode)
        for e in self.entries:
            if math.isclose(e.length, length) and e.mode == mode:
                return e
        raise KeyError((length, mode))


def task_view(split: SplitDataset, task: str) -> tuple[FeatureDataset, FeatureDataset]:
    if task == LOCATE:
        return split.train.faulted(), split.test.faulted()
    return split.train, split.test


def pretrain_source(dataset: SplitDataset, config: TrainConfig | None = None, spec: NetSpec | None = None):
    """Train the classification source network from scratch.

    Returns (archive, net, history, metrics); the archive carries no frozen flags.
    """
    config = config or TrainConfig.classification()
    spec = spec or NetSpec(CLASSIFY)
    net = spec.build(seed=config.seed)
    tr, te = task_view(dataset, spec.task)
    net, history, metrics = train(net, tr, te, config)
    return WeightArchive.from_network(net), net, history, metrics


def apply_freeze(archive: WeightArchive | None, mode, task: str = CLASSIFY, seed: int = 0,
                 spec: NetSpec | None = None) -> Network:
    mode = Mode.parse(mode)
    spec = spec or NetSpec(task)
    net = spec.build(seed=seed)
    if mode == Mode.DEDICATED:
        return net
    if archive is None:
        raise ValidationError(f"{mode.value} needs a source archive")
    frozen = FROZEN_LAYERS[mode]
    archive.apply(net, frozen, frozen=True)
    if mode == Mode.FINE_TUNE:
        warm = ["F5", "F6"]
        if task == CLASSIFY:
            warm.append("head")
        archive.apply(net, warm, frozen=False)
    return net


def adapt(plan: TransferPlan, datasets: Mapping[float, SplitDataset], archive: WeightArchive | None,
          seed: int | None = None) -> TransferResult:
    """Train one network per (target length, mode) and score it on the target test split."""
    config = plan.config
    if seed is not None:
        config = TrainConfig(**{**config.__dict__, "seed": seed})
    lookup = {float(k): v for k, v in datasets.items()}
    missing = [L for L in plan.target_lengths if L not in lookup]
    if missing:
        raise ValidationError(f"no dataset for target length(s) {missing}")
    result = TransferResult(plan)
    for length in plan.target_lengths:
        tr, te = task_view(lookup[length], plan.task)
        for mode in plan.modes:
            net = apply_freeze(archive, mode, plan.task, seed=config.seed)
            net, history, metrics = train(net, tr, te, config)
            result.entries.append(TargetResult(length, mode, plan.task, metrics, history, config.seed))
    return result


# ------------------------------------------------------------------ report

CLASSIFY_COLUMNS = ("accuracy", "precision", "recall", "f1", "fraction_correct", "train_time")
LOCATE_COLUMNS = ("mse", "train_time")


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def transfer_suite_report(results: Sequence[TransferResult]) -> list[dict]:
    """One row per (task, length, mode), aggregated over repeats.

    ``results`` holds one TransferResult per statistical repeat (and may mix
    tasks). Each row reports mean and sample std per score, the training-time
    ratio to the dedicated network of the same length, and the seeds used.
    """
    groups: dict[tuple, list[TargetResult]] = {}
    for res in results:
        for e in res.entries:
            groups.setdefault((e.task, e.length, e.mode), []).append(e)
    rows = []
    for (task, length, mode), items in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], list(Mode).index(kv[0][2]))):
        cols = CLASSIFY_COLUMNS if task == CLASSIFY else LOCATE_COLUMNS
        row = {"task": task, "length": length, "mode": mode.value, "repeats": len(items),
               "seeds": " ".join(str(e.seed) for e in items)}
        for c in cols:
            vals = [e.train_time if c == "train_time" else getattr(e.metrics, c) for e in items]
            row[f"{c}_mean"], row[f"{c}_std"] = _mean_std(vals)
        ded = groups.get((task, length, Mode.DEDICATED))
        if ded:
            ratios = [a.train_time / b.train_time for a, b in zip(items, ded) if b.train_time > 0]
            row["time_ratio_mean"], row["time_ratio_std"] = _mean_std(ratios) if ratios else (math.nan, math.nan)
        else:
            row["time_ratio_mean"] = row["time_ratio_std"] = math.nan
        rows.append(row)
    return rows


def accuracy_trend(rows: Sequence[dict], mode=Mode.FINE_TUNE, source_length: float = REFERENCE_LENGTH) -> dict:
    """FINE_TUNE accuracy ordered by |log2(L / source)|, with a monotonicity flag (reported only)."""
    mode = Mode.parse(mode)
    pts = sorted(
        (abs(math.log2(r["length"] / source_length)), r["length"], r["accuracy_mean"])
        for r in rows
        if r["task"] == CLASSIFY and r["mode"] == mode.value
    )
    # Points at equal distance (e.g. 50 and 200 km) are not ordered against each other.
    monotone = all(b[2] <= a[2] + 1e-12 for a in pts for b in pts if b[0] > a[0] + 1e-12)
    return {"points": pts, "monotone_non_increasing": monotone}
