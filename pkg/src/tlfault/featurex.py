"""Main-harmonic feature frames from bus-2 waveforms.

Each record becomes a 7x7 frame: rows are seven 30-sample windows starting
at the fault instant (stride one sample), columns are the 60 Hz amplitudes of
va, vb, vc, ia, ib, ic and the zero-sequence current.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codes import CLASS_CODES, N_CLASSES, FaultType, code_to_label, label_to_code
from .errors import ValidationError
from .powersim import F_NOMINAL, SAMPLE_RATE, WaveformRecord

WINDOW = 30
N_WINDOWS = 7
N_FEATURES = 7
FEATURE_NAMES = ("Va", "Vb", "Vc", "Ia", "Ib", "Ic", "I0")

__all__ = [
    "CLASS_CODES",
    "FeatureDataset",
    "Sample",
    "Scaler",
    "assemble_frame",
    "build_dataset",
    "code_to_label",
    "fit_scaler",
    "apply_scaler",
    "label_to_code",
    "main_harmonic",
    "normalize",
    "prepare",
    "SplitDataset",
    "read_dataset",
    "split_dataset",
    "write_dataset",
    "zero_sequence",
]


def _bin_kernel(n: int, f0: float = F_NOMINAL, fs: float = SAMPLE_RATE) -> np.ndarray:
    return np.exp(-2j * np.pi * f0 * np.arange(n) / fs)


_KERNEL = _bin_kernel(WINDOW)


def main_harmonic(x: np.ndarray, f0: float = F_NOMINAL, fs: float = SAMPLE_RATE) -> np.ndarray | float:
    """Amplitude of the f0 component of each 30-sample window along the last axis.

    Over 1.5 cycles at 20 samples per cycle the negative-frequency image sums
    to zero, so a pure f0 tone is recovered exactly.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != WINDOW:
        raise ValidationError(f"window must have {WINDOW} samples, got {x.shape[-1]}")
    kernel = _KERNEL if (f0, fs) == (F_NOMINAL, SAMPLE_RATE) else _bin_kernel(WINDOW, f0, fs)
    amp = (2.0 / WINDOW) * np.abs(x @ kernel)
    return float(amp) if amp.ndim == 0 else amp


def zero_sequence(ia, ib, ic) -> np.ndarray:
    ia, ib, ic = (np.asarray(a, dtype=float) for a in (ia, ib, ic))
    if not (ia.shape == ib.shape == ic.shape):
        raise ValidationError("phase current arrays differ in length")
    return (ia + ib + ic) / 3.0


@dataclass
class Sample:
    frame: np.ndarray  # (7, 7), rows = windows, columns = features
    class_label: int
    location: float  # d/L, nan for no-fault

    @property
    def class_code(self) -> str:
        return label_to_code(self.class_label)


def frame_features(channels: np.ndarray, start: int) -> np.ndarray:
    """Raw 7x7 frame from a (6, n) channel block, first window at ``start``."""
    if channels.shape[1] - start < WINDOW + N_WINDOWS - 1:
        raise ValidationError(
            f"need {WINDOW + N_WINDOWS - 1} samples from the window start, "
            f"got {channels.shape[1] - start}"
        )
    i0 = zero_sequence(*channels[3:6])
    sig = np.vstack([channels, i0[None, :]])[:, start : start + WINDOW + N_WINDOWS - 1]
    windows = np.lib.stride_tricks.sliding_window_view(sig, WINDOW, axis=1)  # (7 ch, 7 win, 30)
    return main_harmonic(windows).T


def assemble_frame(rec: WaveformRecord) -> Sample:
    frame = frame_features(rec.channels, rec.inception_index)
    f = rec.fault
    location = f.distance / rec.line.length if f.is_fault else float("nan")
    return Sample(frame, int(f.fault_type), location)


@dataclass
class FeatureDataset:
    """Array form of a list of samples for one line length."""

    frames: np.ndarray  # (n, 7, 7)
    labels: np.ndarray  # (n,) int
    locations: np.ndarray  # (n,) float, nan for no-fault
    length: float = float("nan")

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.locations = np.asarray(self.locations, dtype=float)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (N_WINDOWS, N_FEATURES):
            raise ValidationError(f"frames must be (n, 7, 7), got {self.frames.shape}")
        if not (len(self.frames) == len(self.labels) == len(self.locations)):
            raise ValidationError("frames, labels and locations differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "FeatureDataset":
        idx = np.asarray(idx)
        return FeatureDataset(self.frames[idx], self.labels[idx], self.locations[idx], self.length)

    def faulted(self) -> "FeatureDataset":
        return self.subset(np.flatnonzero(self.labels != FaultType.NO_FAULT))

    def samples(self) -> list[Sample]:
        return [Sample(f, int(c), float(l)) for f, c, l in zip(self.frames, self.labels, self.locations)]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], length: float = float("nan")) -> "FeatureDataset":
        if not samples:
            return cls(np.zeros((0, N_WINDOWS, N_FEATURES)), np.zeros(0), np.zeros(0), length)
        return cls(
            np.stack([s.frame for s in samples]),
            np.array([s.class_label for s in samples]),
            np.array([s.location for s in samples]),
            length,
        )


def build_dataset(records: Sequence[WaveformRecord]) -> FeatureDataset:
    length = records[0].line.length if records else float("nan")
    return FeatureDataset.from_samples([assemble_frame(r) for r in records], length)


@dataclass
class Scaler:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=float)
        self.maximum = np.asarray(self.maximum, dtype=float)
        if np.any(self.maximum < self.minimum):
            raise ValidationError("scaler max below min")

    def to_dict(self) -> dict:
        return {
            "features": list(FEATURE_NAMES),
            "min": [float(v) for v in self.minimum],
            "max": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["min"], d["max"])


def fit_scaler(train) -> Scaler:
    """Per-feature min/max over every row of every training frame."""
    x = _frames_of(train)
    if x.size == 0:
        raise ValidationError("cannot fit a scaler on an empty training set")
    flat = x.reshape(-1, x.shape[-1])
    return Scaler(flat.min(axis=0), flat.max(axis=0))


def apply_scaler(s: Scaler, x) -> np.ndarray:
    """Min-max to [0, 1]; out-of-range values clamp, zero-range features map to 0."""
    x = _frames_of(x)
    span = s.maximum - s.minimum
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - s.minimum) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def _frames_of(x) -> np.ndarray:
    if isinstance(x, FeatureDataset):
        return x.frames
    if isinstance(x, Sample):
        return x.frame
    if isinstance(x, (list, tuple)) and x and isinstance(x[0], Sample):
        return np.stack([s.frame for s in x])
    return np.asarray(x, dtype=float)


def normalize(ds: FeatureDataset, scaler: Scaler) -> FeatureDataset:
    return FeatureDataset(apply_scaler(scaler, ds.frames), ds.labels, ds.locations, ds.length)


def split_indices(labels: np.ndarray, ratio: float = 0.7, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test index split, deterministic under ``seed``."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must be in (0, 1), got {ratio}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise ValidationError(f"class {int(c)} has {len(idx)} member(s); need at least 2 to split")
        idx = idx[rng.permutation(len(idx))]
        n_train = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
        train.append(idx[:n_train])
        test.append(idx[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split_dataset(samples, ratio: float = 0.7, seed: int = 0):
    """Stratified split of a FeatureDataset or list of Samples."""
    if isinstance(samples, FeatureDataset):
        tr, te = split_indices(samples.labels, ratio, seed)
        return samples.subset(tr), samples.subset(te)
    labels = np.array([s.class_label for s in samples])
    tr, te = split_indices(labels, ratio, seed)
    return [samples[i] for i in tr], [samples[i] for i in te]


# ----------------------------------------------------------------------- io


@dataclass
class SplitDataset:
    """A normalized train/test pair with the scaler fitted on train."""

    train: FeatureDataset
    test: FeatureDataset
    scaler: Scaler
    length: float = float("nan")
    meta: dict = field(default_factory=dict)


def prepare(ds: FeatureDataset, ratio: float = 0.7, seed: int = 0) -> SplitDataset:
    train, test = split_dataset(ds, ratio, seed)
    scaler = fit_scaler(train)
    return SplitDataset(normalize(train, scaler), normalize(test, scaler), scaler, ds.length,
                        {"ratio": ratio, "seed": seed})


FRAME_COLUMNS = tuple(f"x{r}{c}" for r in range(N_WINDOWS) for c in range(N_FEATURES))


def scaler_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".scaler.json")


def write_dataset(split: SplitDataset, path: str | Path) -> Path:
    """CSV of normalized frames (row-major) plus labels; scaler goes to a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(FRAME_COLUMNS) + ["class_label", "class_code", "location", "split"])
        for part, ds in (("train", split.train), ("test", split.test)):
            for frame, label, loc in zip(ds.frames, ds.labels, ds.locations):
                w.writerow([repr(float(v)) for v in frame.ravel()]
                           + [int(label), label_to_code(int(label)), repr(float(loc)), part])
    sidecar = {
        **split.scaler.to_dict(),
        "length": split.length,
        "class_order": list(CLASS_CODES),
        **split.meta,
    }
    scaler_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path: str | Path) -> SplitDataset:
    path = Path(path)
    rows = {"train": [], "test": []}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header[: len(FRAME_COLUMNS)]) != FRAME_COLUMNS:
            raise ValidationError(f"{path}: not a feature dataset")
        for row in r:
            rows[row[-1]].append(row)
    meta = json.loads(scaler_path(path).read_text())
    length = float(meta.get("length", math.nan))

    def to_ds(rs):
        if not rs:
            return FeatureDataset(np.zeros((0, 7, 7)), np.zeros(0), np.zeros(0), length)
        arr = np.array([[float(v) for v in row[:49]] for row in rs])
        return FeatureDataset(
            arr.reshape(-1, N_WINDOWS, N_FEATURES),
            [int(row[49]) for row in rs],
            [float(row[51]) for row in rs],
            length,
        )

    extra = {k: v for k, v in meta.items() if k not in ("min", "max", "features", "length", "class_order")}
    return SplitDataset(to_ds(rows["train"]), to_ds(rows["test"]), Scaler.from_dict(meta), length, extra)
