"""Unsupervised K-means baseline.

Clusters one 7-feature vector per record (the first window of each frame)
and scores the partition by mapping every cluster to its majority label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codes import N_CLASSES
from .errors import ValidationError
from .featurex import FeatureDataset, apply_scaler, fit_scaler
from .nn.metrics import classification_metrics


@dataclass
class KMeansModel:
    centroids: np.ndarray  # (k, d)
    n_iter: int
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def predict(self, points: np.ndarray) -> np.ndarray:
        return _assign(np.asarray(points, dtype=float), self.centroids)[0]


@dataclass
class ClusterLabelMap:
    """Majority-vote label per cluster; -1 marks an empty cluster."""

    labels: np.ndarray  # (k,)
    sizes: np.ndarray  # (k,)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    def map(self, clusters: np.ndarray) -> np.ndarray:
        return self.labels[clusters]


@dataclass
class ClusterScore:
    accuracy: float  # one-vs-rest averaged accuracy over the mapped predictions
    fraction_correct: float
    contributions: np.ndarray  # per cluster: majority count / cluster size (nan when empty)
    mapping: ClusterLabelMap


def _sq_dist(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points**2).sum(axis=1)[:, None] - 2.0 * points @ centroids.T + (centroids**2).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _assign(points, centroids):
    d = _sq_dist(points, centroids)
    idx = d.argmin(axis=1)
    return idx, float(d[np.arange(len(points)), idx].sum())


def _plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = [points[rng.integers(n)]]
    closest = _sq_dist(points, np.array(centroids))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # Every point already coincides with a centroid; pick an unused distinct one.
            used = {tuple(c) for c in centroids}
            choice = next(p for p in points if tuple(p) not in used)
        else:
            choice = points[rng.choice(n, p=closest / total)]
        centroids.append(choice)
        closest = np.minimum(closest, _sq_dist(points, choice[None, :])[:, 0])
    return np.array(centroids, dtype=float)


def kmeans_fit(points, k: int = N_CLASSES, seed: int = 0, max_iter: int = 300, tol: float = 1e-4) -> KMeansModel:
    """k-means++ seeding then Lloyd iterations.

    Stops when the largest centroid shift drops below ``tol`` or after
    ``max_iter`` iterations. A cluster that loses all its points keeps its
    previous centroid.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("points must be a non-empty (n, d) array")
    if k < 1:
        raise ValidationError("k must be positive")
    if len(np.unique(x, axis=0)) < k:
        raise ValidationError(f"need at least {k} distinct points")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus(x, k, rng)
    history = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        idx, inertia = _assign(x, centroids)
        history.append(inertia)
        sums = np.zeros_like(centroids)
        np.add.at(sums, idx, x)
        counts = np.bincount(idx, minlength=k)
        new = centroids.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            converged = True
            break
    _, inertia = _assign(x, centroids)
    history.append(inertia)
    return KMeansModel(centroids, n_iter, inertia, history, converged)


def label_map(clusters: np.ndarray, labels: np.ndarray, k: int) -> ClusterLabelMap:
    mapped = np.full(k, -1, dtype=np.int64)
    sizes = np.bincount(clusters, minlength=k)
    for c in range(k):
        members = labels[clusters == c]
        if members.size:
            # Ties go to the smallest label.
            mapped[c] = np.bincount(members).argmax()
    return ClusterLabelMap(mapped, sizes)


def cluster_accuracy(model: KMeansModel, points, labels, n_classes: int = N_CLASSES) -> ClusterScore:
    x = np.asarray(points, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) != len(y):
        raise ValidationError("points and labels must align")
    clusters = model.predict(x)
    mapping = label_map(clusters, y, model.k)
    pred = mapping.map(clusters)
    contrib = np.full(model.k, np.nan)
    for c in range(model.k):
        if mapping.sizes[c]:
            contrib[c] = np.mean(y[clusters == c] == mapping.labels[c])
    metrics = classification_metrics(y, pred, max(n_classes, int(y.max()) + 1))
    return ClusterScore(metrics.accuracy, metrics.fraction_correct, contrib, mapping)


def feature_vectors(ds: FeatureDataset, normalized: bool = True) -> np.ndarray:
    """First-window feature row of each frame, min-max scaled over the whole set."""
    rows = ds.frames[:, 0, :]
    if not normalized:
        return rows.copy()
    return apply_scaler(fit_scaler(rows), rows)


@dataclass
class KMeansRun:
    seed: int
    accuracy: float
    fraction_correct: float
    n_iter: int
    inertia: float


def kmeans_repeats(ds: FeatureDataset, seeds: Sequence[int], k: int = N_CLASSES) -> list[KMeansRun]:
    x = feature_vectors(ds)
    runs = []
    for s in seeds:
        model = kmeans_fit(x, k, seed=int(s))
        score = cluster_accuracy(model, x, ds.labels)
        runs.append(KMeansRun(int(s), score.accuracy, score.fraction_correct, model.n_iter, model.inertia))
    return runs
