from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..codes import FaultType
from ..errors import TrainingError, ValidationError
from ..featurex import FeatureDataset
from .metrics import Metrics, classification_metrics, mean_squared_error
from .network import CLASSIFY, Network
from . import kernels
from .optim import AdamState, TrainConfig, adam_step


@dataclass
class TrainHistory:
    metric: str  # "accuracy" (classification) or "loss" (regression)
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train)


def targets_for(net: Network, ds: FeatureDataset) -> np.ndarray:
    if net.task == CLASSIFY:
        return ds.labels
    if np.any(ds.labels == FaultType.NO_FAULT) or np.any(~np.isfinite(ds.locations)):
        raise ValidationError("location targets need faulted samples only")
    return ds.locations


def train(net: Network, train_set: FeatureDataset, val_set: FeatureDataset, config: TrainConfig):
    """Mini-batch Adam training; returns (net, history, metrics on ``val_set``).

    Layers in front of the first trainable layer are evaluated once and
    cached, and backpropagation stops at that layer. The reported training
    time covers everything from that cache through the last epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValidationError("training and validation sets must be non-empty")
    expected = "cross_entropy" if net.task == CLASSIFY else "mse"
    if config.loss != expected:
        raise ValidationError(f"{net.task} network trains with {expected}, not {config.loss}")
    y = targets_for(net, train_set)
    yv = targets_for(net, val_set)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory("accuracy" if net.task == CLASSIFY else "loss")
    params = net.parameters()
    state = AdamState()
    span = net.trainable_span()
    if span is not None:
        # Fused path: one Adam update over the contiguous trainable slice.
        lo, hi = span
        theta = net.theta[lo:hi]
        m, v = np.zeros(hi - lo), np.zeros(hi - lo)
        order_keys = [k for k, (a, _) in sorted(net.offsets.items(), key=lambda kv: kv[1][0]) if lo <= a < hi]
    n = len(y)

    t0 = time.perf_counter()
    start = net.trainable_start()
    xc = net.run(net._prepare(train_set.frames)[0], 0, start)
    xvc = net.run(net._prepare(val_set.frames)[0], 0, start)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        if start < len(net.layers):
            total, score = 0.0, 0.0
            for b in range(0, n, config.batch_size):
                idx = order[b : b + config.batch_size]
                loss, out, grads = net.loss_and_grads(xc[idx], y[idx], start, prepared=True)
                if not np.isfinite(loss):
                    raise TrainingError(f"loss became non-finite in epoch {epoch + 1}", epoch + 1)
                if span is not None:
                    state.t += 1
                    bc1, bc2 = state.bias_corrections(config)
                    g = np.concatenate([grads[k].reshape(-1) for k in order_keys])
                    kernels.adam_update(theta, g, m, v, config.lr, config.beta1, config.beta2,
                                        config.eps, bc1, bc2)
                else:
                    adam_step(state, params, grads, config)
                total += loss * len(idx)
                if net.task == CLASSIFY:
                    score += float(np.sum(out.argmax(axis=1) == y[idx]))
            train_value = score / n if net.task == CLASSIFY else total / n
        else:
            train_value = _score(net, net.activate(net.run(xc, start)), y)
        history.train.append(train_value)
        history.val.append(_score(net, net.activate(net.run(xvc, start)), yv))
    elapsed = time.perf_counter() - t0

    metrics = evaluate(net, val_set)
    metrics.train_time = elapsed
    return net, history, metrics


def _score(net: Network, out: np.ndarray, y: np.ndarray) -> float:
    if net.task == CLASSIFY:
        return float(np.mean(out.argmax(axis=1) == y))
    return float(np.mean((out - y) ** 2))


def evaluate_classifier(net: Network, test_set: FeatureDataset) -> Metrics:
    if len(test_set) == 0:
        raise ValidationError("empty test set")
    pred = net.forward(test_set.frames).argmax(axis=1)
    return classification_metrics(test_set.labels, pred, net.n_out)


def evaluate_regressor(net: Network, test_set: FeatureDataset) -> Metrics:
    """Mean (not summed) squared error over normalized locations."""
    if len(test_set) == 0:
        raise ValidationError("empty test set")
    target = targets_for(net, test_set)
    pred = net.forward(test_set.frames)
    return Metrics(mse=mean_squared_error(pred, target), n=len(target))


def evaluate(net: Network, test_set: FeatureDataset) -> Metrics:
    return evaluate_classifier(net, test_set) if net.task == CLASSIFY else evaluate_regressor(net, test_set)
