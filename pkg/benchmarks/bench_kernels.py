"""Compare the compiled and numpy kernel backends.

Times each hot kernel at the network's real shapes, then a few training
epochs at batch size 1, on every available backend.

    python benchmarks/bench_kernels.py --number 2000 --epochs 2
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from tlfault.featurex import FeatureDataset
from tlfault.nn import NetSpec, TrainConfig, kernels, train


def kernel_cases(rng: np.random.Generator, batch: int) -> dict:
    x1 = rng.random((batch, 1, 7, 7))
    w1 = rng.standard_normal((6, 1, 3, 3))
    x3 = rng.random((batch, 6, 4, 4))
    w3 = rng.standard_normal((16, 6, 3, 3))
    b6, b16 = rng.standard_normal(6), rng.standard_normal(16)
    dy3 = rng.standard_normal((batch, 16, 2, 2))
    p = rng.random((batch, 6, 5, 5))
    dp = rng.standard_normal((batch, 6, 4, 4))
    n = 14079
    theta, g, m, v = rng.standard_normal(n), rng.standard_normal(n), np.zeros(n), np.zeros(n)
    return {
        "conv2d_forward C1": lambda: kernels.conv2d_forward(x1, w1, b6),
        "conv2d_forward C3": lambda: kernels.conv2d_forward(x3, w3, b16),
        "conv2d_backward C3": lambda: kernels.conv2d_backward(x3, w3, dy3, True),
        "avgpool_forward S2": lambda: kernels.avgpool_forward(p, 2, 1),
        "avgpool_backward S2": lambda: kernels.avgpool_backward(dp, p.shape, 2, 1),
        "adam_update (all params)": lambda: kernels.adam_update(theta, g, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.5, 0.5),
    }


def time_training(epochs: int, n: int = 512) -> float:
    rng = np.random.default_rng(0)
    ds = FeatureDataset(rng.random((n, 7, 7)), rng.integers(0, 11, n), np.full(n, 0.5), 100.0)
    net = NetSpec().build(seed=0)
    _, _, metrics = train(net, ds, ds, TrainConfig(epochs=epochs, batch_size=1, seed=0))
    return metrics.train_time


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=2000, help="calls per kernel timing")
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=2, help="training epochs to time (0 skips)")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    results: dict[str, dict[str, float]] = {}
    for name in backends:
        with kernels.backend_scope(name):
            cases = kernel_cases(np.random.default_rng(1), args.batch)
            for label, fn in cases.items():
                fn()
                per_call = min(timeit.repeat(fn, number=args.number, repeat=3)) / args.number
                results.setdefault(label, {})[name] = per_call * 1e6
            if args.epochs:
                results.setdefault(f"train {args.epochs} epochs x 512 (s)", {})[name] = time_training(args.epochs)

    header = f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10s}"
    print(f"backends: {', '.join(backends)} (times in µs per call unless noted)")
    print(header)
    for label, row in results.items():
        line = f"{label:32s}" + "".join(f"{row[b]:12.2f}" for b in backends)
        if len(backends) == 2:
            line += f"{row['python'] / row['native']:10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
