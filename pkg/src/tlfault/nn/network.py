"""Adapted LeNet-5 for 7x7 feature frames."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .layers import AvgPool2D, Conv2D, Dense, Flatten, Layer

CLASSIFY = "classify"
LOCATE = "locate"
TASKS = (CLASSIFY, LOCATE)
EXTRACTOR = ("C1", "S2", "C3", "S4")


@dataclass(frozen=True)
class NetSpec:
    """Layer geometry.

    C1 conv 3x3 (7x7 -> 5x5), S2 avg-pool 2/1 (-> 4x4), C3 conv 3x3 (-> 2x2),
    S4 avg-pool 2/2 (-> 1x1), flatten, F5, F6, then an 11-way softmax head or
    a single linear output.
    """

    task: str = CLASSIFY
    n_classes: int = 11
    c1: int = 6
    c3: int = 16
    kernel: int = 3
    f5: int = 120
    f6: int = 84
    in_shape: tuple = (1, 7, 7)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def n_out(self) -> int:
        return self.n_classes if self.task == CLASSIFY else 1

    def layers(self) -> list[Layer]:
        k = self.kernel
        layers = [
            Conv2D("C1", self.in_shape[0], self.c1, k),
            AvgPool2D("S2", 2, 1),
            Conv2D("C3", self.c1, self.c3, k),
            AvgPool2D("S4", 2, 2),
            Flatten("flatten"),
        ]
        shape = self.in_shape
        for layer in layers:
            shape = layer.output_shape(shape)
        layers += [
            Dense("F5", shape[0], self.f5),
            Dense("F6", self.f5, self.f6),
            Dense("head", self.f6, self.n_out, relu=False),
        ]
        return layers

    def build(self, seed: int = 0) -> "Network":
        return Network(self.layers(), self.task, self.in_shape, seed=seed, spec=self)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Network:
    def __init__(self, layers, task=CLASSIFY, in_shape=(1, 7, 7), seed: int | None = 0, spec: NetSpec | None = None):
        if task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}")
        self.layers: list[Layer] = list(layers)
        self.task = task
        self.in_shape = tuple(in_shape)
        self.spec = spec
        shape = self.in_shape
        self.shapes = [shape]
        for layer in self.layers:
            try:
                shape = layer.output_shape(shape)
            except ValueError as exc:
                raise ValidationError(str(exc)) from None
            self.shapes.append(shape)
        self._flatten()
        if seed is not None:
            self.init(seed)

    # ---------------------------------------------------------- structure

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def n_out(self) -> int:
        return self.shapes[-1][0]

    def init(self, seed: int, names=None) -> None:
        """He-uniform weights, zero biases; ``names`` restricts to some layers."""
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            # Draw for every layer so a layer's weights do not depend on which others are reset.
            sub = np.random.default_rng(rng.integers(2**63))
            if names is None or layer.name in names:
                layer.init(sub)

    def _flatten(self) -> None:
        """Move every parameter into one contiguous buffer ``theta`` (layer order)."""
        items = [(l, k, v) for l in self.layers for k, v in l.params.items()]
        self.theta = np.empty(sum(v.size for _, _, v in items))
        self.offsets: dict[str, tuple[int, int]] = {}
        pos = 0
        for layer, key, value in items:
            view = self.theta[pos : pos + value.size].reshape(value.shape)
            view[...] = value
            layer.params[key] = view
            self.offsets[f"{layer.name}.{key}"] = (pos, pos + value.size)
            pos += value.size

    def trainable_span(self) -> tuple[int, int] | None:
        """(lo, hi) of ``theta`` covering exactly the trainable parameters, or None.

        None means there is nothing to train or a frozen parameter sits between
        trainable ones, so no single slice covers them.
        """
        spans = [(self.offsets[f"{l.name}.{k}"], l.trainable) for l in self.layers for k in l.params]
        live = [i for i, (_, t) in enumerate(spans) if t]
        if not live or len(live) != live[-1] - live[0] + 1:
            return None
        return spans[live[0]][0][0], spans[live[-1]][0][1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{l.name}.{k}": v for l in self.layers for k, v in l.params.items()}

    def frozen_flags(self) -> dict[str, bool]:
        return {l.name: l.frozen for l in self.layers if l.has_params}

    def set_frozen(self, names, frozen: bool = True) -> None:
        names = set(names)
        for layer in self.layers:
            if layer.name in names:
                layer.frozen = frozen

    def trainable_start(self) -> int:
        """Index of the first layer with trainable parameters (len(layers) if none)."""
        for i, layer in enumerate(self.layers):
            if layer.trainable:
                return i
        return len(self.layers)

    def copy(self) -> "Network":
        twin = copy.deepcopy(self)
        twin._flatten()
        return twin

    # ------------------------------------------------------------ compute

    def _prepare(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == len(self.in_shape) - 1 or x.shape == self.in_shape
        if x.shape[-2:] != self.in_shape[-2:]:
            raise ValidationError(f"expected frames of shape {self.in_shape[-2:]}, got {x.shape}")
        return x.reshape((-1,) + self.in_shape), single

    def run(self, x: np.ndarray, start: int = 0, stop: int | None = None, keep: bool = False) -> np.ndarray:
        """Raw pass through ``layers[start:stop]`` (no output activation)."""
        for layer in self.layers[start:stop]:
            x = layer.forward(x, keep)
        return x

    def activate(self, z: np.ndarray) -> np.ndarray:
        return softmax(z) if self.task == CLASSIFY else z[:, 0]

    def forward(self, x) -> np.ndarray:
        """Class probabilities (n, K) or locations (n,); a single frame gives (K,) or a scalar."""
        xb, single = self._prepare(x)
        out = self.activate(self.run(xb))
        return out[0] if single else out

    def extractor_output(self, x) -> np.ndarray:
        xb, _ = self._prepare(x)
        stop = next(i for i, l in enumerate(self.layers) if l.name == "S4") + 1
        return self.run(xb, 0, stop)

    def loss_and_grads(self, x, target, start: int = 0, prepared: bool = False):
        """Forward + backward on a batch.

        ``x`` is the input to ``layers[start]`` when ``prepared`` is set (used
        to skip a frozen prefix). Returns (loss, outputs, grads) where grads
        maps ``"<layer>.<param>"`` to arrays for every non-frozen parameter.
        """
        if not prepared:
            x, _ = self._prepare(x)
        z = self.run(x, start, keep=True)
        n = z.shape[0]
        target = np.asarray(target)
        if self.task == CLASSIFY:
            p = softmax(z)
            idx = target.astype(np.int64)
            loss = -np.mean(np.log(np.maximum(p[np.arange(n), idx], 1e-300)))
            dz = p.copy()
            dz[np.arange(n), idx] -= 1.0
            dz /= n
            out = p
        else:
            yhat = z[:, 0]
            err = yhat - target.astype(float)
            loss = float(np.mean(err**2))
            dz = (2.0 / n) * err[:, None]
            out = yhat
        grads = {}
        for i in range(len(self.layers) - 1, start - 1, -1):
            layer = self.layers[i]
            dz, g = layer.backward(dz, need_dx=i > start)
            for k, v in g.items():
                grads[f"{layer.name}.{k}"] = v
        return float(loss), out, grads
