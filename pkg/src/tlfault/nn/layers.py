from __future__ import annotations

import numpy as np

from . import kernels


class Layer:
    """Base layer. Parameters live in ``params``; ``frozen`` blocks updates.

    Once a layer belongs to a Network its parameter arrays are views into the
    network's flat buffer, so they must be written in place, never rebound.
    """

    has_params = False

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.frozen = False
        self._cache = None

    @property
    def trainable(self) -> bool:
        return self.has_params and not self.frozen

    def init(self, rng: np.random.Generator) -> None:
        pass

    def output_shape(self, in_shape: tuple) -> tuple:
        raise NotImplementedError

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        """Returns (dx, grads). ``grads`` is empty for frozen or parameterless layers."""
        raise NotImplementedError


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2D(Layer):
    """Valid 3x3-style convolution followed by ReLU."""

    has_params = True

    def __init__(self, name, in_ch, out_ch, kernel, relu=True):
        super().__init__(name)
        self.in_ch, self.out_ch, self.kernel, self.relu = in_ch, out_ch, kernel, relu
        self.params = {
            "W": np.zeros((out_ch, in_ch, kernel, kernel)),
            "b": np.zeros(out_ch),
        }

    def init(self, rng):
        fan_in = self.in_ch * self.kernel * self.kernel
        self.params["W"][...] = _he_uniform(rng, self.params["W"].shape, fan_in)
        self.params["b"][...] = 0.0

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_ch or h < self.kernel or w < self.kernel:
            raise ValueError(f"{self.name}: cannot take input {in_shape}")
        return (self.out_ch, h - self.kernel + 1, w - self.kernel + 1)

    def forward(self, x, keep=False):
        z = kernels.conv2d_forward(x, self.params["W"], self.params["b"])
        y = np.maximum(z, 0.0) if self.relu else z
        if keep:
            self._cache = (x, y)
        return y

    def backward(self, dy, need_dx=True):
        x, y = self._cache
        if self.relu:
            dy = dy * (y > 0)
        if self.frozen:
            if not need_dx:
                return None, {}
            dx, _, _ = kernels.conv2d_backward(x, self.params["W"], dy, True)
            return dx, {}
        dx, dw, db = kernels.conv2d_backward(x, self.params["W"], dy, need_dx)
        return dx, {"W": dw, "b": db}


class AvgPool2D(Layer):
    def __init__(self, name, size, stride):
        super().__init__(name)
        self.size, self.stride = size, stride

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if h < self.size or w < self.size:
            raise ValueError(f"{self.name}: cannot take input {in_shape}")
        return (c, (h - self.size) // self.stride + 1, (w - self.size) // self.stride + 1)

    def forward(self, x, keep=False):
        if keep:
            self._cache = x.shape
        return kernels.avgpool_forward(x, self.size, self.stride)

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None, {}
        return kernels.avgpool_backward(dy, self._cache, self.size, self.stride), {}


class Flatten(Layer):
    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, keep=False):
        if keep:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, need_dx=True):
        return (dy.reshape(self._cache) if need_dx else None), {}


class Dense(Layer):
    has_params = True

    def __init__(self, name, n_in, n_out, relu=True):
        super().__init__(name)
        self.n_in, self.n_out, self.relu = n_in, n_out, relu
        self.params = {"W": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}

    def init(self, rng):
        self.params["W"][...] = _he_uniform(rng, (self.n_in, self.n_out), self.n_in)
        self.params["b"][...] = 0.0

    def output_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ValueError(f"{self.name}: expected input ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def forward(self, x, keep=False):
        z = x @ self.params["W"] + self.params["b"]
        y = np.maximum(z, 0.0) if self.relu else z
        if keep:
            self._cache = (x, y)
        return y

    def backward(self, dy, need_dx=True):
        x, y = self._cache
        if self.relu:
            dy = dy * (y > 0)
        dx = dy @ self.params["W"].T if need_dx else None
        if self.frozen:
            return dx, {}
        return dx, {"W": x.T @ dy, "b": dy.sum(axis=0)}
