"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``TLFAULT_BACKEND=python`` to force the numpy path, or call
:func:`use_backend` at runtime (tests and the benchmark do this).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_IMPLS = {"python": _kernels_py}
if _ckernels is not None:
    _IMPLS["native"] = _ckernels


def available_backends() -> tuple[str, ...]:
    return tuple(_IMPLS)


def _initial() -> str:
    want = os.environ.get("TLFAULT_BACKEND", "").strip().lower()
    if want:
        if want not in _IMPLS:
            raise ImportError(f"TLFAULT_BACKEND={want!r} unavailable; have {sorted(_IMPLS)}")
        return want
    return "native" if "native" in _IMPLS else "python"


_backend = _initial()
_impl = _IMPLS[_backend]


def backend() -> str:
    return _backend


def use_backend(name: str) -> None:
    global _backend, _impl
    if name not in _IMPLS:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(_IMPLS)}")
    _backend, _impl = name, _IMPLS[name]


@contextmanager
def backend_scope(name: str):
    prev = _backend
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    return _impl.conv2d_forward(_c(x), _c(w), _c(b))


def conv2d_backward(x, w, dy, need_dx=True):
    return _impl.conv2d_backward(_c(x), _c(w), _c(dy), need_dx)


def avgpool_forward(x, size, stride):
    return _impl.avgpool_forward(_c(x), size, stride)


def avgpool_backward(dy, x_shape, size, stride):
    return _impl.avgpool_backward(_c(dy), tuple(x_shape), size, stride)


def adam_update(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """Flat-array Adam update in place; all four arrays must be contiguous float64."""
    _impl.adam_update(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2)
