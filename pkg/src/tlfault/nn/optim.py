from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from . import kernels


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 64
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    seed: int = 0
    loss: str = "cross_entropy"  # or "mse"

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValidationError("epochs must be positive")
        if not self.lr > 0:
            raise ValidationError("learning rate must be positive")
        if self.batch_size <= 0:
            raise ValidationError("batch size must be positive")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValidationError(f"unknown loss {self.loss!r}")

    @classmethod
    def classification(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 64, "loss": "cross_entropy", **kw})

    @classmethod
    def regression(cls, **kw) -> "TrainConfig":
        return cls(**{"epochs": 32, "loss": "mse", **kw})


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def bias_corrections(self, config: TrainConfig) -> tuple[float, float]:
        return 1.0 - config.beta1**self.t, 1.0 - config.beta2**self.t


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              config: TrainConfig, frozen: set[str] = frozenset()) -> None:
    """One bias-corrected Adam update, in place.

    Only keys present in ``grads`` and not in ``frozen`` move; ``frozen``
    holds parameter keys such as ``"C1.W"``.
    """
    state.t += 1
    bc1, bc2 = state.bias_corrections(config)
    for key, g in grads.items():
        if key in frozen:
            continue
        if key not in state.m:
            state.m[key] = np.zeros(g.size)
            state.v[key] = np.zeros(g.size)
        theta = params[key].reshape(-1)
        if not np.shares_memory(theta, params[key]):
            raise ValueError(f"parameter {key} is not contiguous")
        kernels.adam_update(theta, np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                            state.m[key], state.v[key], config.lr, config.beta1, config.beta2,
                            config.eps, bc1, bc2)
