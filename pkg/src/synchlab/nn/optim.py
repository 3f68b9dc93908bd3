"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, TrainingError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_update(value: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                step: int, lr: float, beta1: float, beta2: float, eps: float
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; ``step`` counts from 1. Pure function."""
    if grad.shape != value.shape:
        raise ShapeError(f"adam: grad shape {grad.shape} vs param {value.shape}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for p in self.params:
            self.state.m[id(p)] = np.zeros_like(p.data)
            self.state.v[id(p)] = np.zeros_like(p.data)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        s = self.state
        s.step += 1
        for p in self.params:
            if p.grad is None:
                continue
            if not np.isfinite(p.grad.sum()):
                raise TrainingError("NaN/Inf gradient in Adam step")
            new_value, s.m[id(p)], s.v[id(p)] = adam_update(
                p.data, p.grad, s.m[id(p)], s.v[id(p)], s.step, s.lr, s.beta1, s.beta2, s.eps)
            p.data = new_value.astype(p.data.dtype)
