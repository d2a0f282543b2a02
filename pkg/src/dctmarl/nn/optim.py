"""Adam, as a pure step function plus a small stateful wrapper."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class AdamMoments:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamMoments":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def sgd_adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float,
                  moments: AdamMoments, betas: tuple[float, float] = BETAS,
                  eps: float = EPS) -> tuple[list[np.ndarray], AdamMoments]:
    """One bias-corrected Adam update; returns new params and moments, inputs untouched."""
    if len(params) != len(grads) or len(params) != len(moments.m):
        raise ValueError("params, grads and moments differ in length")
    b1, b2 = betas
    t = moments.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, moments.m, moments.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamMoments(new_m, new_v, t)


@dataclass
class Adam:
    params: list[Tensor]
    lr: float
    moments: AdamMoments = field(init=False)

    def __post_init__(self) -> None:
        self.moments = AdamMoments.zeros_like([p.data for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, sign: float = 1.0) -> None:
        """Descend the accumulated gradients (``sign=-1`` ascends)."""
        grads = [np.zeros_like(p.data) if p.grad is None else sign * p.grad for p in self.params]
        new, self.moments = sgd_adam_step([p.data for p in self.params], grads, self.lr, self.moments)
        for p, d in zip(self.params, new):
            p.data = d
