"""Differentiable building blocks used by the policy, critic, gate and prior."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor, _make, _sigmoid, as_tensor, concat, matmul, relu, tanh


def softmax(z, temp: float = 1.0, axis: int = -1) -> Tensor:
    """Temperature softmax with max-subtraction."""
    if not temp > 0:
        raise ValueError("softmax temperature must be positive")
    z = as_tensor(z)
    x = z.data / temp
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((s * (g - (g * s).sum(axis=axis, keepdims=True))) / temp,)

    return _make(s, (z,), backward)


def log_softmax(z, temp: float = 1.0, axis: int = -1) -> Tensor:
    z = as_tensor(z)
    x = z.data / temp
    m = x.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out = x - lse
    s = np.exp(out)

    def backward(g):
        return ((g - s * g.sum(axis=axis, keepdims=True)) / temp,)

    return _make(out, (z,), backward)


def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``, gradient of ``soft``."""
    return _make(np.asarray(hard, dtype=np.float64), (soft,), lambda g: (g,))


def gumbel_softmax_sample(logits, temp: float, rng: np.random.Generator, hard: bool = False,
                          axis: int = -1, noise: np.ndarray | None = None) -> Tensor:
    """Relaxed categorical sample ``softmax((logits + g) / temp)``.

    With ``hard=True`` the forward value is the one-hot argmax of the soft
    sample and the backward pass uses the soft sample's gradient.
    """
    logits = as_tensor(logits)
    g = sample_gumbel(rng, logits.shape) if noise is None else noise
    soft = softmax(logits + Tensor(g), temp, axis=axis)
    if not hard:
        return soft
    idx = np.argmax(soft.data, axis=axis)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, np.expand_dims(idx, axis), 1.0, axis=axis)
    return straight_through(onehot, soft)


def attention_pool(query, keys, values, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention of one query over a set of key/value rows.

    Shapes: query ``(..., d)``, keys ``(..., m, d)``, values ``(..., m, dv)``.
    ``mask`` (``(..., m)`` booleans) removes entries from the softmax.
    """
    query, keys, values = as_tensor(query), as_tensor(keys), as_tensor(values)
    if keys.shape[-2] == 0:
        raise ValueError("attention over an empty key set")
    if keys.shape[-2] != values.shape[-2]:
        raise ValueError("key and value counts differ")
    d = keys.shape[-1]
    # elementwise products: many tiny batched matmuls are far slower in numpy
    q = query.reshape(query.shape[:-1] + (1, d))
    scores = (keys * q).sum(axis=-1) * (1.0 / np.sqrt(d))
    if mask is not None:
        scores = scores + Tensor(np.where(mask, 0.0, -1e30))
    w = softmax(scores, 1.0, axis=-1)
    return (values * w.reshape(w.shape + (1,))).sum(axis=-2)


def kl_divergence(p, q, atol: float = 1e-9) -> float:
    """``sum p ln(p/q)`` with ``0 ln 0 = 0``."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    if abs(p.sum() - 1.0) > atol or abs(q.sum() - 1.0) > atol:
        raise ValueError("inputs must each sum to 1")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative probability")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("q has zero mass where p is positive")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def bce_with_logits(logits: Tensor, y: np.ndarray, weight: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy ``-[y ln b + (1 - y) ln(1 - b)]``, ``b = sigmoid(logits)``.

    ``weight`` (same shape, non-negative) turns the mean into a weighted mean.
    """
    x = logits.data
    y = np.broadcast_to(np.asarray(y, dtype=np.float64), x.shape)
    w = np.ones_like(x) if weight is None else np.broadcast_to(np.asarray(weight, dtype=np.float64), x.shape)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross-entropy over an empty selection")
    # ln(1 + e^x) - y x, stable for large |x|
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))) - y * x

    def backward(g):
        return (g * w * (_sigmoid(x) - y) / total,)

    return _make(np.asarray((w * out).sum() / total), (logits,), backward)


@dataclass
class MlpParams:
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator,
             last_scale: float = 1.0, stack: int | None = None) -> "MlpParams":
        """Glorot-uniform weights, zero biases.

        With ``stack=A`` every layer holds ``A`` independent copies: weights
        ``(A, in, out)`` and biases ``(A, 1, out)``, applied to inputs shaped
        ``(..., A, rows, in)``.
        """
        ws, bs = [], []
        lead = () if stack is None else (stack,)
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / (a + b))
            if k == len(sizes) - 2:
                bound *= last_scale
            ws.append(Tensor.param(rng.uniform(-bound, bound, lead + (a, b))))
            bs.append(Tensor.param(np.zeros(lead + ((1, b) if stack else (b,)))))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, sizes: Sequence[int], stack: int | None = None) -> "MlpParams":
        lead = () if stack is None else (stack,)
        return cls([Tensor.param(np.zeros(lead + (a, b))) for a, b in zip(sizes[:-1], sizes[1:])],
                   [Tensor.param(np.zeros(lead + ((1, b) if stack else (b,)))) for b in sizes[1:]])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[-2]] + [w.shape[-1] for w in self.weights]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{k}"] = w
            out[f"{prefix}.b{k}"] = b
        return out


_ACTIVATIONS = {"relu": relu, "tanh": tanh}


def mlp_forward(params: MlpParams, x, activation: str = "relu") -> Tensor:
    """Affine layers with ``activation`` between them; the last layer is linear."""
    act = _ACTIVATIONS[activation]
    h = as_tensor(x)
    width = params.weights[0].shape[-2]
    if h.shape[-1] != width:
        raise ValueError(f"input width {h.shape[-1]} does not match layer width {width}")
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = linear(h, w, b)
        if k < last:
            h = act(h)
    return h


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    squeeze = x.ndim == 1
    if squeeze:
        x = x.reshape((1, x.shape[0]))
    h = matmul(x, w)
    if b is not None:
        h = h + b
    if squeeze:
        h = h.reshape((h.shape[-1],))
    return h


__all__ = [
    "softmax", "log_softmax", "gumbel_softmax_sample", "straight_through", "sample_gumbel",
    "attention_pool", "kl_divergence", "bce_with_logits", "MlpParams", "mlp_forward", "linear",
    "concat",
]
