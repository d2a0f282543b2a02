"""Per-agent policy and attention critic, stacked along a leading agent axis.

Every weight tensor has shape ``(A, ...)`` so a single batched matmul serves
all agents while their parameters (and Adam moments) stay independent.
"""
from __future__ import annotations

import math

import numpy as np

from ..nn import MlpParams, Tensor, attention_pool, concat, mlp_forward
from ..nn.tensor import matmul, relu, softplus, tanh
from .features import OWN_DIM, STATE_DIM, FeatureSpec

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
INIT_LOG_STD = -1.0
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class Module:
    def named(self, prefix: str) -> dict[str, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.named("x").values())

    def arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named(prefix).items()}

    def load_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.named(prefix).items():
            if k not in arrays:
                raise KeyError(k)
            if arrays[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} does not match {p.data.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    def copy_from(self, other: "Module") -> None:
        for p, q in zip(self.parameters(), other.parameters()):
            p.data = q.data.copy()


def soft_update(online: Module, target: Module, beta: float) -> None:
    """``target <- beta * online + (1 - beta) * target``."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("soft-update rate must lie in (0, 1]")
    for o, t in zip(online.parameters(), target.parameters()):
        if o.data.shape != t.data.shape:
            raise ValueError("online and target parameters differ in shape")
        t.data = beta * o.data + (1.0 - beta) * t.data


def distance_kernel(spec: FeatureSpec) -> np.ndarray:
    """Unnormalised ``2**-|i-j|`` for follower rows ``i = 1..A`` and vehicle columns."""
    i = np.arange(1, spec.n_agents + 1)[:, None]
    j = np.arange(spec.n_vehicles)[None, :]
    return 0.5 ** np.abs(i - j).astype(float)


# -- policy ----------------------------------------------------------------------


class PolicyNet(Module):
    """Message encoder plus tanh-squashed Gaussian head.

    ``c_i`` is the distance-weighted sum of encoded neighbour rows, weighted by
    the gate keys (selected branch) or by the held mask when the agent
    selected nobody; the head maps ``[own, c_i]`` to mean and log-std.
    """

    def __init__(self, spec: FeatureSpec, hidden: int, enc_width: int, rng: np.random.Generator,
                 u_min: float, u_max: float):
        a = spec.n_agents
        self.spec = spec
        self.enc_out = max(enc_width // 2, 1)
        self.encoder = MlpParams.init([spec.nb_dim, enc_width, self.enc_out], rng, stack=a)
        self.head = MlpParams.init([OWN_DIM + self.enc_out, hidden, hidden, 2], rng, last_scale=0.1, stack=a)
        raw = math.atanh(2 * (INIT_LOG_STD - LOG_STD_MIN) / (LOG_STD_MAX - LOG_STD_MIN) - 1)
        self.head.biases[-1].data[..., 1] = raw
        self.center = 0.5 * (u_max + u_min)
        self.scale = 0.5 * (u_max - u_min)
        self.kernel = distance_kernel(spec)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.encoder.named(f"{prefix}.encoder"), **self.head.named(f"{prefix}.head")}

    def encode(self, x) -> Tensor:
        """``(..., A, V, nb)`` -> ``(..., A, V, enc_out)``."""
        return mlp_forward(self.encoder, x, "relu")

    def message(self, keys, any_sel: np.ndarray, cand_x: np.ndarray, held: np.ndarray,
                held_x: np.ndarray) -> Tensor:
        """Aggregate message ``c`` of shape ``(..., A, enc_out)``.

        ``keys`` (``(..., A, V)``, Tensor or array) weight the candidate rows;
        rows of agents with ``any_sel`` False use the held table instead.
        """
        keys = keys if isinstance(keys, Tensor) else Tensor(np.asarray(keys, float))
        w = keys * Tensor(self.kernel)
        num = (self.encode(Tensor(cand_x)) * w.reshape(w.shape + (1,))).sum(axis=-2)
        den = w.sum(axis=-1, keepdims=True)
        sel = any_sel.astype(float)[..., None]
        c_sel = num / (den + (1.0 - sel))
        hw = np.asarray(held, float) * self.kernel
        hden = hw.sum(axis=-1, keepdims=True)
        hw = hw / np.where(hden > 0, hden, 1.0)
        c_held = (self.encode(Tensor(held_x)) * Tensor(hw[..., None])).sum(axis=-2)
        return c_sel * Tensor(sel) + c_held * Tensor(1.0 - sel)

    def distribution(self, own, c: Tensor) -> tuple[Tensor, Tensor]:
        """Mean and log-std of the pre-squash Gaussian, each ``(..., A)``."""
        h = concat([Tensor(np.asarray(own, float)) if not isinstance(own, Tensor) else own, c], axis=-1)
        h = h.reshape(h.shape[:-1] + (1, h.shape[-1]))
        out = mlp_forward(self.head, h, "relu")
        out = out.reshape(out.shape[:-2] + (2,))
        mean = out[..., 0]
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (tanh(out[..., 1]) + 1.0)
        return mean, log_std

    def sample(self, mean: Tensor, log_std: Tensor, eps: np.ndarray) -> tuple[Tensor, Tensor]:
        """Reparameterised action and its log-density (per agent)."""
        z = mean + log_std.exp() * Tensor(eps)
        u = tanh(z) * self.scale + self.center
        # log(1 - tanh(z)^2) = 2 (log 2 - z - softplus(-2 z))
        log_det = (math.log(2.0) - z - softplus(z * -2.0)) * 2.0
        logp = Tensor(-0.5 * eps * eps - _HALF_LOG_2PI - math.log(self.scale)) - log_std - log_det
        return u, logp

    def deterministic(self, mean: Tensor) -> Tensor:
        return tanh(mean) * self.scale + self.center


def squashed_log_prob(u: np.ndarray, mean: float, log_std: float, center: float, scale: float) -> np.ndarray:
    """Log-density of the squashed Gaussian at actions ``u`` inside the bounds."""
    y = (np.asarray(u, float) - center) / scale
    z = np.arctanh(y)
    std = math.exp(log_std)
    base = -0.5 * ((z - mean) / std) ** 2 - log_std - _HALF_LOG_2PI
    return base - math.log(scale) - np.log1p(-y * y)


# -- critic ----------------------------------------------------------------------


class AttentionCritic(Module):
    """``Q_i(s, u)`` for every agent ``i``.

    Critic ``i`` embeds every agent's (state, action) pair with its own
    encoder; its own embedding queries the others' embeddings through
    scaled dot-product attention, and a two-layer head maps
    ``[own embedding, pooled]`` to a scalar.
    """

    def __init__(self, spec: FeatureSpec, hidden: int, rng: np.random.Generator, u_scale: float):
        a = spec.n_agents
        self.spec = spec
        self.att = max(hidden // 2, 1)
        self.u_scale = u_scale
        self.enc = MlpParams.init([STATE_DIM + 1, hidden], rng, stack=a)
        bound = math.sqrt(6.0 / (hidden + self.att))
        self.w_q = Tensor.param(rng.uniform(-bound, bound, (a, hidden, self.att)))
        self.w_k = Tensor.param(rng.uniform(-bound, bound, (a, hidden, self.att)))
        self.w_v = Tensor.param(rng.uniform(-bound, bound, (a, hidden, self.att)))
        self.head = MlpParams.init([hidden + self.att, hidden, 1], rng, stack=a)
        self._diag = np.arange(a)
        self._mask = ~np.eye(a, dtype=bool)

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.enc.named(f"{prefix}.enc"), f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k,
                f"{prefix}.w_v": self.w_v, **self.head.named(f"{prefix}.head")}

    def __call__(self, state, actions) -> Tensor:
        """``Q (B, A)`` from ``state (B, A, STATE_DIM)`` and joint actions.

        ``actions`` is either one joint action per sample, ``(B, A)``, or one
        per critic, ``(B, A, A)`` with row ``i`` fed to critic ``i``.
        """
        s = np.asarray(state.data if isinstance(state, Tensor) else state, dtype=float)
        u = actions if isinstance(actions, Tensor) else Tensor(np.asarray(actions, float))
        a = self.spec.n_agents
        if s.ndim != 3 or s.shape[1:] != (a, STATE_DIM) or u.shape not in (s.shape[:2], s.shape[:2] + (a,)):
            raise ValueError(f"critic expects state (B, {a}, {STATE_DIM}) and actions (B, {a}) or "
                             f"(B, {a}, {a}); got {s.shape} and {u.shape}")
        b = s.shape[0]
        if u.ndim == 2:
            u = u.reshape((b, 1, a))
        u = u * Tensor(np.ones((1, a, 1)))
        sa = concat([Tensor(np.broadcast_to(s[:, None], (b, a, a, STATE_DIM))),
                     (u * (1.0 / self.u_scale)).reshape((b, a, a, 1))], axis=-1)
        e = relu(matmul(sa, self.enc.weights[0]) + self.enc.biases[0])   # (B, A, A, H)
        own = e[:, self._diag, self._diag]                                 # (B, A, H)
        if a > 1:
            q = matmul(own.reshape((b, a, 1, own.shape[-1])), self.w_q).reshape((b, a, self.att))
            k = matmul(e, self.w_k)
            v = relu(matmul(e, self.w_v))
            pooled = attention_pool(q, k, v, np.broadcast_to(self._mask, (b, a, a)))
        else:
            pooled = Tensor(np.zeros((b, a, self.att)))
        h = concat([own, pooled], axis=-1)
        out = mlp_forward(self.head, h.reshape((b, a, 1, h.shape[-1])), "relu")
        return out.reshape((b, a))

    def q_numpy(self, i: int, state: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Plain-numpy forward of critic ``i`` only: ``(N, A, 7), (N, A) -> (N,)``."""
        a = self.spec.n_agents
        n = len(state)
        sa = np.concatenate([state, actions[..., None] / self.u_scale], axis=-1).reshape(n * a, -1)
        e = np.maximum(sa @ self.enc.weights[0].data[i] + self.enc.biases[0].data[i], 0.0)
        h_dim = e.shape[-1]
        own = e.reshape(n, a, h_dim)[:, i]
        if a > 1:
            q = own @ self.w_q.data[i]
            k = (e @ self.w_k.data[i]).reshape(n, a, self.att)
            v = np.maximum(e @ self.w_v.data[i], 0.0).reshape(n, a, self.att)
            scores = (k * q[:, None, :]).sum(axis=-1) / math.sqrt(self.att)
            scores[:, i] = -np.inf
            scores -= scores.max(axis=1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=1, keepdims=True)
            pooled = (w[..., None] * v).sum(axis=1)
        else:
            pooled = np.zeros((n, self.att))
        h = np.concatenate([own, pooled], axis=1)
        h = np.maximum(h @ self.head.weights[0].data[i] + self.head.biases[0].data[i], 0.0)
        return (h @ self.head.weights[1].data[i] + self.head.biases[1].data[i])[:, 0]
