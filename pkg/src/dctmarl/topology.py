"""Dynamic communication topology.

Causal influence between agents is the KL divergence between agent i's
softmax-over-Q action distribution conditioned on agent j's action and the
same distribution with j's action marginalised out. A per-agent prior
network learns to predict which neighbours are influential; a gating network
with straight-through binary Gumbel-Softmax picks at most ``m_keys`` of the
neighbours whose messages actually arrived, and the adjacency row of each
agent marks the picks. Rows are receivers, columns senders; vehicle 0 is
the leader and never receives.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import ScenarioConfig, TopologyConfig
from .nn import MlpParams, Tensor, bce_with_logits, mlp_forward
from .nn.functional import sample_gumbel, straight_through
from .nn.tensor import _sigmoid, matmul, sigmoid, tanh

# -- causal influence ----------------------------------------------------------


def action_bins(cfg: ScenarioConfig, k: int) -> np.ndarray:
    return np.linspace(cfg.u_min, cfg.u_max, k)


def _softmax(x: np.ndarray, lam: float, axis=None) -> np.ndarray:
    z = x / lam
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def action_distribution(q_fn: Callable[[np.ndarray], np.ndarray], bins: np.ndarray,
                        lam: float) -> np.ndarray:
    """Softmax over agent i's discretised actions, other actions held fixed."""
    if not lam > 0:
        raise ValueError("temperature must be positive")
    return _softmax(np.asarray(q_fn(bins), dtype=float), lam)


def _logsumexp(x: np.ndarray, axis) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))


def _column_kl(q: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """For tables ``(N, a, b)``: log P(u_j = b) under the joint softmax and
    KL(P(u_i | u_j = b) || P(u_i)) per column, both ``(N, b)``.

    Worked in log space so vanishing probabilities never produce inf or nan.
    """
    z = q / lam
    log_joint = z - _logsumexp(z, axis=(1, 2))
    log_marg_i = _logsumexp(log_joint, axis=2)           # (N, a, 1)
    log_marg_j = _logsumexp(log_joint, axis=1)           # (N, 1, b)
    log_cond = log_joint - log_marg_j                    # (N, a, b)
    kl = np.sum(np.exp(log_cond) * (log_cond - log_marg_i), axis=1)
    return log_marg_j[:, 0, :], np.maximum(kl, 0.0)


def causal_influence_from_table(q_table: np.ndarray, lam: float,
                                uj_samples: Sequence[int] | None = None) -> float:
    """Influence of agent j on agent i from ``q_table[a, b] = Q(u_i=a, u_j=b)``.

    ``uj_samples`` are bin indices of j's sampled actions; the KL terms are
    averaged over them. Without samples the average is exact under the
    joint softmax's marginal over ``u_j``.
    """
    q = np.asarray(q_table, dtype=float)
    # no (u_i, u_j) interaction means independence: report exactly zero
    interaction = q - q.mean(axis=0) - q.mean(axis=1, keepdims=True) + q.mean()
    if np.max(np.abs(interaction)) <= 1e-12 * max(1.0, np.max(np.abs(q))):
        return 0.0
    log_w, kl = _column_kl(q[None], lam)
    if uj_samples is None:
        total = float(np.sum(np.exp(log_w[0]) * kl[0]))
    else:
        total = float(np.mean(kl[0, list(uj_samples)]))
    return max(total, 0.0)


def causal_influence_batch(q_tables: np.ndarray, lam: float) -> np.ndarray:
    """Exact-expectation influence for a stack of tables ``(N, a, b)`` at once."""
    q = np.asarray(q_tables, dtype=float)
    interaction = q - q.mean(axis=1, keepdims=True) - q.mean(axis=2, keepdims=True) \
        + q.mean(axis=(1, 2), keepdims=True)
    scale = np.maximum(1.0, np.abs(q).max(axis=(1, 2)))
    separable = np.abs(interaction).max(axis=(1, 2)) <= 1e-12 * scale
    log_w, kl = _column_kl(q, lam)
    out = np.maximum(np.sum(np.exp(log_w) * kl, axis=1), 0.0)
    out[separable] = 0.0
    return out


def causal_influence(q_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], i: int, j: int,
                     bins: np.ndarray, lam: float, uj_samples: Sequence[int] | None = None) -> float:
    """``q_fn(ui_grid, uj_grid)`` evaluates agent i's joint Q on broadcast action grids
    with every other agent's action already fixed by the caller."""
    if i == j:
        raise ValueError("self-influence is undefined")
    ui, uj = np.meshgrid(bins, bins, indexing="ij")
    return causal_influence_from_table(q_fn(ui, uj), lam, uj_samples)


def nearest_bin(u: np.ndarray | float, bins: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(u)[..., None] - bins).argmin(axis=-1)


def influence_confidence(kl: np.ndarray | float) -> np.ndarray:
    """Map a non-negative influence score into [0, 1)."""
    return 1.0 - np.exp(-np.asarray(kl, dtype=float))


# -- prior network -------------------------------------------------------------


class PriorNet:
    """Two fully connected layers: (observation, one-hot neighbour id) -> confidence.

    With ``n_agents`` set, one independent network per agent is stored in
    stacked parameters and ``logits_all`` scores every sender for every agent.
    """

    def __init__(self, obs_dim: int, n_vehicles: int, hidden: int,
                 rng: np.random.Generator | None = None, zero: bool = False,
                 n_agents: int | None = None):
        sizes = [obs_dim + n_vehicles, hidden, 1]
        self.n_vehicles = n_vehicles
        self.n_agents = n_agents
        if zero or rng is None:
            self.mlp = MlpParams.zeros(sizes, stack=n_agents)
        else:
            self.mlp = MlpParams.init(sizes, rng, stack=n_agents)

    def parameters(self) -> list[Tensor]:
        return self.mlp.parameters()

    def named(self, prefix: str) -> dict[str, Tensor]:
        return self.mlp.named(prefix)

    def _inputs(self, obs: np.ndarray, ids: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        ids = np.atleast_1d(ids)
        onehot = np.zeros((len(ids), self.n_vehicles))
        onehot[np.arange(len(ids)), ids] = 1.0
        return np.concatenate([obs, onehot], axis=1)

    def logits(self, obs: np.ndarray, ids: np.ndarray) -> Tensor:
        if self.n_agents is not None:
            raise TypeError("stacked prior: use logits_all")
        return mlp_forward(self.mlp, Tensor(self._inputs(obs, ids)), "relu").reshape((-1,))

    def confidence(self, obs: np.ndarray, ids: np.ndarray) -> np.ndarray:
        return _sigmoid(self.logits(obs, ids).data)

    def logits_all(self, obs: np.ndarray) -> Tensor:
        """``obs (..., A, obs_dim)`` -> logits ``(..., A, n_vehicles)``, one per sender id."""
        obs = np.asarray(obs, dtype=float)
        v = self.n_vehicles
        tiled = np.broadcast_to(obs[..., None, :], obs.shape[:-1] + (v, obs.shape[-1]))
        eye = np.broadcast_to(np.eye(v), obs.shape[:-1] + (v, v))
        x = np.concatenate([tiled, eye], axis=-1)
        out = mlp_forward(self.mlp, Tensor(x), "relu")
        return out.reshape(out.shape[:-1])


def prior_confidence(net: PriorNet, o_i: np.ndarray, neighbor_id: int) -> float:
    return float(net.confidence(o_i, np.array([neighbor_id]))[0])


@dataclass
class InfluenceLabelSet:
    obs: np.ndarray        # (B, obs_dim)
    neighbor: np.ndarray   # (B,) vehicle ids
    score: np.ndarray      # (B,) KL influence
    label: np.ndarray      # (B,) 0/1

    @classmethod
    def from_scores(cls, obs, neighbor, score, delta: float) -> "InfluenceLabelSet":
        score = np.asarray(score, dtype=float)
        return cls(np.atleast_2d(obs), np.asarray(neighbor), score,
                   (influence_confidence(score) >= delta).astype(float))

    def __len__(self) -> int:
        return len(self.label)


def prior_loss(net: PriorNet, batch: InfluenceLabelSet) -> tuple[float, list[np.ndarray]]:
    """Mean binary cross-entropy of the prior on labelled pairs, with gradients."""
    if len(batch) == 0:
        raise ValueError("empty label batch")
    params = net.parameters()
    for p in params:
        p.grad = None
    loss = bce_with_logits(net.logits(batch.obs, batch.neighbor), batch.label)
    loss.backward()
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    return loss.item(), grads


# -- distance weighting --------------------------------------------------------


def distance_weights(i: int, neighbors: Sequence[int]) -> np.ndarray:
    """Weights proportional to ``2**-|i - j|`` normalised over the neighbour set."""
    nb = np.asarray(list(neighbors), dtype=int)
    if nb.size == 0:
        raise ValueError("empty neighbour set")
    if np.any(nb == i):
        raise ValueError("agent cannot be its own neighbour")
    raw = 0.5 ** np.abs(i - nb).astype(float)
    return raw / raw.sum()


# -- gating network and selection ----------------------------------------------


class GateNet:
    """``W_v tanh(W_q o + W_k o)``: one logit per potential sender.

    With ``n_agents`` set the three matrices are stacked per agent and
    ``logits`` maps ``(..., A, obs_dim)`` to ``(..., A, n_vehicles)``.
    """

    def __init__(self, obs_dim: int, n_vehicles: int, width: int, rng: np.random.Generator,
                 n_agents: int | None = None):
        lead = () if n_agents is None else (n_agents,)
        b_in = np.sqrt(6.0 / (obs_dim + width))
        b_out = np.sqrt(6.0 / (width + n_vehicles))
        self.n_agents = n_agents
        self.w_q = Tensor.param(rng.uniform(-b_in, b_in, lead + (obs_dim, width)))
        self.w_k = Tensor.param(rng.uniform(-b_in, b_in, lead + (obs_dim, width)))
        self.w_v = Tensor.param(rng.uniform(-b_out, b_out, lead + (width, n_vehicles)))

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.w_k, self.w_v]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_q": self.w_q, f"{prefix}.w_k": self.w_k, f"{prefix}.w_v": self.w_v}

    def logits(self, obs) -> Tensor:
        if self.n_agents is None:
            x = obs if isinstance(obs, Tensor) else Tensor(np.atleast_2d(obs))
            return matmul(tanh(matmul(x, self.w_q) + matmul(x, self.w_k)), self.w_v)
        x = obs if isinstance(obs, Tensor) else Tensor(np.asarray(obs, dtype=float))
        x = x.reshape(x.shape[:-1] + (1, x.shape[-1]))
        out = matmul(tanh(matmul(x, self.w_q) + matmul(x, self.w_k)), self.w_v)
        return out.reshape(out.shape[:-2] + (out.shape[-1],))


def logit(p: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def binary_gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    """Difference of the 'on' and 'off' Gumbel perturbations of a two-way choice."""
    return sample_gumbel(rng, shape) - sample_gumbel(rng, shape)


def gated_keys(logits: Tensor, candidates: np.ndarray, m_keys: int, temp: float,
               noise: np.ndarray) -> tuple[np.ndarray, Tensor]:
    """Hard top-``m`` binary selection with a straight-through soft path.

    ``logits``, ``candidates`` and ``noise`` share shape ``(..., n)``. Returns the
    boolean selection and the key tensor (hard forward, soft backward).
    """
    soft = sigmoid((logits + Tensor(noise)) * (1.0 / temp))
    score = np.where(candidates, soft.data, -np.inf)
    on = candidates & (soft.data > 0.5)
    # keep at most m keys per row: the m highest soft scores among 'on'
    order = np.argsort(-np.where(on, score, -np.inf), axis=-1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(order.shape[-1]), order.shape), axis=-1)
    hard = on & (rank < m_keys)
    keys = straight_through(hard.astype(float), soft)
    return hard, keys


@dataclass
class Selection:
    adjacency: np.ndarray   # (n_veh, n_veh) bool, rows are receivers
    noise: np.ndarray       # (n_veh, n_veh) binary Gumbel noise used per row
    offsets: np.ndarray     # (n_veh, n_veh) prior logit offsets
    candidates: np.ndarray  # (n_veh, n_veh) in range and delivered


def candidate_links(delivered: np.ndarray, in_range: np.ndarray) -> np.ndarray:
    """Links a receiver may select: in range, delivered, not itself, not the leader."""
    cand = np.asarray(delivered, bool) & np.asarray(in_range, bool)
    np.fill_diagonal(cand, False)
    cand[0, :] = False
    return cand


def select_from_logits(gate_logits: np.ndarray, confidences: np.ndarray | None,
                       delivered: np.ndarray, in_range: np.ndarray, cfg: TopologyConfig,
                       rng: np.random.Generator | None, prior_mask: np.ndarray | None = None,
                       noise: np.ndarray | None = None) -> Selection:
    """Hard selection for every follower row from precomputed gate logits.

    ``gate_logits`` and ``confidences`` are ``(n, n)`` with rows as receivers
    (row 0 ignored). Noise is drawn row by row from ``rng`` unless given;
    pass zero noise for noise-free execution.
    """
    n = delivered.shape[0]
    cand = candidate_links(delivered, in_range)
    if noise is None:
        noise = np.zeros((n, n))
        for i in range(1, n):
            noise[i] = binary_gumbel_noise(rng, n)
    offsets = np.zeros((n, n)) if confidences is None else logit(confidences)
    if prior_mask is not None:
        offsets = np.where(prior_mask, offsets, 0.0)
    offsets[0] = 0.0
    lg = Tensor(np.asarray(gate_logits, dtype=float) + offsets)
    hard, _ = gated_keys(lg, cand, cfg.m_keys, cfg.gumbel_temp, noise)
    hard[0] = False
    return Selection(hard, noise, offsets, cand)


def select_topology(gates: dict[int, GateNet], gate_inputs: dict[int, np.ndarray],
                    confidences: dict[int, np.ndarray], delivered: np.ndarray,
                    in_range: np.ndarray, cfg: TopologyConfig, rng: np.random.Generator,
                    prior_mask: np.ndarray | None = None) -> Selection:
    """Pick each follower's communication partners for this step.

    ``confidences[i]`` holds the prior's confidence per sender; senders where
    ``prior_mask[i]`` is False get a neutral (zero) logit offset.
    """
    n = delivered.shape[0]
    logits = np.zeros((n, n))
    conf = np.full((n, n), 0.5)
    for i in sorted(gates):
        logits[i] = gates[i].logits(gate_inputs[i]).data[0]
        if i in confidences:
            conf[i] = confidences[i]
    return select_from_logits(logits, conf, delivered, in_range, cfg, rng, prior_mask)


def full_topology(delivered: np.ndarray, in_range: np.ndarray) -> np.ndarray:
    """Fixed-topology ablation: every in-range delivered link is used."""
    a = np.asarray(delivered, bool) & np.asarray(in_range, bool)
    a = a.copy()
    np.fill_diagonal(a, False)
    a[0, :] = False
    return a


def adjacency_violations(adjacency: np.ndarray, delivered: np.ndarray, in_range: np.ndarray,
                         m_keys: int) -> list[str]:
    out = []
    a = np.asarray(adjacency)
    if a.dtype != bool:
        out.append("adjacency is not boolean")
        a = a.astype(bool)
    if np.any(np.diag(a)):
        out.append("non-zero diagonal")
    rows = a.sum(axis=1)
    if np.any(rows > m_keys):
        out.append(f"row cardinality {rows.max()} exceeds m_keys={m_keys}")
    if np.any(a & ~np.asarray(delivered, bool)):
        out.append("selected link was not delivered")
    if np.any(np.asarray(delivered, bool) & ~np.asarray(in_range, bool)):
        out.append("delivered link out of range")
    return out


ADJ_COLUMNS = ("step", "sender", "receiver", "selected", "delivered")


def write_adjacency_csv(path, adjacency: np.ndarray, delivered: np.ndarray) -> None:
    """``adjacency``/``delivered``: ``(steps, n, n)``, indexed [step, receiver, sender]."""
    adjacency = np.asarray(adjacency, bool)
    delivered = np.asarray(delivered, bool)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ADJ_COLUMNS)
        steps, n, _ = adjacency.shape
        for t in range(steps):
            for r in range(1, n):
                for s in range(n):
                    if s != r:
                        w.writerow([t, s, r, int(adjacency[t, r, s]), int(delivered[t, r, s])])


def read_adjacency_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ADJ_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            rows.append(tuple(int(row[c]) for c in ADJ_COLUMNS))
    if not rows:
        return np.zeros((0, 0, 0), bool), np.zeros((0, 0, 0), bool)
    arr = np.array(rows)
    steps = arr[:, 0].max() + 1
    n = max(arr[:, 1].max(), arr[:, 2].max()) + 1
    sel = np.zeros((steps, n, n), bool)
    dlv = np.zeros((steps, n, n), bool)
    sel[arr[:, 0], arr[:, 2], arr[:, 1]] = arr[:, 3] == 1
    dlv[arr[:, 0], arr[:, 2], arr[:, 1]] = arr[:, 4] == 1
    return sel, dlv


def communication_heatmap(adjacency_trajectories: Sequence[np.ndarray]) -> np.ndarray:
    """Selection frequency per (sender, receiver); leader-as-receiver cells are NaN."""
    trajs = [np.asarray(a, bool) for a in adjacency_trajectories if len(a)]
    if not trajs:
        raise ValueError("no adjacency trajectories")
    stacked = np.concatenate(trajs, axis=0)        # (steps, receiver, sender)
    freq = stacked.mean(axis=0).T.astype(float)     # -> (sender, receiver)
    np.fill_diagonal(freq, np.nan)
    freq[:, 0] = np.nan
    return freq
