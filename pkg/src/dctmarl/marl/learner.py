"""Centralised critics, decentralised actors and the learned graph policy.

One ``Learner`` owns every network of the platoon:

* policy (per-agent message encoder + squashed Gaussian head) and its target,
* attention critic (one per agent) and its target,
* gate network scoring each delivered sender,
* prior network predicting which senders influence the agent's value.

Execution needs only the gate, prior and policy; ``execution_mode`` turns
critic access into an error so that deployment code provably never peeks at
the global state.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..config import Config
from ..nn import Adam, CheckpointError, Tensor, bce_with_logits, no_grad
from ..nn.tensor import _sigmoid, sigmoid, softplus
from ..topology import (
    GateNet,
    PriorNet,
    action_bins,
    causal_influence_batch,
    full_topology,
    gated_keys,
    influence_confidence,
    logit,
    select_from_logits,
)
from .buffer import Batch
from .features import STATE_DIM, FeatureSpec, StepFeatures
from .networks import AttentionCritic, PolicyNet, soft_update

QFn = Callable[[Tensor, Tensor], Tensor]


class ExecutionModeError(RuntimeError):
    pass


class NonFiniteLoss(FloatingPointError):
    def __init__(self, stats: dict):
        super().__init__(f"non-finite training statistic: {stats}")
        self.stats = stats


@dataclass
class Decision:
    u: np.ndarray          # (A,)
    adjacency: np.ndarray  # (V, V) bool, rows are receivers
    noise: np.ndarray      # (A, V) gate noise used for the selection


def td_target(reward, q_next, gamma: float, terminal) -> np.ndarray:
    """``r + gamma * Q'`` with no bootstrap from terminal transitions."""
    reward = np.asarray(reward, dtype=float)
    keep = 1.0 - np.asarray(terminal, dtype=float)
    return reward + gamma * keep * np.asarray(q_next, dtype=float)


def bernoulli_entropy(x: Tensor) -> Tensor:
    """Entropy of ``Bernoulli(sigmoid(x))``: ``softplus(x) - sigmoid(x) x``."""
    return softplus(x) - sigmoid(x) * x


def _named_arrays(named: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in named.items()}


class Learner:
    def __init__(self, cfg: Config, rng: np.random.Generator, spec: FeatureSpec | None = None):
        self.cfg = cfg
        self.spec = spec or FeatureSpec.from_config(cfg)
        sc, top, tr = cfg.scenario, cfg.topology, cfg.train
        a, v = self.spec.n_agents, self.spec.n_vehicles
        self.fixed_topology = tr.ablation == "fixed-topology"
        self.policy = PolicyNet(self.spec, tr.hidden_width, top.encoder_width, rng, sc.u_min, sc.u_max)
        self.target_policy = PolicyNet(self.spec, tr.hidden_width, top.encoder_width, rng, sc.u_min, sc.u_max)
        self.target_policy.copy_from(self.policy)
        self._critic = AttentionCritic(self.spec, tr.hidden_width, rng, self.spec.u_scale)
        self._target_critic = AttentionCritic(self.spec, tr.hidden_width, rng, self.spec.u_scale)
        self._target_critic.copy_from(self._critic)
        self.gate = GateNet(self.spec.flat_dim, v, top.gate_width, rng, n_agents=a)
        self.prior = PriorNet(self.spec.flat_dim, v, top.gate_width, rng, n_agents=a)

        self.opt_policy = Adam(self.policy.parameters(), tr.lr_actor)
        self.opt_critic = Adam(self._critic.parameters(), tr.lr_critic)
        self.opt_gate = Adam(self.gate.parameters(), tr.lr_gate)
        self.opt_prior = Adam(self.prior.parameters(), tr.lr_prior)

        self.bins = action_bins(sc, top.action_bins)
        # the prior scores follower partners only; the leader slot gets no offset
        self.prior_mask = np.zeros((a, v), bool)
        self.prior_mask[:, 1:] = True
        self.prior_mask[np.arange(a), np.arange(1, v)] = False
        self.updates = 0
        self.execution = False

    # -- execution-mode guard --------------------------------------------------
    @property
    def critic(self) -> AttentionCritic:
        if self.execution:
            raise ExecutionModeError("critic is unavailable in execution mode")
        return self._critic

    @property
    def target_critic(self) -> AttentionCritic:
        if self.execution:
            raise ExecutionModeError("critic is unavailable in execution mode")
        return self._target_critic

    def execution_mode(self, on: bool = True) -> "Learner":
        self.execution = on
        return self

    # -- acting ------------------------------------------------------------------
    def prior_offsets(self, gate_in: np.ndarray) -> np.ndarray:
        """Logit offsets from the prior confidences, zero outside follower partners."""
        with no_grad():
            conf = _sigmoid(self.prior.logits_all(gate_in).data)
        return np.where(self.prior_mask, logit(conf), 0.0)

    def decide(self, feat: StepFeatures, rng: np.random.Generator | None, explore: bool = True) -> Decision:
        """Select partners and an action for every follower from local features only.

        ``explore=False`` uses zero gate noise and the policy mean.
        """
        a, v = self.spec.n_agents, self.spec.n_vehicles
        if self.fixed_topology:
            adj = full_topology(feat.delivered, feat.in_range)
            noise = np.zeros((a, v))
        else:
            with no_grad():
                gl = self.gate.logits(feat.gate_in).data
            logits = np.zeros((v, v))
            logits[1:] = gl + self.prior_offsets(feat.gate_in)
            sel = select_from_logits(logits, None, feat.delivered, feat.in_range, self.cfg.topology,
                                     rng, noise=None if explore else np.zeros((v, v)))
            adj, noise = sel.adjacency, sel.noise[1:]
        chosen = adj[1:]
        with no_grad():
            c = self.policy.message(chosen.astype(float), chosen.any(axis=1), feat.cand_x, feat.held,
                                    feat.held_x)
            mean, log_std = self.policy.distribution(feat.own, c)
            if explore:
                u, _ = self.policy.sample(mean, log_std, rng.standard_normal(a))
            else:
                u = self.policy.deterministic(mean)
        return Decision(np.array(u.data), adj, noise)

    # -- batched pieces ------------------------------------------------------------
    def _keys(self, obs: dict[str, np.ndarray], with_grad: bool):
        """Hard selection, straight-through keys and gate logits for stored steps."""
        cand = obs["cand"]
        if self.fixed_topology:
            return cand, Tensor(cand.astype(float)), None
        x = self.gate.logits(obs["gate_in"]) + Tensor(self.prior_offsets(obs["gate_in"]))
        if not with_grad:
            x = Tensor(x.data)
        hard, keys = gated_keys(x, cand, self.cfg.topology.m_keys, self.cfg.topology.gumbel_temp,
                                obs["noise"])
        return hard, keys, x

    def _policy_out(self, net: PolicyNet, obs, hard, keys):
        c = net.message(keys, hard.any(axis=-1), obs["cand_x"], obs["held"], obs["held_x"])
        return net.distribution(obs["own"], c)

    def replaced_q(self, q_fn: QFn, state: np.ndarray, actions: np.ndarray, u: Tensor) -> Tensor:
        """``Q_i(s, u_i, u_-i)`` for every agent ``i``: ``(B, A)``.

        Critic ``i`` sees the stored joint action with agent ``i``'s entry
        swapped for ``u[:, i]``.
        """
        b, a = actions.shape
        eye = np.eye(a)
        joint = Tensor(actions[:, None, :] * (1.0 - eye)) + u.reshape((b, 1, a)) * Tensor(eye)
        return q_fn(state, joint)

    # -- critic ------------------------------------------------------------------
    def compute_targets(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        tr = self.cfg.train
        nxt = batch.next_obs
        with no_grad():
            hard, keys, _ = self._keys(nxt, with_grad=False)
            mean, log_std = self._policy_out(self.target_policy, nxt, hard, keys)
            u_next, _ = self.target_policy.sample(mean, log_std, rng.standard_normal(mean.shape))
            q_next = self.target_critic(nxt["state"], u_next).data
        terminal = batch.done & ~(batch.time_limit & tr.bootstrap_time_limit)
        return td_target(tr.reward_scale * batch.rewards, q_next, tr.gamma, terminal[:, None])

    def critic_step(self, state: np.ndarray, actions: np.ndarray, y: np.ndarray) -> np.ndarray:
        """One optimiser step on the squared TD error; returns the pre-step per-agent loss."""
        critic = self.critic
        self.opt_critic.zero_grad()
        q = critic(state, actions)
        diff = q - Tensor(y)
        loss = (diff * diff).mean(axis=0).sum()
        loss.backward()
        self.opt_critic.step()
        return ((q.data - y) ** 2).mean(axis=0)

    def update_critic(self, batch: Batch, rng: np.random.Generator) -> np.ndarray:
        y = self.compute_targets(batch, rng)
        return self.critic_step(batch.obs["state"], batch.actions, y)

    # -- policy and gate -----------------------------------------------------------
    def actor_objective(self, obs: dict[str, np.ndarray], actions: np.ndarray, eps: np.ndarray,
                        q_fn: QFn | None = None, alpha: float | None = None) -> tuple[Tensor, dict]:
        """Summed over agents, batch-mean ``Q_i - alpha log pi_i + alpha H(gate_i)``."""
        alpha = self.cfg.train.alpha_entropy if alpha is None else alpha
        q_fn = q_fn or self.critic
        hard, keys, x = self._keys(obs, with_grad=True)
        mean, log_std = self._policy_out(self.policy, obs, hard, keys)
        u, logp = self.policy.sample(mean, log_std, eps)
        q = self.replaced_q(q_fn, obs["state"], actions, u)
        obj = (q - logp * alpha).mean(axis=0).sum()
        stats = {"q": float(q.data.mean()), "log_pi": float(logp.data.mean()),
                 "log_std": float(log_std.data.mean()), "links": float(hard.sum(axis=-1).mean())}
        if x is not None:
            h = bernoulli_entropy(x) * Tensor(obs["cand"].astype(float))
            obj = obj + h.sum(axis=-1).mean(axis=0).sum() * alpha
            stats["gate_entropy"] = float(h.data.sum(axis=-1).mean())
        return obj, stats

    def update_actor(self, batch: Batch, rng: np.random.Generator, q_fn: QFn | None = None) -> dict:
        """Ascend the actor objective for the policy and the gate in one backward pass."""
        frozen = self.critic.parameters()
        for p in frozen:
            p.requires_grad = False
        try:
            self.opt_policy.zero_grad()
            self.opt_gate.zero_grad()
            obj, stats = self.actor_objective(batch.obs, batch.actions,
                                              rng.standard_normal(batch.actions.shape), q_fn)
            (-obj).backward()
        finally:
            for p in frozen:
                p.requires_grad = True
        self.opt_policy.step()
        if not self.fixed_topology:
            self.opt_gate.step()
        stats["objective"] = obj.item()
        return stats

    # -- prior -------------------------------------------------------------------------
    def influence_labels(self, obs: dict[str, np.ndarray], actions: np.ndarray,
                         q_numpy: Callable[[int, np.ndarray, np.ndarray], np.ndarray] | None = None
                         ) -> tuple[np.ndarray, np.ndarray]:
        """Binary influence labels ``(B, A, V)`` and the mask of scored pairs."""
        q_numpy = q_numpy or self.critic.q_numpy
        top = self.cfg.topology
        b, a = actions.shape
        k = len(self.bins)
        ui, uj = np.meshgrid(self.bins, self.bins, indexing="ij")
        labels = np.zeros((b, a, self.spec.n_vehicles))
        state = obs["state"]
        for i in range(a):
            for j in range(a):
                if i == j:
                    continue
                u = np.repeat(actions[:, None, :], k * k, axis=1)
                u[:, :, i] = ui.reshape(-1)
                u[:, :, j] = uj.reshape(-1)
                s = np.repeat(state[:, None], k * k, axis=1).reshape(b * k * k, a, STATE_DIM)
                q = q_numpy(i, s, u.reshape(b * k * k, a)).reshape(b, k, k)
                score = causal_influence_batch(q, top.q_softmax_temp_lambda)
                labels[:, i, j + 1] = influence_confidence(score) >= top.prior_threshold_delta
        return labels, np.broadcast_to(self.prior_mask, labels.shape)

    def update_prior(self, batch: Batch, q_numpy=None) -> float:
        if self.spec.n_agents < 2:
            return 0.0
        labels, mask = self.influence_labels(batch.obs, batch.actions, q_numpy)
        self.opt_prior.zero_grad()
        loss = bce_with_logits(self.prior.logits_all(batch.obs["gate_in"]), labels, mask)
        loss.backward()
        self.opt_prior.step()
        return loss.item()

    # -- one learner iteration ----------------------------------------------------------
    def soft_update_targets(self) -> None:
        beta = self.cfg.train.beta_soft_update
        soft_update(self._critic, self._target_critic, beta)
        soft_update(self.policy, self.target_policy, beta)

    def update(self, batch: Batch, rng: np.random.Generator, prior_batch: Batch | None = None) -> dict:
        critic_loss = self.update_critic(batch, rng)
        stats = self.update_actor(batch, rng)
        stats["critic_loss"] = [float(x) for x in critic_loss]
        self.updates += 1
        if prior_batch is not None and not self.fixed_topology:
            stats["prior_loss"] = self.update_prior(prior_batch)
        self.soft_update_targets()
        flat = [stats["objective"], *stats["critic_loss"], stats.get("prior_loss", 0.0)]
        if not np.all(np.isfinite(flat)):
            raise NonFiniteLoss(stats)
        return stats

    # -- persistence --------------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.policy.arrays("policy"))
        out.update(self.target_policy.arrays("target_policy"))
        out.update(self._critic.arrays("critic"))
        out.update(self._target_critic.arrays("target_critic"))
        out.update(_named_arrays(self.gate.named("gate")))
        out.update(_named_arrays(self.prior.named("prior")))
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Load a checkpoint; any missing, extra or mis-shaped array is rejected."""
        named = {}
        named.update(self.policy.named("policy"))
        named.update(self.target_policy.named("target_policy"))
        named.update(self._critic.named("critic"))
        named.update(self._target_critic.named("target_critic"))
        named.update(self.gate.named("gate"))
        named.update(self.prior.named("prior"))
        if set(named) != set(arrays):
            missing = sorted(set(named) - set(arrays))
            extra = sorted(set(arrays) - set(named))
            raise CheckpointError(f"checkpoint does not match the network layout "
                                  f"(missing {missing[:3]}, unexpected {extra[:3]})")
        for k, p in named.items():
            if arrays[k].shape != p.data.shape:
                raise CheckpointError(f"{k}: checkpoint shape {arrays[k].shape} does not match {p.data.shape}")
        for k, p in named.items():
            p.data = np.array(arrays[k], dtype=np.float64)

    def meta(self) -> dict:
        s = self.spec
        return {"n_agents": s.n_agents, "n_vehicles": s.n_vehicles, "hidden_width": self.cfg.train.hidden_width,
                "encoder_width": self.cfg.topology.encoder_width, "gate_width": self.cfg.topology.gate_width,
                "ablation": self.cfg.train.ablation, "updates": self.updates}
