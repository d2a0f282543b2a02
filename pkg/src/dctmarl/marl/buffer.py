"""Ring replay buffer over consecutive steps.

Each row holds one step's features plus the action taken and the reward
received. Transition ``k`` pairs row ``k`` with row ``k + 1``; the final
observation of an episode is stored as a row that is never sampled itself.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import STATE_DIM, FeatureSpec

STEP_FIELDS = ("own", "cand", "cand_x", "held", "held_x", "gate_in", "state", "noise")


@dataclass
class Batch:
    idx: np.ndarray
    obs: dict[str, np.ndarray]
    next_obs: dict[str, np.ndarray]
    actions: np.ndarray
    rewards: np.ndarray
    done: np.ndarray
    time_limit: np.ndarray

    def __len__(self) -> int:
        return len(self.idx)


class ReplayBuffer:
    def __init__(self, capacity: int, spec: FeatureSpec):
        if capacity < 2:
            raise ValueError("replay capacity must be at least 2")
        a, v = spec.n_agents, spec.n_vehicles
        self.capacity = capacity
        shapes = {
            "own": (a, 4), "cand": (a, v), "cand_x": (a, v, spec.nb_dim), "held": (a, v),
            "held_x": (a, v, spec.nb_dim), "gate_in": (a, spec.flat_dim), "state": (a, STATE_DIM),
            "noise": (a, v),
        }
        self.data = {k: np.zeros((capacity,) + s, dtype=bool if k in ("cand", "held") else np.float64)
                     for k, s in shapes.items()}
        self.actions = np.zeros((capacity, a))
        self.rewards = np.zeros((capacity, a))
        self.done = np.zeros(capacity, bool)
        self.time_limit = np.zeros(capacity, bool)
        self.has_action = np.zeros(capacity, bool)
        self.ptr = 0
        self.rows = 0
        self._last = -1

    def __len__(self) -> int:
        """Number of sampleable transitions."""
        return int(self._valid().sum())

    def push_step(self, obs: dict[str, np.ndarray], action=None, reward=None,
                  done: bool = False, time_limit: bool = False) -> int:
        """Store one row. ``action is None`` marks an observation-only row."""
        k = self.ptr
        for name in STEP_FIELDS:
            self.data[name][k] = obs[name]
        self.has_action[k] = action is not None
        self.actions[k] = 0.0 if action is None else action
        self.rewards[k] = 0.0 if reward is None else reward
        self.done[k] = done
        self.time_limit[k] = time_limit
        self._last = k
        self.ptr = (k + 1) % self.capacity
        self.rows = min(self.rows + 1, self.capacity)
        return k

    def _valid(self) -> np.ndarray:
        valid = self.has_action.copy()
        if self._last >= 0:
            valid[self._last] = False    # its successor is not written yet
        return valid

    def valid_indices(self) -> np.ndarray:
        return np.flatnonzero(self._valid())

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx_pool = self.valid_indices()
        if len(idx_pool) == 0:
            raise ValueError("no complete transitions to sample")
        idx = idx_pool[rng.integers(0, len(idx_pool), size=batch_size)]
        nxt = (idx + 1) % self.capacity
        return Batch(idx, {k: v[idx] for k, v in self.data.items()},
                     {k: v[nxt] for k, v in self.data.items()},
                     self.actions[idx], self.rewards[idx], self.done[idx], self.time_limit[idx])
