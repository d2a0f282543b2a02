"""Classical constant-time-headway PD follower, used as a simulator sanity baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .marl.features import FeatureSpec, StepFeatures
from .marl.learner import Decision

CONTROLLERS = ("trained", "cthp-pd")


@dataclass
class CthpPdController:
    """``u = kp * e_gap + kd * (v_pred - v_own)`` from on-board ranging.

    Gap error and relative speed come from the local range sensor; only the
    predecessor link is selected, whenever its message arrived.
    """

    spec: FeatureSpec
    u_min: float
    u_max: float
    kp: float = 0.45
    kd: float = 1.2

    def decide(self, feat: StepFeatures, rng=None, explore: bool = False) -> Decision:
        gap_err = feat.state[:, 0] * 5.0
        rel_v = feat.state[:, 1] * 5.0
        u = np.clip(self.kp * gap_err + self.kd * rel_v, self.u_min, self.u_max)
        v = self.spec.n_vehicles
        adj = np.zeros((v, v), bool)
        for i in range(1, v):
            adj[i, i - 1] = feat.cand[i - 1, i - 1]
        return Decision(u, adj, np.zeros((self.spec.n_agents, v)))
