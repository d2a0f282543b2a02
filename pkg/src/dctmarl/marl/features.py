"""Fixed-shape numeric features for the learner.

Per step and follower we build:

* ``own``: local features that do not depend on the topology selection
  (speed, acceleration, previous command, freshest candidate delay).
* ``cand``/``cand_x``: the candidate neighbour table (one row per vehicle
  slot) from messages delivered this step.
* ``held``/``held_x``: the zero-order-hold table the agent would fall back to
  if it selected nobody.
* ``gate_in``: the flat observation of the previous step, input to the gate
  and prior networks.
* ``state``: the true per-agent state used only by the critics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import Config
from ..dynamics import gap_error
from ..environment import NeighborRecord, PlatoonEnv
from ..topology import candidate_links

STATE_DIM = 7
OWN_DIM = 4
SLOT_SUMMARY = 4  # present, spacing error, relative speed, delay
FEATURE_CLIP = 10.0


@dataclass(frozen=True)
class FeatureSpec:
    n_agents: int
    n_vehicles: int
    delay_cap: int
    v_max: float
    acc_max: float
    u_scale: float
    spacing: tuple[float, float, float]  # vehicle length, standstill gap, headway
    strip_delay: bool = False

    @classmethod
    def from_config(cls, cfg: Config, strip_delay: bool | None = None) -> "FeatureSpec":
        s = cfg.scenario
        if strip_delay is None:
            strip_delay = cfg.train.ablation == "no-delay-state"
        return cls(s.n_followers, s.n_followers + 1, cfg.channel.delay_cap, s.v_max,
                   max(abs(s.acc_min), abs(s.acc_max)), max(abs(s.u_min), abs(s.u_max)),
                   (s.vehicle_len_l, s.standstill_d0, s.headway_h), strip_delay)

    @property
    def nb_dim(self) -> int:
        return self.n_vehicles + 4

    @property
    def flat_dim(self) -> int:
        return OWN_DIM + SLOT_SUMMARY * self.n_vehicles

    @property
    def cap(self) -> float:
        return float(max(self.delay_cap, 1))


@dataclass
class StepFeatures:
    own: np.ndarray       # (A, OWN_DIM)
    cand: np.ndarray      # (A, V) bool
    cand_x: np.ndarray    # (A, V, nb)
    held: np.ndarray      # (A, V) bool
    held_x: np.ndarray    # (A, V, nb)
    gate_in: np.ndarray   # (A, flat)
    state: np.ndarray     # (A, STATE_DIM)
    delivered: np.ndarray  # (V, V) bool
    in_range: np.ndarray   # (V, V) bool


def _clip(x: float) -> float:
    return float(np.clip(x, -FEATURE_CLIP, FEATURE_CLIP))


def spacing_error(i: int, j: int, p_i: float, v_i: float, p_j: float, spec: FeatureSpec) -> float:
    """Signed spacing error from ``i`` to ``j`` assuming every gap in between
    follows the headway rule at ``i``'s speed."""
    l, d0, h = spec.spacing
    return (p_j - p_i) - (i - j) * (l + d0 + h * v_i)


def record_features(i: int, rec: NeighborRecord, p_i: float, v_i: float, spec: FeatureSpec) -> np.ndarray:
    p_j, v_j, a_j = rec.payload
    out = np.zeros(spec.nb_dim)
    out[rec.sender] = 1.0
    v = spec.n_vehicles
    out[v] = _clip(spacing_error(i, rec.sender, p_i, v_i, p_j, spec) / 5.0)
    out[v + 1] = _clip((v_j - v_i) / 5.0)
    out[v + 2] = a_j / spec.acc_max
    out[v + 3] = 0.0 if spec.strip_delay else rec.xi / spec.cap
    return out


def _table(i: int, records, p_i: float, v_i: float, spec: FeatureSpec) -> tuple[np.ndarray, np.ndarray]:
    mask = np.zeros(spec.n_vehicles, bool)
    x = np.zeros((spec.n_vehicles, spec.nb_dim))
    for r in records:
        mask[r.sender] = True
        x[r.sender] = record_features(i, r, p_i, v_i, spec)
    return mask, x


def own_features(env: PlatoonEnv, spec: FeatureSpec) -> np.ndarray:
    out = np.zeros((spec.n_agents, OWN_DIM))
    dt = env.scen.dt
    for k, o in enumerate(env.candidates()):
        s = o.self_state
        out[k, 0] = s.own.vel / spec.v_max
        out[k, 1] = s.own.acc / spec.acc_max
        if not spec.strip_delay:
            out[k, 2] = s.prev_u / spec.u_scale
            out[k, 3] = s.xi / dt / spec.cap
    return out


def critic_state(env: PlatoonEnv, spec: FeatureSpec) -> np.ndarray:
    out = np.zeros((spec.n_agents, STATE_DIM))
    st = env.states
    for k, o in enumerate(env.candidates()):
        i = o.agent
        me, lead = st[i], st[i - 1]
        out[k, 0] = _clip(gap_error(lead, me, env.scen) / 5.0) if lead.pos > me.pos else -FEATURE_CLIP
        out[k, 1] = _clip((lead.vel - me.vel) / 5.0)
        out[k, 2] = me.vel / spec.v_max
        out[k, 3] = me.acc / spec.acc_max
        if not spec.strip_delay:
            out[k, 4] = me.last_u / spec.u_scale
            out[k, 5] = o.self_state.xi / env.scen.dt / spec.cap
        out[k, 6] = lead.acc / spec.acc_max
    return out


def observe(env: PlatoonEnv, gate_in: np.ndarray, spec: FeatureSpec) -> StepFeatures:
    """Features of the current candidate step; call before ``env.view``."""
    a, v = spec.n_agents, spec.n_vehicles
    cand = np.zeros((a, v), bool)
    cand_x = np.zeros((a, v, spec.nb_dim))
    held = np.zeros((a, v), bool)
    held_x = np.zeros((a, v, spec.nb_dim))
    links = candidate_links(env.delivered, env.in_range)
    for k, o in enumerate(env.candidates()):
        i = o.agent
        me = o.self_state.own
        recs = [r for r in o.records if links[i, r.sender]]
        cand[k], cand_x[k] = _table(i, recs, me.pos, me.vel, spec)
        held[k], held_x[k] = _table(i, env.held_records(i), me.pos, me.vel, spec)
    return StepFeatures(own_features(env, spec), cand, cand_x, held, held_x,
                        np.asarray(gate_in, float).copy(), critic_state(env, spec),
                        env.delivered.copy(), env.in_range.copy())


def flat_observation(own: np.ndarray, view_mask: np.ndarray, view_x: np.ndarray,
                     spec: FeatureSpec) -> np.ndarray:
    """``own`` plus a per-slot summary of what each agent actually used."""
    a, v = spec.n_agents, spec.n_vehicles
    summary = np.zeros((a, v, SLOT_SUMMARY))
    summary[..., 0] = view_mask
    summary[..., 1:] = view_x[..., v:v + 4][..., [0, 1, 3]] * view_mask[..., None]
    return np.concatenate([own, summary.reshape(a, -1)], axis=1)


def initial_gate_input(own: np.ndarray, spec: FeatureSpec) -> np.ndarray:
    return np.concatenate([own, np.zeros((spec.n_agents, SLOT_SUMMARY * spec.n_vehicles))], axis=1)


def view_tables(feat: StepFeatures, selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mask and feature table each agent uses given its selected senders.

    ``selected`` is ``(A, V)``; an agent with no selection falls back to its
    held table.
    """
    any_sel = selected.any(axis=1)
    mask = np.where(any_sel[:, None], selected, feat.held)
    x = np.where(any_sel[:, None, None], feat.cand_x, feat.held_x)
    return mask, x * mask[..., None]
