"""Platoon Dec-POMDP: leader trace, follower dynamics, lossy delayed V2V
messaging and per-agent rewards.

Each step has two observation layers. ``step``/``reset`` return the
*candidate* observation of every follower: the freshest message that
surfaced from each sender this step. ``view(adjacency)`` then restricts each
candidate set to the senders the topology selected. An agent whose
restricted set is empty keeps its previous view with every delay grown by
one step (zero-order hold); held records older than ``delay_cap`` drop out.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .channel import Delivery, V2VNetwork
from .config import Config, ScenarioConfig, RewardConfig
from .dynamics import VehicleState, bumper_gap, gap_error, step_vehicle
from .metrics import EpisodeLog
from .topology import distance_weights
from .traces import LeaderTrace, TraceError


@dataclass(frozen=True)
class AgentState:
    own: VehicleState
    prev_u: float
    xi: float  # seconds since the freshest neighbour information was sent


@dataclass(frozen=True)
class NeighborRecord:
    sender: int
    payload: tuple[float, float, float]
    xi: int  # steps
    weight: float = 0.0
    held: bool = False


@dataclass
class Observation:
    agent: int
    step: int
    self_state: AgentState
    records: tuple[NeighborRecord, ...]
    mask: np.ndarray = field(repr=False)

    def restrict(self, row: np.ndarray) -> "Observation":
        keep = [r for r in self.records if row[r.sender]]
        return _with_weights(self, keep, held=False)


def _with_weights(obs: Observation, records: list[NeighborRecord], held: bool) -> Observation:
    mask = np.zeros_like(obs.mask)
    if records:
        w = distance_weights(obs.agent, [r.sender for r in records])
        records = [replace(r, weight=float(wk), held=held or r.held) for r, wk in zip(records, w)]
        mask[[r.sender for r in records]] = True
    return Observation(obs.agent, obs.step, obs.self_state, tuple(records), mask)


def reward_fn(i: int, states, prev_acc: np.ndarray, scen: ScenarioConfig, rw: RewardConfig) -> float:
    """Negative weighted sum of squared spacing/velocity error, normalised
    squared jerk, and the unsafe-gap hinge for follower ``i``."""
    if i < 1:
        raise ValueError("the leader has no predecessor")
    lead, me = states[i - 1], states[i]
    err_p = bumper_gap(lead, me, scen) - (scen.standstill_d0 + scen.headway_h * me.vel)
    err_v = lead.vel - me.vel
    jerk = (me.acc - prev_acc[i]) / scen.dt
    jerk_norm = jerk * jerk / ((scen.u_max - scen.u_min) / scen.dt) ** 2
    unsafe = max(0.0, scen.d_safe - bumper_gap(lead, me, scen))
    return -(rw.w1 * err_p * err_p + rw.w2 * err_v * err_v + rw.w3 * jerk_norm + rw.w4 * unsafe)


def tracking_cost(states, scen: ScenarioConfig, rw: RewardConfig) -> float:
    """Instantaneous ``sum_i lambda_p e_p^2 + lambda_v e_v^2`` over followers."""
    total = 0.0
    for i in range(1, len(states)):
        ep = bumper_gap(states[i - 1], states[i], scen) - (scen.standstill_d0 + scen.headway_h * states[i].vel)
        ev = states[i - 1].vel - states[i].vel
        total += rw.lambda_p * ep * ep + rw.lambda_v * ev * ev
    return total


class PlatoonEnv:
    def __init__(self, cfg: Config, record_channel_trace: bool = False):
        self.cfg = cfg
        self.scen = cfg.scenario
        self.n_agents = cfg.scenario.n_followers
        self.n_vehicles = self.n_agents + 1
        self.agents = list(range(1, self.n_vehicles))
        self.network = V2VNetwork(cfg.channel, cfg.topology.comm_range, cfg.msg_every,
                                  record_trace=record_channel_trace)
        self.t = 0
        self.states: list[VehicleState] = []
        self.done = True
        self._rng: np.random.Generator | None = None

    # -- episode lifecycle -----------------------------------------------------
    def reset(self, trace: LeaderTrace, rng: np.random.Generator) -> list[Observation]:
        scen = self.scen
        if len(trace) == 0:
            raise TraceError("empty leader trace")
        if trace.duration + 1e-9 < scen.episode_len * scen.dt:
            raise TraceError(f"leader trace covers {trace.duration:.2f} s, episode needs "
                             f"{scen.episode_len * scen.dt:.2f} s")
        self._rng = rng
        self._leader_v = trace.on_grid(scen.dt, scen.episode_len + 1, scen.v_min, scen.v_max)
        v0 = float(self._leader_v[0])
        spacing = scen.vehicle_len_l + scen.standstill_d0 + scen.headway_h * v0
        n = self.n_vehicles
        self.states = [VehicleState(pos=(n - 1 - k) * spacing, vel=v0, acc=0.0, last_u=0.0)
                       for k in range(n)]
        self.states[0] = self._leader_state(0, self.states[0].pos)
        self.t = 0
        self.done = False
        self.network.reset()
        self._last_view: dict[int, list[NeighborRecord]] = {i: [] for i in self.agents}
        steps = scen.episode_len + 1
        self.log = EpisodeLog.empty_like_config(scen, steps, n)
        self.adjacency_traj = np.zeros((steps, n, n), dtype=bool)
        self.delivered_traj = np.zeros((steps, n, n), dtype=bool)
        self._candidates = self._communicate()
        self._record_row(np.zeros(n))
        return self._candidates

    def _leader_state(self, t: int, pos: float) -> VehicleState:
        v = self._leader_v
        acc = (v[t + 1] - v[t]) / self.scen.dt if t + 1 < len(v) else 0.0
        return VehicleState(pos, float(v[t]), float(acc), float(acc))

    def _communicate(self) -> list[Observation]:
        deliveries = self.network.broadcast(self.states, self.t, self._rng)
        n = self.n_vehicles
        self.in_range = self.network.in_range(self.states)
        self.delivered = np.zeros((n, n), dtype=bool)
        cap = self.cfg.channel.delay_cap
        obs = []
        for i in self.agents:
            fresh: dict[int, Delivery] = {}
            for d in deliveries.get(i, []):
                s = d.message.sender
                if s not in fresh or d.message.send_step > fresh[s].message.send_step:
                    fresh[s] = d
            records = [NeighborRecord(s, fresh[s].message.payload, fresh[s].xi) for s in sorted(fresh)]
            self.delivered[i, list(fresh)] = True
            xi_steps = min((r.xi for r in records), default=cap)
            me = self.states[i]
            agent_state = AgentState(me, me.last_u, xi_steps * self.scen.dt)
            base = Observation(i, self.t, agent_state, (), np.zeros(n, dtype=bool))
            obs.append(_with_weights(base, records, held=False))
        return obs

    def candidates(self) -> list[Observation]:
        return self._candidates

    def view(self, adjacency: np.ndarray) -> list[Observation]:
        """Restrict candidate observations to the selected senders (with hold).

        Links that were selected but not delivered this step are masked out.
        """
        adjacency = self.effective_adjacency(adjacency)
        out = []
        for obs in self._candidates:
            i = obs.agent
            v = obs.restrict(adjacency[i])
            if v.records:
                self._last_view[i] = list(v.records)
            else:
                held = self.held_records(i)
                self._last_view[i] = held
                v = _with_weights(obs, held, held=True)
            out.append(v)
        return out

    def held_records(self, i: int) -> list[NeighborRecord]:
        """What agent ``i`` would keep this step if it selected nobody."""
        cap = self.cfg.channel.delay_cap
        return [replace(r, xi=r.xi + 1, held=True) for r in self._last_view[i] if r.xi + 1 <= cap]

    def effective_adjacency(self, adjacency: np.ndarray) -> np.ndarray:
        """Validate ``adjacency`` and drop links that were not delivered this step."""
        a = np.asarray(adjacency)
        n = self.n_vehicles
        if a.shape != (n, n) or a.dtype != bool:
            raise ValueError(f"adjacency must be a boolean {n}x{n} matrix")
        if np.any(np.diag(a)) or np.any(a[0]):
            raise ValueError("adjacency selects a self link or a leader reception")
        return a & self.delivered

    def step(self, joint_u, adjacency: np.ndarray):
        if self.done:
            raise RuntimeError("step() on a finished episode; call reset()")
        u = np.asarray(joint_u, dtype=float).reshape(-1)
        if u.shape[0] != self.n_agents or not np.all(np.isfinite(u)):
            raise ValueError(f"joint action must hold {self.n_agents} finite values")
        self.adjacency_traj[self.t] = self.effective_adjacency(adjacency)
        self.delivered_traj[self.t] = self.delivered

        scen = self.scen
        prev_acc = np.array([s.acc for s in self.states])
        leader = self.states[0]
        new_states = [self._leader_state(self.t + 1, leader.pos + scen.dt * leader.vel)]
        for k, i in enumerate(self.agents):
            new_states.append(step_vehicle(self.states[i], float(u[k]), scen))
        self.states = new_states
        self.t += 1

        rewards = np.array([reward_fn(i, self.states, prev_acc, scen, self.cfg.reward) for i in self.agents])
        gaps = np.array([bumper_gap(self.states[i - 1], self.states[i], scen) for i in self.agents])
        collision = bool(np.any(gaps <= 0.0))
        time_limit = self.t >= scen.episode_len
        self.done = collision or time_limit
        self._candidates = self._communicate()
        self._record_row(np.concatenate([[0.0], rewards]))
        if self.done:
            self.delivered_traj[self.t] = self.delivered
        info = {"t": self.t, "collision": collision, "time_limit": time_limit and not collision,
                "gaps": gaps}
        return self._candidates, rewards, self.done, info

    # -- state access ------------------------------------------------------------
    def agent_states(self) -> list[AgentState]:
        return [o.self_state for o in self._candidates]

    def gap_errors(self) -> np.ndarray:
        return np.array([gap_error(self.states[i - 1], self.states[i], self.scen) for i in self.agents])

    def _record_row(self, rewards: np.ndarray) -> None:
        t = self.t
        for v, s in enumerate(self.states):
            self.log.pos[t, v] = s.pos
            self.log.vel[t, v] = s.vel
            self.log.acc[t, v] = s.acc
            self.log.u[t, v] = s.last_u
        self.log.reward[t] = rewards
        self.log.xi[t, 0] = 0
        for o in self._candidates:
            self.log.xi[t, o.agent] = round(o.self_state.xi / self.scen.dt)

    def episode_log(self) -> EpisodeLog:
        """Log truncated to the steps actually simulated."""
        k = self.t + 1
        lg = self.log
        return EpisodeLog(lg.pos[:k].copy(), lg.vel[:k].copy(), lg.acc[:k].copy(), lg.u[:k].copy(),
                          lg.reward[:k].copy(), lg.xi[:k].copy(), lg.dt, lg.headway_h,
                          lg.standstill_d0, lg.vehicle_len_l, lg.acc_max)

    def trajectories(self) -> tuple[np.ndarray, np.ndarray]:
        """(adjacency, delivered) stacks for the steps taken so far."""
        return self.adjacency_traj[: self.t].copy(), self.delivered_traj[: self.t].copy()
