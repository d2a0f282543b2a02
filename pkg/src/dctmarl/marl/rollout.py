"""Episode stepping shared by training, evaluation and baseline simulation."""
from __future__ import annotations

from typing import Protocol

import numpy as np

from ..config import Config
from ..environment import PlatoonEnv
from ..metrics import EpisodeLog
from ..traces import LeaderTrace, synth_stop_and_go
from .features import FeatureSpec, StepFeatures, flat_observation, initial_gate_input, observe, own_features, view_tables
from .learner import Decision


class Controller(Protocol):
    def decide(self, feat: StepFeatures, rng: np.random.Generator | None, explore: bool = True) -> Decision:
        ...


class Rollout:
    """Keeps the environment, the per-step features and the gate input in step."""

    def __init__(self, env: PlatoonEnv, spec: FeatureSpec):
        self.env = env
        self.spec = spec
        self.feat: StepFeatures | None = None

    def reset(self, trace: LeaderTrace, rng: np.random.Generator) -> StepFeatures:
        self.env.reset(trace, rng)
        gate_in = initial_gate_input(own_features(self.env, self.spec), self.spec)
        self.feat = observe(self.env, gate_in, self.spec)
        return self.feat

    def step(self, d: Decision):
        feat = self.feat
        self.env.view(d.adjacency)          # advances the environment's hold state
        mask, x = view_tables(feat, self.env.effective_adjacency(d.adjacency)[1:])
        gate_in = flat_observation(feat.own, mask, x, self.spec)
        _, rewards, done, info = self.env.step(d.u, d.adjacency)
        self.feat = observe(self.env, gate_in, self.spec)
        return rewards, done, info


def episode_trace(cfg: Config, rng: np.random.Generator) -> LeaderTrace:
    """Fresh stop-and-go leader profile long enough for one episode."""
    sc = cfg.scenario
    return synth_stop_and_go(sc.episode_len * sc.dt, rng, sc)


def run_episode(controller: Controller, rollout: Rollout, trace: LeaderTrace,
                env_rng: np.random.Generator, act_rng: np.random.Generator | None = None,
                explore: bool = False) -> tuple[EpisodeLog, np.ndarray, np.ndarray]:
    """One full episode; returns the log and the (adjacency, delivered) stacks."""
    rollout.reset(trace, env_rng)
    done = False
    while not done:
        d = controller.decide(rollout.feat, act_rng, explore=explore)
        _, done, _ = rollout.step(d)
    adj, delivered = rollout.env.trajectories()
    return rollout.env.episode_log(), adj, delivered


def evaluate(cfg: Config, controller: Controller, episodes: int, seed: int,
             spec: FeatureSpec | None = None) -> list[tuple[EpisodeLog, np.ndarray, np.ndarray]]:
    """Noise-free episodes; the channel and leader profiles still follow ``seed``."""
    spec = spec or FeatureSpec.from_config(cfg)
    env = PlatoonEnv(cfg)
    rollout = Rollout(env, spec)
    out = []
    for ss in np.random.SeedSequence([seed, 7]).spawn(episodes):
        trace_ss, env_ss = ss.spawn(2)
        trace = episode_trace(cfg, np.random.default_rng(trace_ss))
        out.append(run_episode(controller, rollout, trace, np.random.default_rng(env_ss)))
    return out
