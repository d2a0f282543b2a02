"""Training loop: collect with exploration, learn off-policy, log and checkpoint."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import Config, config_to_dict
from ..environment import PlatoonEnv
from ..nn import load_checkpoint, save_checkpoint
from .buffer import ReplayBuffer
from .features import FeatureSpec, StepFeatures
from .learner import Decision, Learner, NonFiniteLoss
from .rollout import Rollout, episode_trace


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump_path: Path):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class TrainResult:
    seed: int
    steps: int
    curve_path: Path
    log_path: Path
    checkpoint_path: Path
    checkpoint_sha256: str
    curve: list[dict] = field(default_factory=list)


def curve_columns(n_agents: int) -> list[str]:
    return ["episode", "steps", "mean_return"] + [f"return_{i}" for i in range(1, n_agents + 1)]


def read_curve(path) -> np.ndarray:
    """Learning curve as a float array with the columns of ``curve_columns``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) <= 1:
        return np.zeros((0, len(rows[0]) if rows else 3))
    return np.array([[float(x) for x in r] for r in rows[1:]])


def _row(feat: StepFeatures, d: Decision | None) -> dict[str, np.ndarray]:
    noise = np.zeros_like(feat.cand, dtype=float) if d is None else d.noise
    return {"own": feat.own, "cand": feat.cand, "cand_x": feat.cand_x, "held": feat.held,
            "held_x": feat.held_x, "gate_in": feat.gate_in, "state": feat.state, "noise": noise}


def _fmt(x: float) -> str:
    return repr(float(x))


def train(cfg: Config, seed: int, out_dir, log_every: int | None = None) -> TrainResult:
    """Run the full training loop for one seed and write its artefacts into ``out_dir``.

    Writes ``curve_seed<S>.csv`` (one row per finished episode),
    ``train_log_seed<S>.jsonl`` and ``checkpoint_seed<S>.dctm``. A non-finite
    loss stops the run after dumping diagnostics to ``nan_dump_seed<S>.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = cfg.train
    log_every = tr.log_every if log_every is None else log_every
    spec = FeatureSpec.from_config(cfg)
    init_ss, env_ss, trace_ss, act_ss, upd_ss = np.random.SeedSequence(seed).spawn(5)
    learner = Learner(cfg, np.random.default_rng(init_ss), spec)
    env_rng, trace_rng = np.random.default_rng(env_ss), np.random.default_rng(trace_ss)
    act_rng, upd_rng = np.random.default_rng(act_ss), np.random.default_rng(upd_ss)
    buffer = ReplayBuffer(max(tr.buffer_capacity, 2), spec)
    rollout = Rollout(PlatoonEnv(cfg), spec)

    curve_path = out / f"curve_seed{seed}.csv"
    log_path = out / f"train_log_seed{seed}.jsonl"
    ckpt_path = out / f"checkpoint_seed{seed}.dctm"
    start = max(tr.batch_size, tr.warmup_steps)
    curve: list[dict] = []

    with open(curve_path, "w", newline="", encoding="utf-8") as cf, \
            open(log_path, "w", encoding="utf-8") as lf:
        writer = csv.writer(cf, lineterminator="\n")
        writer.writerow(curve_columns(spec.n_agents))
        t, episode, done = 0, 0, True
        returns = np.zeros(spec.n_agents)
        while t < tr.total_steps:
            if done:
                rollout.reset(episode_trace(cfg, trace_rng), env_rng)
                returns[:] = 0.0
            feat = rollout.feat
            d = learner.decide(feat, act_rng, explore=True)
            rewards, done, info = rollout.step(d)
            buffer.push_step(_row(feat, d), d.u, rewards, done, info["time_limit"])
            returns += rewards
            t += 1
            if done:
                buffer.push_step(_row(rollout.feat, None))
                episode += 1
                row = {"episode": episode, "steps": t, "mean_return": float(returns.mean()),
                       "returns": returns.tolist()}
                curve.append(row)
                writer.writerow([episode, t, _fmt(returns.mean())] + [_fmt(r) for r in returns])
                cf.flush()
            if t >= start and t % tr.update_every == 0 and len(buffer) > 0:
                batch = buffer.sample(tr.batch_size, upd_rng)
                prior_batch = None
                if (learner.updates + 1) % tr.prior_every == 0:
                    prior_batch = buffer.sample(tr.prior_batch, upd_rng)
                try:
                    stats = learner.update(batch, upd_rng, prior_batch)
                except NonFiniteLoss as exc:
                    dump = out / f"nan_dump_seed{seed}.json"
                    dump.write_text(json.dumps({
                        "seed": seed, "step": t, "episode": episode, "update": learner.updates,
                        "stats": exc.stats,
                        "param_norms": {k: float(np.linalg.norm(v)) for k, v in learner.state_arrays().items()},
                    }, indent=2, default=str) + "\n", encoding="utf-8")
                    raise TrainingDiverged(f"seed {seed}: non-finite loss at step {t}", dump) from exc
                if learner.updates % log_every == 0:
                    lf.write(json.dumps({"step": t, "update": learner.updates, **stats}, sort_keys=True) + "\n")

    digest = save_checkpoint(ckpt_path, learner.state_arrays(),
                             {"seed": seed, "steps": t, **learner.meta(), "config": config_to_dict(cfg)})
    return TrainResult(seed, t, curve_path, log_path, ckpt_path, digest, curve)


def learner_from_checkpoint(cfg: Config, path) -> Learner:
    learner = Learner(cfg, np.random.default_rng(0))
    learner.load_state_arrays(load_checkpoint(path))
    return learner
