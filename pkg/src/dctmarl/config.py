"""Scenario, channel, topology and training parameters.

Configuration lives in a flat INI-style file with one section per
dataclass below::

    [scenario]
    n_followers = 5
    dt = 0.1

    [train]
    seeds = 1, 2, 3

Keys that a section does not define are rejected; keys a file omits keep
their defaults. Tuples are written comma separated. The delay process is a
compact string: ``fixed:K``, ``uniform:A:B`` or ``geometric:P`` (integer
control steps). ``DCTMARL_SEED`` (decimal integer) overrides
``scenario.seed`` at load time.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, get_type_hints

SEED_ENV_VAR = "DCTMARL_SEED"


class ConfigError(ValueError):
    """Raised for malformed config files or invariant violations."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{field_name}: {message}", field=field_name)


@dataclass(frozen=True)
class DelayDist:
    kind: str = "fixed"
    a: int = 0
    b: int = 0
    p: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "DelayDist":
        parts = text.strip().split(":")
        kind = parts[0].strip().lower()
        try:
            if kind == "fixed" and len(parts) == 2:
                k = int(parts[1])
                return cls("fixed", k, k)
            if kind == "uniform" and len(parts) == 3:
                return cls("uniform", int(parts[1]), int(parts[2]))
            if kind == "geometric" and len(parts) == 2:
                return cls("geometric", p=float(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"delay_dist: cannot parse {text!r}", "delay_dist") from exc
        raise ConfigError(f"delay_dist: cannot parse {text!r}", "delay_dist")

    def __str__(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.a}"
        if self.kind == "uniform":
            return f"uniform:{self.a}:{self.b}"
        return f"geometric:{self.p!r}"

    def validate(self) -> None:
        _require(self.kind in ("fixed", "uniform", "geometric"), "delay_dist", f"unknown kind {self.kind}")
        if self.kind == "fixed":
            _require(self.a >= 0, "delay_dist", "fixed delay must be >= 0")
        elif self.kind == "uniform":
            _require(0 <= self.a <= self.b, "delay_dist", "uniform bounds need 0 <= a <= b")
        else:
            _require(0.0 < self.p <= 1.0, "delay_dist", "geometric p must be in (0, 1]")


@dataclass(frozen=True)
class ScenarioConfig:
    n_followers: int = 5
    dt: float = 0.1
    episode_len: int = 600
    headway_h: float = 1.0
    standstill_d0: float = 2.0
    vehicle_len_l: float = 4.0
    tau: float = 0.5
    v_min: float = 0.0
    v_max: float = 30.0
    acc_min: float = -3.0
    acc_max: float = 3.0
    u_min: float = -3.0
    u_max: float = 3.0
    d_safe: float = 2.0
    highway_len: float = 1000.0
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.n_followers >= 1, "n_followers", "must be >= 1")
        _require(self.dt > 0, "dt", "must be > 0")
        _require(self.tau > 0 and self.dt < self.tau, "tau", "need 0 < dt < tau")
        _require(self.episode_len >= 1, "episode_len", "must be >= 1")
        _require(self.headway_h > 0, "headway_h", "must be > 0")
        _require(self.standstill_d0 > 0, "standstill_d0", "must be > 0")
        _require(self.vehicle_len_l >= 0, "vehicle_len_l", "must be >= 0")
        _require(self.v_min <= self.v_max, "v_max", "need v_min <= v_max")
        _require(self.acc_min < 0 < self.acc_max, "acc_min", "need acc_min < 0 < acc_max")
        _require(self.u_min <= self.u_max, "u_max", "need u_min <= u_max")
        _require(self.d_safe >= 0, "d_safe", "must be >= 0")


@dataclass(frozen=True)
class RewardConfig:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 0.1
    w4: float = 10.0
    lambda_p: float = 1.0
    lambda_v: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            _require(getattr(self, f.name) >= 0, f.name, "weights must be >= 0")


@dataclass(frozen=True)
class ChannelConfig:
    tx_power_dbm: float = 23.0
    pl_intercept_A0: float = 41.0
    pl_exponent_n: float = 2.15
    ref_dist_d0: float = 1.0
    shadow_sigma: float = 3.0
    noise_floor_dbm: float = -95.0
    snr_threshold_db: float = 5.0
    delay_dist: DelayDist = DelayDist("uniform", 0, 2)
    delay_cap: int = 3
    msg_interval: float = 0.1
    # Bernoulli drop applied on top of the SNR outage (forced-loss experiments)
    extra_loss_prob: float = 0.0
    # radio-resource metadata; not used by the loss model
    n_subchannels: int = 4
    rbs_per_subchannel: int = 10
    bandwidth_mhz: float = 10.0
    packet_size_bytes: int = 190

    def __post_init__(self) -> None:
        _require(self.pl_exponent_n > 0, "pl_exponent_n", "must be > 0")
        _require(self.ref_dist_d0 > 0, "ref_dist_d0", "must be > 0")
        _require(self.shadow_sigma >= 0, "shadow_sigma", "must be >= 0")
        _require(self.delay_cap >= 0, "delay_cap", "must be >= 0")
        _require(self.msg_interval > 0, "msg_interval", "must be > 0")
        _require(0.0 <= self.extra_loss_prob <= 1.0, "extra_loss_prob", "must be in [0, 1]")
        self.delay_dist.validate()


@dataclass(frozen=True)
class TopologyConfig:
    m_keys: int = 2
    gumbel_temp: float = 1.0
    q_softmax_temp_lambda: float = 1.0
    prior_threshold_delta: float = 0.1
    comm_range: float = 300.0
    action_bins: int = 11
    encoder_width: int = 64
    gate_width: int = 64

    def __post_init__(self) -> None:
        _require(self.m_keys >= 1, "m_keys", "must be >= 1")
        _require(self.gumbel_temp > 0, "gumbel_temp", "must be > 0")
        _require(self.q_softmax_temp_lambda > 0, "q_softmax_temp_lambda", "must be > 0")
        _require(0.0 < self.prior_threshold_delta < 1.0, "prior_threshold_delta", "must be in (0, 1)")
        _require(self.comm_range > 0, "comm_range", "must be > 0")
        _require(self.action_bins >= 2, "action_bins", "must be >= 2")


ABLATIONS = ("none", "fixed-topology", "no-delay-state")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr_actor: float = 3.0e-4
    lr_critic: float = 2.5e-4
    lr_prior: float = 1.0e-3
    lr_gate: float = 3.0e-4
    alpha_entropy: float = 0.05
    beta_soft_update: float = 0.005
    buffer_capacity: int = 100_000
    batch_size: int = 64
    total_steps: int = 1_000_000
    hidden_width: int = 128
    seeds: tuple[int, ...] = (1, 2, 3)
    warmup_steps: int = 1000
    update_every: int = 1
    prior_every: int = 10
    prior_batch: int = 16
    reward_scale: float = 0.1
    bootstrap_time_limit: bool = False
    ablation: str = "none"
    log_every: int = 1

    def __post_init__(self) -> None:
        _require(0.0 <= self.gamma < 1.0, "gamma", "need 0 <= gamma < 1")
        _require(0.0 < self.beta_soft_update <= 1.0, "beta_soft_update", "need 0 < beta <= 1")
        for name in ("lr_actor", "lr_critic", "lr_prior", "lr_gate"):
            _require(getattr(self, name) > 0, name, "must be > 0")
        _require(self.alpha_entropy >= 0, "alpha_entropy", "must be >= 0")
        _require(self.buffer_capacity >= 1, "buffer_capacity", "must be >= 1")
        _require(self.batch_size >= 1, "batch_size", "must be >= 1")
        _require(self.total_steps >= 0, "total_steps", "must be >= 0")
        _require(self.hidden_width >= 1, "hidden_width", "must be >= 1")
        _require(len(self.seeds) >= 1, "seeds", "need at least one seed")
        _require(self.update_every >= 1, "update_every", "must be >= 1")
        _require(self.prior_every >= 1, "prior_every", "must be >= 1")
        _require(self.reward_scale > 0, "reward_scale", "must be > 0")
        _require(self.log_every >= 1, "log_every", "must be >= 1")
        _require(self.ablation in ABLATIONS, "ablation", f"must be one of {ABLATIONS}")


@dataclass(frozen=True)
class MetricsConfig:
    # row-major 2x2 weighting matrix for the string-stability quadratic form
    stability_c: tuple[float, ...] = (1.0, 0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        c = self.stability_c
        _require(len(c) == 4, "stability_c", "needs four entries (row-major 2x2)")
        _require(c[1] == c[2], "stability_c", "must be symmetric")
        tr, det = c[0] + c[3], c[0] * c[3] - c[1] * c[2]
        _require(c[0] >= 0 and c[3] >= 0 and det >= -1e-12 and tr >= 0, "stability_c",
                 "must be positive semidefinite")


@dataclass(frozen=True)
class Config:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self) -> None:
        _require(self.topology.m_keys <= self.scenario.n_followers, "m_keys",
                 "must not exceed n_followers")
        ratio = self.channel.msg_interval / self.scenario.dt
        _require(abs(ratio - round(ratio)) < 1e-9 and round(ratio) >= 1, "msg_interval",
                 "must be an integer multiple of dt")

    @property
    def msg_every(self) -> int:
        return int(round(self.channel.msg_interval / self.scenario.dt))

    def replace(self, **sections: Any) -> "Config":
        """Return a copy with per-section overrides, e.g. ``replace(train={"total_steps": 0})``."""
        updated = {}
        for name, changes in sections.items():
            current = getattr(self, name)
            updated[name] = dataclasses.replace(current, **changes) if isinstance(changes, dict) else changes
        return dataclasses.replace(self, **updated)


SECTIONS = {f.name: f for f in fields(Config)}


def default_config() -> Config:
    return Config()


def _parse_value(raw: str, typ: Any, key: str) -> Any:
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if typ is str:
            return raw
        if typ is DelayDist:
            return DelayDist.parse(raw)
        if typ == tuple[int, ...]:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if typ == tuple[float, ...]:
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}", field=key) from exc
    raise ConfigError(f"{key}: unsupported field type {typ}", field=key)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def parse_config(text: str, env: dict[str, str] | None = None) -> Config:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case (pl_intercept_A0)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from exc

    sections: dict[str, Any] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", field=section)
        cls = SECTIONS[section].default_factory  # type: ignore[misc]
        hints = get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}", field=f"{section}.{key}")
            kwargs[key] = _parse_value(raw, hints[key], key)
        sections[section] = kwargs

    env = os.environ if env is None else env
    if env.get(SEED_ENV_VAR):
        raw = env[SEED_ENV_VAR]
        try:
            seed = int(raw, 10)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR}: not a decimal integer: {raw!r}", field="seed") from exc
        sections.setdefault("scenario", {})["seed"] = seed

    built = {}
    for name, f in SECTIONS.items():
        cls = f.default_factory  # type: ignore[misc]
        built[name] = cls(**sections.get(name, {}))
    return Config(**built)


def load_config(path: str | os.PathLike, env: dict[str, str] | None = None) -> Config:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), env=env)


def dump_config(cfg: Config) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: Config, path: str | os.PathLike) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


def config_to_dict(cfg: Config) -> dict[str, dict[str, Any]]:
    out = {}
    for name in SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: (str(v) if isinstance(v := getattr(section, f.name), DelayDist) else v)
                     for f in fields(section)}
    return out
