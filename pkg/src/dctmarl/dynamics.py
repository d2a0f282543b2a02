"""Longitudinal vehicle model and constant-time-headway spacing errors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .config import ScenarioConfig


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class VehicleState:
    pos: float
    vel: float
    acc: float = 0.0
    last_u: float = 0.0


@dataclass(frozen=True)
class PairError:
    err_p: float
    err_v: float


def step_vehicle(s: VehicleState, u: float, cfg: ScenarioConfig) -> VehicleState:
    """Advance one control step.

    Forward-Euler position/velocity update with a first-order driveline lag on
    acceleration. The command is clamped to ``[u_min, u_max]`` first; velocity
    and acceleration are clamped after integration.
    """
    u_c = clamp(u, cfg.u_min, cfg.u_max)
    k = cfg.dt / cfg.tau
    pos = s.pos + cfg.dt * s.vel
    vel = clamp(s.vel + cfg.dt * s.acc, cfg.v_min, cfg.v_max)
    acc = clamp((1.0 - k) * s.acc + k * u_c, cfg.acc_min, cfg.acc_max)
    return VehicleState(pos, vel, acc, u_c)


def desired_gap(v_follower: float, cfg: ScenarioConfig) -> float:
    return cfg.standstill_d0 + cfg.headway_h * v_follower


def bumper_gap(lead: VehicleState, follow: VehicleState, cfg: ScenarioConfig) -> float:
    return lead.pos - follow.pos - cfg.vehicle_len_l


def gap_error(lead: VehicleState, follow: VehicleState, cfg: ScenarioConfig) -> float:
    """Actual bumper gap minus the headway-policy target for the follower."""
    if not lead.pos > follow.pos:
        raise ValueError(f"vehicle ordering violated: lead at {lead.pos}, follower at {follow.pos}")
    return bumper_gap(lead, follow, cfg) - desired_gap(follow.vel, cfg)


def pair_error(states: Sequence[VehicleState], i: int, j: int, cfg: ScenarioConfig) -> PairError:
    """Multi-hop tracking error between vehicles ``i`` and ``j`` (0 is the leader).

    The cumulative headway target sums ``h * v`` over every vehicle behind the
    front one of the pair up to and including the rear one. Vehicle length and
    standstill distance are left out (uniform platoon).
    """
    n = len(states)
    if i == j:
        raise ValueError("pair_error needs two distinct vehicles")
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"vehicle index out of range: {i}, {j} (platoon of {n})")
    h = cfg.headway_h
    front, rear = (j, i) if i > j else (i, j)
    headway = sum(h * states[mu].vel for mu in range(front + 1, rear + 1))
    # both branches measure front minus rear
    err_p = states[front].pos - states[rear].pos - headway
    err_v = states[front].vel - states[rear].vel
    return PairError(err_p, err_v)
