"""V2V link model: log-distance path loss, log-normal shadowing, Rayleigh
fading, SNR-threshold packet loss and an integer-step delivery delay."""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ChannelConfig, DelayDist
from .dynamics import VehicleState


@dataclass(frozen=True)
class Message:
    sender: int
    send_step: int
    payload: tuple[float, float, float]  # pos, vel, acc


@dataclass(frozen=True)
class LinkOutcome:
    delivered: bool
    delay_steps: int
    rx_power_dbm: float
    snr_db: float


@dataclass(frozen=True)
class Delivery:
    message: Message
    receive_step: int

    @property
    def xi(self) -> int:
        return self.receive_step - self.message.send_step


def path_loss_db(d: float | np.ndarray, cfg: ChannelConfig, shadow_sample: float | np.ndarray = 0.0):
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("path loss needs a positive distance")
    pl = cfg.pl_intercept_A0 + 10.0 * cfg.pl_exponent_n * np.log10(d_arr / cfg.ref_dist_d0) + shadow_sample
    return float(pl) if np.ndim(pl) == 0 else pl


def sample_shadow(cfg: ChannelConfig, rng: np.random.Generator, size=None):
    return rng.normal(0.0, 1.0, size) * cfg.shadow_sigma


def sample_delays(dist: DelayDist, cap: int, rng: np.random.Generator, size: int) -> np.ndarray:
    if dist.kind == "fixed":
        raw = np.full(size, dist.a, dtype=np.int64)
    elif dist.kind == "uniform":
        raw = rng.integers(dist.a, dist.b + 1, size=size)
    else:
        # failures before the first success: support {0, 1, ...}
        raw = rng.geometric(dist.p, size=size) - 1
    return np.minimum(raw, cap).astype(np.int64)


@dataclass
class LinkBatch:
    delivered: np.ndarray
    delay_steps: np.ndarray
    rx_power_dbm: np.ndarray
    snr_db: np.ndarray

    def __len__(self) -> int:
        return len(self.delivered)

    def outcome(self, k: int) -> LinkOutcome:
        return LinkOutcome(bool(self.delivered[k]), int(self.delay_steps[k]),
                           float(self.rx_power_dbm[k]), float(self.snr_db[k]))


def sample_links(d: np.ndarray, cfg: ChannelConfig, rng: np.random.Generator) -> LinkBatch:
    """Draw independent link outcomes for an array of distances.

    Draw order per call is fixed (shadowing, fading gain, forced-loss
    uniforms, delays) so identical seeds give identical batches.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    n = d.shape[0]
    shadow = sample_shadow(cfg, rng, n)
    gain = rng.exponential(1.0, n)  # Rayleigh amplitude -> exponential power gain
    forced = rng.random(n) < cfg.extra_loss_prob
    rx = cfg.tx_power_dbm - path_loss_db(d, cfg, shadow) + 10.0 * np.log10(gain)
    snr = rx - cfg.noise_floor_dbm
    delivered = (snr >= cfg.snr_threshold_db) & ~forced
    delays = sample_delays(cfg.delay_dist, cfg.delay_cap, rng, n)
    delays = np.where(delivered, delays, 0)
    return LinkBatch(delivered, delays, rx, snr)


def link_outcome(d: float, cfg: ChannelConfig, rng: np.random.Generator) -> LinkOutcome:
    if not d > 0:
        raise ValueError("link distance must be positive")
    return sample_links(np.array([d]), cfg, rng).outcome(0)


def mean_snr_db(d: float, cfg: ChannelConfig) -> float:
    """SNR averaged over fading, without shadowing."""
    return cfg.tx_power_dbm - path_loss_db(d, cfg) - cfg.noise_floor_dbm


def rayleigh_outage(mean_snr_db_: float, threshold_db: float) -> float:
    """P(SNR < threshold) for exponentially distributed linear SNR."""
    return 1.0 - math.exp(-(10 ** (threshold_db / 10)) / (10 ** (mean_snr_db_ / 10)))


class DeliveryQueue:
    """Per-receiver pending messages ordered by delivery step."""

    def __init__(self) -> None:
        self._pending: dict[int, list[tuple[int, int, Message]]] = {}
        self._seq = 0

    def push(self, receiver: int, deliver_step: int, msg: Message) -> None:
        heapq.heappush(self._pending.setdefault(receiver, []), (deliver_step, self._seq, msg))
        self._seq += 1

    def pop_due(self, receiver: int, t: int) -> list[Message]:
        heap = self._pending.get(receiver)
        out = []
        while heap and heap[0][0] <= t:
            out.append(heapq.heappop(heap)[2])
        return out

    def __len__(self) -> int:
        return sum(len(h) for h in self._pending.values())

    def clear(self) -> None:
        self._pending.clear()
        self._seq = 0


TRACE_COLUMNS = ("step", "sender", "receiver", "distance_m", "rx_dbm", "snr_db", "delivered", "delay_steps")


class V2VNetwork:
    """Broadcast medium for one platoon: samples every in-range ordered link
    each transmission step and surfaces messages once their delay elapses."""

    def __init__(self, cfg: ChannelConfig, comm_range: float, msg_every: int = 1,
                 record_trace: bool = False):
        self.cfg = cfg
        self.comm_range = comm_range
        self.msg_every = msg_every
        self.queue = DeliveryQueue()
        self.record_trace = record_trace
        self.trace: list[tuple] = []
        self.sent: set[tuple[int, int, int]] = set()  # (sender, receiver, send_step)

    def reset(self) -> None:
        self.queue.clear()
        self.trace.clear()
        self.sent.clear()

    def in_range(self, states: Sequence[VehicleState]) -> np.ndarray:
        pos = np.array([s.pos for s in states])
        dist = np.abs(pos[:, None] - pos[None, :])
        mask = dist <= self.comm_range
        np.fill_diagonal(mask, False)
        return mask

    def broadcast(self, states: Sequence[VehicleState], t: int,
                  rng: np.random.Generator) -> dict[int, list[Delivery]]:
        if t < 0:
            raise ValueError("step index must be non-negative")
        n = len(states)
        if t % self.msg_every == 0:
            pos = np.array([s.pos for s in states])
            pairs = [(s, r) for s in range(n) for r in range(n)
                     if s != r and abs(pos[s] - pos[r]) <= self.comm_range]
            if pairs:
                d = np.array([max(abs(pos[s] - pos[r]), 1e-3) for s, r in pairs])
                links = sample_links(d, self.cfg, rng)
                for k, (s, r) in enumerate(pairs):
                    if self.record_trace:
                        self.trace.append((t, s, r, float(d[k]), float(links.rx_power_dbm[k]),
                                           float(links.snr_db[k]), bool(links.delivered[k]),
                                           int(links.delay_steps[k])))
                    if links.delivered[k]:
                        st = states[s]
                        msg = Message(s, t, (st.pos, st.vel, st.acc))
                        self.queue.push(r, t + int(links.delay_steps[k]), msg)
                        self.sent.add((s, r, t))
        out: dict[int, list[Delivery]] = {}
        for r in range(n):
            due = [m for m in self.queue.pop_due(r, t) if t - m.send_step <= self.cfg.delay_cap]
            out[r] = [Delivery(m, t) for m in due]
        return out

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.trace:
                t, s, r, d, rx, snr, ok, delay = row
                w.writerow([t, s, r, f"{d:.6f}", f"{rx:.6f}", f"{snr:.6f}", int(ok), delay])
