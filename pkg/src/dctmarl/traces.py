"""Leader velocity traces: CSV ingestion and a synthetic stop-and-go profile."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig

CSV_HEADER = ("time_s", "velocity_mps")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class LeaderTrace:
    times: np.ndarray
    velocities: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise TraceError("times and velocities must be 1-D and equally long")
        if len(t) and np.any(np.diff(t) <= 0):
            raise TraceError("trace times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "velocities", v)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self.times) else 0.0

    def on_grid(self, dt: float, n_points: int | None = None, v_min: float = -np.inf,
                v_max: float = np.inf) -> np.ndarray:
        """Velocities linearly resampled at ``t0 + k*dt`` and clamped."""
        if len(self.times) == 0:
            raise TraceError("empty trace")
        if n_points is None:
            n_points = int(np.floor(self.duration / dt + 1e-9)) + 1
        grid = self.times[0] + dt * np.arange(n_points)
        return np.clip(np.interp(grid, self.times, self.velocities), v_min, v_max)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for t, v in zip(self.times, self.velocities):
                w.writerow([repr(float(t)), repr(float(v))])


def ingest_leader_csv(path, cfg: ScenarioConfig) -> LeaderTrace:
    """Read a ``time_s,velocity_mps`` CSV and resample it onto the control grid."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TraceError(f"{path}: empty file") from None
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise TraceError(f"{path}: missing columns {missing}")
        it, iv = header.index("time_s"), header.index("velocity_mps")
        times, vels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                times.append(float(row[it]))
                vels.append(float(row[iv]))
            except (ValueError, IndexError):
                raise TraceError(f"{path}:{lineno}: non-numeric cell") from None
    if not times:
        raise TraceError(f"{path}: no samples")
    if np.any(np.diff(times) <= 0):
        raise TraceError(f"{path}: time column is not strictly increasing")
    raw = LeaderTrace(np.array(times), np.array(vels))
    v = raw.on_grid(cfg.dt, v_min=cfg.v_min, v_max=cfg.v_max)
    return LeaderTrace(raw.times[0] + cfg.dt * np.arange(len(v)), v)


def synth_stop_and_go(duration: float, rng: np.random.Generator,
                      cfg: ScenarioConfig | None = None) -> LeaderTrace:
    """Cruise / brake / hold / accelerate cycles sampled on the control grid.

    Per-step velocity changes never exceed ``acc_max * dt`` (or ``|acc_min| *
    dt`` when braking).
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    cfg = cfg or ScenarioConfig()
    dt = cfg.dt
    n = int(np.floor(duration / dt + 1e-9)) + 1
    hi_cap = min(cfg.v_max, 25.0)
    lo_floor = max(cfg.v_min, 0.0)
    brake_max = min(2.5, -cfg.acc_min)
    accel_max = min(2.0, cfg.acc_max)

    v = np.empty(n)
    v[0] = rng.uniform(max(lo_floor, 12.0), max(lo_floor, min(hi_cap, 22.0)))
    k = 1
    while k < n:
        # cruise
        hold = int(rng.uniform(3.0, 8.0) / dt)
        for _ in range(hold):
            if k >= n:
                break
            v[k] = v[k - 1]
            k += 1
        # brake to a low speed
        target = rng.uniform(lo_floor + 2.0, lo_floor + 8.0)
        rate = rng.uniform(min(1.0, brake_max), brake_max) * dt
        while k < n and v[k - 1] > target:
            v[k] = max(target, v[k - 1] - rate)
            k += 1
        hold = int(rng.uniform(1.0, 4.0) / dt)
        for _ in range(hold):
            if k >= n:
                break
            v[k] = v[k - 1]
            k += 1
        # accelerate back up
        target = rng.uniform(min(12.0, hi_cap), hi_cap)
        rate = rng.uniform(min(0.8, accel_max), accel_max) * dt
        while k < n and v[k - 1] < target:
            v[k] = min(target, v[k - 1] + rate)
            k += 1
    v = np.clip(v, cfg.v_min, cfg.v_max)
    return LeaderTrace(dt * np.arange(n), v)


def constant_trace(speed: float, duration: float, dt: float) -> LeaderTrace:
    n = int(np.floor(duration / dt + 1e-9)) + 1
    return LeaderTrace(dt * np.arange(n), np.full(n, float(speed)))
