"""String-stability and comfort metrics over logged episodes."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import ScenarioConfig

LOG_COLUMNS = ("step", "vehicle", "pos", "vel", "acc", "u", "reward", "xi_steps")
STABILITY = "String Stability"
COMFORT = "Driving Comfort"


@dataclass
class EpisodeLog:
    """Per-step, per-vehicle arrays of shape ``(steps, vehicles)``; vehicle 0 leads."""
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    u: np.ndarray
    reward: np.ndarray
    xi: np.ndarray
    dt: float
    headway_h: float
    standstill_d0: float
    vehicle_len_l: float
    acc_max: float

    def __post_init__(self) -> None:
        shape = np.shape(self.pos)
        for name in ("vel", "acc", "u", "reward", "xi"):
            if np.shape(getattr(self, name)) != shape:
                raise ValueError(f"episode log is not rectangular ({name})")

    @property
    def n_steps(self) -> int:
        return self.pos.shape[0]

    @property
    def n_vehicles(self) -> int:
        return self.pos.shape[1]

    @classmethod
    def empty_like_config(cls, cfg: ScenarioConfig, steps: int, vehicles: int) -> "EpisodeLog":
        z = np.zeros((steps, vehicles))
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), cfg.dt,
                   cfg.headway_h, cfg.standstill_d0, cfg.vehicle_len_l, cfg.acc_max)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for t in range(self.n_steps):
                for v in range(self.n_vehicles):
                    w.writerow([t, v, repr(float(self.pos[t, v])), repr(float(self.vel[t, v])),
                                repr(float(self.acc[t, v])), repr(float(self.u[t, v])),
                                repr(float(self.reward[t, v])), int(self.xi[t, v])])

    @classmethod
    def read_csv(cls, path, cfg: ScenarioConfig) -> "EpisodeLog":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in LOG_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            rows = [[float(r[c]) for c in LOG_COLUMNS] for r in reader]
        if not rows:
            raise ValueError(f"{path}: empty episode log")
        arr = np.array(rows)
        steps = int(arr[:, 0].max()) + 1
        vehicles = int(arr[:, 1].max()) + 1
        if len(arr) != steps * vehicles:
            raise ValueError(f"{path}: episode log is not rectangular")
        log = cls.empty_like_config(cfg, steps, vehicles)
        t, v = arr[:, 0].astype(int), arr[:, 1].astype(int)
        for k, name in enumerate(("pos", "vel", "acc", "u", "reward", "xi"), start=2):
            getattr(log, name)[t, v] = arr[:, k]
        return log


def deviation_vectors(log: EpisodeLog, i: int) -> np.ndarray:
    """``[gap error to predecessor, relative velocity]`` for steps 1..N_s."""
    if i < 1 or i >= log.n_vehicles:
        raise ValueError(f"vehicle {i} has no predecessor in this log")
    gap = log.pos[1:, i - 1] - log.pos[1:, i] - log.vehicle_len_l
    dh = gap - (log.standstill_d0 + log.headway_h * log.vel[1:, i])
    dv = log.vel[1:, i - 1] - log.vel[1:, i]
    return np.stack([dh, dv], axis=1)


def string_stability(log: EpisodeLog, i: int, C: np.ndarray | None = None) -> float:
    """Time average of ``s C s^T`` over the deviation vectors of vehicle ``i``."""
    C = np.eye(2) if C is None else np.asarray(C, dtype=float).reshape(2, 2)
    s = deviation_vectors(log, i)
    if len(s) == 0:
        raise ValueError("episode log too short")
    return float(np.mean(np.einsum("ti,ij,tj->t", s, C, s)))


def comfort(log: EpisodeLog, i: int) -> float:
    """``1 - mean(((acc_t - acc_{t-1}) / acc_max)^2)``; 1 means perfectly smooth."""
    if log.n_steps < 2:
        raise ValueError("comfort needs at least two logged steps")
    d = np.diff(log.acc[:, i]) / log.acc_max
    return float(1.0 - np.mean(d * d))


def comfort_curve(log: EpisodeLog, i: int) -> np.ndarray:
    """Running comfort score: entry ``t - 1`` uses the jerk samples up to step ``t``."""
    if log.n_steps < 2:
        raise ValueError("comfort needs at least two logged steps")
    d = np.diff(log.acc[:, i]) / log.acc_max
    return 1.0 - np.cumsum(d * d) / np.arange(1, len(d) + 1)


@dataclass
class MetricTable:
    """Per-vehicle mean and standard deviation of each metric for each method."""
    vehicles: list[int]
    rows: dict[tuple[str, str], dict[str, list[float]]]  # (metric, method) -> {"mean", "std"}

    def to_json(self) -> str:
        out: dict = {"vehicles": [f"CAV_{v}" for v in self.vehicles]}
        for (metric, method), stats in self.rows.items():
            out.setdefault(metric, {})[method] = {k: [float(x) for x in v] for k, v in stats.items()}
        return json.dumps(out, indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "method", "statistic"] + [f"CAV_{v}" for v in self.vehicles])
            for (metric, method), stats in self.rows.items():
                for stat in ("mean", "std"):
                    if stat in stats:
                        w.writerow([metric, method, stat] + [repr(float(x)) for x in stats[stat]])

    @classmethod
    def read_csv(cls, path) -> "MetricTable":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:3] != ["metric", "method", "statistic"]:
                raise ValueError(f"{path}: not a metric table")
            vehicles = [int(h.split("_", 1)[1]) for h in header[3:]]
            rows: dict = {}
            for row in reader:
                values = [float(x) for x in row[3:]]
                if len(values) != len(vehicles):
                    raise ValueError(f"{path}: ragged row")
                rows.setdefault((row[0], row[1]), {})[row[2]] = values
        return cls(vehicles, rows)


def summarize(logs: Sequence[EpisodeLog], C: np.ndarray | None = None,
              method: str = "DCT-MARL") -> MetricTable:
    if not logs:
        raise ValueError("no episode logs to summarize")
    n = logs[0].n_vehicles
    vehicles = list(range(1, n))
    s = np.array([[string_stability(log, i, C) for i in vehicles] for log in logs])
    g = np.array([[comfort(log, i) for i in vehicles] for log in logs])
    rows = {
        (STABILITY, method): {"mean": list(s.mean(axis=0)), "std": list(s.std(axis=0))},
        (COMFORT, method): {"mean": list(g.mean(axis=0)), "std": list(g.std(axis=0))},
    }
    return MetricTable(vehicles, rows)


def mean_stability(logs: Iterable[EpisodeLog], C: np.ndarray | None = None) -> float:
    """Stability index averaged over followers and episodes."""
    vals = [string_stability(log, i, C) for log in logs for i in range(1, log.n_vehicles)]
    return float(np.mean(vals))
