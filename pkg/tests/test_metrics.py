import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dctmarl.config import ScenarioConfig
from dctmarl.metrics import (
    COMFORT,
    STABILITY,
    EpisodeLog,
    MetricTable,
    comfort,
    string_stability,
    summarize,
)

SCEN = ScenarioConfig()


def make_log(pos, vel, acc=None, scen=SCEN):
    pos = np.asarray(pos, float)
    vel = np.asarray(vel, float)
    acc = np.zeros_like(pos) if acc is None else np.asarray(acc, float)
    z = np.zeros_like(pos)
    return EpisodeLog(pos, vel, acc, z.copy(), z.copy(), z.copy(), scen.dt, scen.headway_h,
                      scen.standstill_d0, scen.vehicle_len_l, scen.acc_max)


def perfect_log(steps=50, n=4, v=15.0):
    spacing = SCEN.vehicle_len_l + SCEN.standstill_d0 + SCEN.headway_h * v
    t = np.arange(steps)[:, None] * SCEN.dt
    pos = v * t + spacing * (n - 1 - np.arange(n))[None, :]
    return make_log(pos, np.full((steps, n), v))


def test_perfect_tracking():
    log = perfect_log()
    for i in range(1, 4):
        assert string_stability(log, i) == pytest.approx(0.0, abs=1e-20)
        assert comfort(log, i) == 1.0


def test_constant_deviation_gives_one():
    # standstill platoon keeps every position exactly representable
    log = perfect_log(v=0.0)
    log.pos[:, 2:] -= 1.0        # vehicle 2 one metre too far back: gap error +1 to vehicle 1
    assert string_stability(log, 2) == 1.0
    assert string_stability(log, 3) == 0.0
    assert string_stability(log, 2, np.zeros((2, 2))) == 0.0
    moving = perfect_log(v=15.0)
    moving.pos[:, 2:] -= 1.0
    assert abs(string_stability(moving, 2) - 1.0) <= 1e-12


def test_alternating_acceleration_comfort():
    log = perfect_log(steps=41)
    log.acc[:, 1] = SCEN.acc_max * (-1.0) ** np.arange(41)
    assert comfort(log, 1) == -3.0


def test_errors():
    log = perfect_log(steps=1)
    with pytest.raises(ValueError):
        string_stability(perfect_log(), 0)
    with pytest.raises(ValueError):
        comfort(log, 1)


def hand_stability(log, i, C):
    total = 0.0
    for t in range(1, log.n_steps):
        gap = log.pos[t, i - 1] - log.pos[t, i] - log.vehicle_len_l
        dh = gap - (log.standstill_d0 + log.headway_h * log.vel[t, i])
        dv = log.vel[t, i - 1] - log.vel[t, i]
        total += C[0][0] * dh * dh + (C[0][1] + C[1][0]) * dh * dv + C[1][1] * dv * dv
    return total / (log.n_steps - 1)


def hand_comfort(log, i):
    total = 0.0
    for t in range(1, log.n_steps):
        d = (log.acc[t, i] - log.acc[t - 1, i]) / log.acc_max
        total += d * d
    return 1.0 - total / (log.n_steps - 1)


@pytest.mark.parametrize("seed", range(5))
def test_random_logs_match_hand_computation(seed):
    rng = np.random.default_rng(seed)
    steps, n = 30, 4
    log = perfect_log(steps, n)
    log.pos += rng.normal(size=log.pos.shape)
    log.vel += rng.normal(size=log.vel.shape)
    log.acc = rng.uniform(-3, 3, size=log.acc.shape)
    A = rng.normal(size=(2, 2))
    C = A @ A.T
    for i in range(1, n):
        assert abs(string_stability(log, i, C) - hand_stability(log, i, C.tolist())) <= 1e-12
        assert abs(comfort(log, i) - hand_comfort(log, i)) <= 1e-12


def test_halving_deltas_raises_comfort():
    rng = np.random.default_rng(0)
    log = perfect_log(steps=30)
    acc = rng.uniform(-3, 3, 30)
    vals = []
    for k in range(5):
        log.acc[:, 1] = acc * 0.5 ** k
        vals.append(comfort(log, 1))
    assert all(b > a for a, b in zip(vals, vals[1:])) and vals[-1] <= 1


@settings(max_examples=50)
@given(st.floats(-3, 3), st.integers(0, 100))
def test_comfort_shift_invariant(c, seed):
    rng = np.random.default_rng(seed)
    log = perfect_log(steps=20)
    log.acc[:, 1] = rng.uniform(-1, 1, 20)
    a = comfort(log, 1)
    log.acc[:, 1] += c
    assert comfort(log, 1) == pytest.approx(a, abs=1e-12)


def test_summarize_examples_and_permutation():
    table = summarize([perfect_log()])
    assert table.rows[(STABILITY, "DCT-MARL")]["mean"] == pytest.approx([0, 0, 0])
    assert table.rows[(COMFORT, "DCT-MARL")]["mean"] == [1.0, 1.0, 1.0]
    rng = np.random.default_rng(0)
    logs = []
    for _ in range(3):
        lg = perfect_log()
        lg.pos += rng.normal(size=lg.pos.shape) * 0.3
        logs.append(lg)
    dup = summarize([logs[0], logs[0]])
    assert dup.rows[(STABILITY, "DCT-MARL")]["std"] == [0.0, 0.0, 0.0]
    a, b = summarize(logs), summarize(logs[::-1])
    for key in a.rows:
        assert np.allclose(a.rows[key]["mean"], b.rows[key]["mean"], atol=1e-14)
        assert np.allclose(a.rows[key]["std"], b.rows[key]["std"], atol=1e-14)
    with pytest.raises(ValueError):
        summarize([])


def test_five_vehicle_row_round_trips(tmp_path):
    row = [0.086, 0.097, 0.088, 0.112, 0.103]
    table = MetricTable([1, 2, 3, 4, 5], {(STABILITY, "DCT-MARL"): {"mean": row}})
    p = tmp_path / "t.csv"
    table.write_csv(p)
    back = MetricTable.read_csv(p)
    assert back.rows[(STABILITY, "DCT-MARL")]["mean"] == row
    js = json.loads(back.to_json())
    assert js["vehicles"] == [f"CAV_{k}" for k in range(1, 6)]
    assert js[STABILITY]["DCT-MARL"]["mean"] == row


def test_episode_log_csv_round_trip(tmp_path):
    log = perfect_log(steps=7, n=3)
    log.acc += 0.25
    log.xi[:, 1] = 2
    p = tmp_path / "ep.csv"
    log.write_csv(p)
    assert p.read_text().splitlines()[0] == "step,vehicle,pos,vel,acc,u,reward,xi_steps"
    back = EpisodeLog.read_csv(p, SCEN)
    for f in ("pos", "vel", "acc", "u", "reward", "xi"):
        assert np.array_equal(getattr(back, f), getattr(log, f))


def test_non_rectangular_log_rejected():
    with pytest.raises(ValueError):
        EpisodeLog(np.zeros((3, 2)), np.zeros((3, 3)), np.zeros((3, 2)), np.zeros((3, 2)),
                   np.zeros((3, 2)), np.zeros((3, 2)), 0.1, 1, 2, 4, 3)
