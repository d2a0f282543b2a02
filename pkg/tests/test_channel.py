import math

import numpy as np
import pytest
from dataclasses import replace

from dctmarl.channel import (
    DeliveryQueue,
    Message,
    V2VNetwork,
    link_outcome,
    mean_snr_db,
    path_loss_db,
    rayleigh_outage,
    sample_links,
    sample_shadow,
)
from dctmarl.config import ChannelConfig, DelayDist
from dctmarl.dynamics import VehicleState

N_MC = 100_000


def test_path_loss_reference_and_decade():
    cfg = ChannelConfig()
    assert path_loss_db(cfg.ref_dist_d0, cfg) == pytest.approx(cfg.pl_intercept_A0)
    assert path_loss_db(10 * cfg.ref_dist_d0, cfg) == pytest.approx(cfg.pl_intercept_A0 + 21.5)
    assert path_loss_db(1.0, cfg, 2.5) == pytest.approx(cfg.pl_intercept_A0 + 2.5)
    with pytest.raises(ValueError):
        path_loss_db(0.0, cfg)
    with pytest.raises(ValueError):
        link_outcome(-1.0, cfg, np.random.default_rng(0))


def test_shadow_std():
    s = sample_shadow(ChannelConfig(shadow_sigma=3.0), np.random.default_rng(1), N_MC)
    assert abs(s.std() - 3.0) < 0.1


def _outage_cfg(d: float, offset_db: float) -> ChannelConfig:
    base = ChannelConfig(shadow_sigma=0.0)
    return replace(base, snr_threshold_db=mean_snr_db(d, base) + offset_db)


@pytest.mark.parametrize("d,offset_db", [(100.0, 0.0), (200.0, -5.0), (50.0, 3.0)])
def test_loss_rate_matches_rayleigh_outage(d, offset_db):
    cfg = _outage_cfg(d, offset_db)
    gbar = mean_snr_db(d, cfg)
    # independent oracle: brute-force exponential power draws
    g = np.random.default_rng(99).exponential(1.0, N_MC)
    oracle = np.mean(10 ** (gbar / 10) * g < 10 ** (cfg.snr_threshold_db / 10))
    analytic = 1 - math.exp(-(10 ** (offset_db / 10)))
    assert rayleigh_outage(gbar, cfg.snr_threshold_db) == pytest.approx(analytic, abs=1e-12)
    assert abs(oracle - analytic) < 0.01
    batch = sample_links(np.full(N_MC, d), cfg, np.random.default_rng(7))
    assert abs((1 - batch.delivered.mean()) - analytic) < 0.01


def test_equal_threshold_loss_is_one_minus_inverse_e():
    cfg = _outage_cfg(120.0, 0.0)
    batch = sample_links(np.full(N_MC, 120.0), cfg, np.random.default_rng(3))
    assert abs((1 - batch.delivered.mean()) - 0.6321) < 0.01


def test_infinite_negative_threshold_always_delivers():
    cfg = ChannelConfig(snr_threshold_db=-math.inf)
    batch = sample_links(np.full(1000, 5000.0), cfg, np.random.default_rng(0))
    assert batch.delivered.all()


def test_fixed_zero_delay():
    cfg = ChannelConfig(snr_threshold_db=-math.inf, delay_dist=DelayDist("fixed", 0))
    batch = sample_links(np.full(1000, 50.0), cfg, np.random.default_rng(0))
    assert (batch.delay_steps == 0).all()


@pytest.mark.parametrize("dist", ["uniform:0:9", "geometric:0.2", "fixed:7"])
def test_delay_capped(dist):
    cfg = ChannelConfig(snr_threshold_db=-math.inf, delay_dist=DelayDist.parse(dist), delay_cap=3)
    batch = sample_links(np.full(5000, 50.0), cfg, np.random.default_rng(0))
    assert batch.delay_steps.max() <= 3 and batch.delay_steps.min() >= 0


def test_geometric_delay_mean():
    cfg = ChannelConfig(snr_threshold_db=-math.inf, delay_dist=DelayDist("geometric", p=0.5), delay_cap=50)
    batch = sample_links(np.full(N_MC, 50.0), cfg, np.random.default_rng(4))
    # failures before first success: mean (1 - p) / p
    assert abs(batch.delay_steps.mean() - 1.0) < 0.02


def test_monotone_loss_in_distance():
    cfg = ChannelConfig()
    rates = []
    for d in [25.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1600.0]:
        b = sample_links(np.full(N_MC, d), cfg, np.random.default_rng(11))
        rates.append(1 - b.delivered.mean())
    assert all(b >= a - 0.01 for a, b in zip(rates, rates[1:]))
    assert rates[-1] > rates[0]


def test_forced_loss_probability():
    cfg = ChannelConfig(snr_threshold_db=-math.inf, extra_loss_prob=0.2)
    b = sample_links(np.full(N_MC, 50.0), cfg, np.random.default_rng(5))
    assert abs((1 - b.delivered.mean()) - 0.2) < 0.01


def test_seed_determinism():
    cfg = ChannelConfig()
    d = np.linspace(10, 500, 300)
    a = sample_links(d, cfg, np.random.default_rng(8))
    b = sample_links(d, cfg, np.random.default_rng(8))
    for f in ("delivered", "delay_steps", "rx_power_dbm", "snr_db"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_queue_arithmetic():
    q = DeliveryQueue()
    m = Message(1, 5, (0.0, 0.0, 0.0))
    q.push(0, 5 + 2, m)
    assert q.pop_due(0, 6) == []
    assert q.pop_due(0, 7) == [m]
    assert q.pop_due(0, 8) == [] and len(q) == 0


def _ideal(delay: str = "fixed:0", **kw) -> ChannelConfig:
    return ChannelConfig(snr_threshold_db=-math.inf, delay_dist=DelayDist.parse(delay), **kw)


def test_broadcast_ideal_two_vehicles():
    net = V2VNetwork(_ideal(), comm_range=300.0)
    states = [VehicleState(30.0, 10.0, 0.5), VehicleState(0.0, 9.0, -0.1)]
    out = net.broadcast(states, 0, np.random.default_rng(0))
    assert [d.message.payload for d in out[1]] == [(30.0, 10.0, 0.5)]
    assert [d.message.payload for d in out[0]] == [(0.0, 9.0, -0.1)]
    assert all(d.xi == 0 for ds in out.values() for d in ds)


def test_broadcast_delay_two_steps():
    net = V2VNetwork(_ideal("fixed:2"), comm_range=300.0)
    states = [VehicleState(30.0, 10.0), VehicleState(0.0, 9.0)]
    rng = np.random.default_rng(0)
    seen = {}
    for t in range(8):
        for d in net.broadcast(states, t, rng)[1]:
            seen.setdefault(d.message.send_step, d)
    d5 = seen[5]
    assert d5.receive_step == 7 and d5.xi == 2
    assert d5.xi * 0.1 == pytest.approx(0.2)


def test_out_of_range_no_link():
    net = V2VNetwork(_ideal(), comm_range=100.0, record_trace=True)
    states = [VehicleState(500.0, 10.0), VehicleState(0.0, 9.0)]
    out = net.broadcast(states, 0, np.random.default_rng(0))
    assert out[0] == [] and out[1] == [] and net.trace == []


def test_every_surfaced_message_was_sent_and_xi_exact():
    cfg = ChannelConfig(delay_dist=DelayDist("uniform", 0, 3), delay_cap=2)
    net = V2VNetwork(cfg, comm_range=300.0)
    rng = np.random.default_rng(21)
    states = [VehicleState(40.0 * (4 - k), 15.0) for k in range(5)]
    for t in range(200):
        for r, ds in net.broadcast(states, t, rng).items():
            for d in ds:
                assert (d.message.sender, r, d.message.send_step) in net.sent
                assert d.xi == t - d.message.send_step
                assert 0 <= d.xi <= cfg.delay_cap


def test_msg_interval_skips_steps():
    net = V2VNetwork(_ideal(), comm_range=300.0, msg_every=2)
    states = [VehicleState(30.0, 10.0), VehicleState(0.0, 9.0)]
    rng = np.random.default_rng(0)
    got = [len(net.broadcast(states, t, rng)[1]) for t in range(4)]
    assert got == [1, 0, 1, 0]


def test_trace_csv(tmp_path):
    net = V2VNetwork(ChannelConfig(), comm_range=300.0, record_trace=True)
    states = [VehicleState(30.0, 10.0), VehicleState(0.0, 9.0)]
    net.broadcast(states, 0, np.random.default_rng(0))
    p = tmp_path / "links.csv"
    net.write_trace_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,sender,receiver,distance_m,rx_dbm,snr_db,delivered,delay_steps"
    assert len(lines) == 3
