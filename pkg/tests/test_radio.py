import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import line_topology
from copycat.attack import AttackVariant
from copycat.core import BROADCAST, Packet, PacketKind, Position
from copycat.engine import ScenarioConfig, Simulator, stream_rng
from copycat.radio import Medium, RadioParams, Transmission, airtime, resolve_collisions


def _tx(sender, start=0, end=100):
    pkt = Packet(PacketKind.DIO, sender, sender, BROADCAST, 80, 0, 1, payload_rank=256)
    return Transmission(sender, pkt, start, end, end - start)


def test_airtime_examples():
    assert airtime(30) == pytest.approx(240 / 250_000)
    assert airtime(125) == pytest.approx(1000 / 250_000)
    with pytest.raises(ValueError):
        airtime(0)


@given(st.integers(1, 2048))
def test_airtime_is_linear_in_size(n):
    assert airtime(2 * n) == pytest.approx(2 * airtime(n))


def test_params_validation():
    with pytest.raises(ValueError):
        RadioParams(comm_range_m=120, interference_range_m=100)
    with pytest.raises(ValueError):
        RadioParams(base_loss_prob=1.0)
    RadioParams(base_loss_prob=0.0)


def test_resolve_collisions_examples():
    rng = random.Random(1)
    assert resolve_collisions([], rng, 0.0) is None
    a, b = _tx(1), _tx(2)
    assert resolve_collisions([a], rng, 0.0) is a
    assert resolve_collisions([a, b], rng, 0.0) is None


def test_lone_frame_delivery_ratio():
    # 10^4 seeded trials of a lone frame at 40 m
    rng = stream_rng(7, 99)
    frame = _tx(1)
    n = 10_000
    ok = sum(resolve_collisions([frame], rng, 0.05) is not None for _ in range(n))
    assert abs(ok / n - 0.95) <= 0.01


@given(st.integers(0, 2**32))
def test_lossless_single_frame_always_decoded(seed):
    rng = random.Random(seed)
    frame = _tx(1)
    assert all(resolve_collisions([frame], rng, 0.0) is frame for _ in range(50))


def test_medium_ranges():
    pos = [Position(0, 0), Position(40, 0), Position(60, 0), Position(140, 0)]
    m = Medium(pos, RadioParams())
    assert m.in_range(0, 1) and not m.in_range(0, 2)
    # 60 m is out of reach but still interferes
    assert 2 in m.audible[0] and 3 not in m.audible[0]
    assert set(m.comm[0]) == {1}


def _collect_occupancy(sim):
    spans = {}
    add = sim.medium.add

    def spy(tx):
        # a strobe may be cut short later, so keep the object itself
        spans.setdefault(tx.sender, []).append(tx)
        add(tx)

    sim.medium.add = spy
    return spans


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_sender_occupancy_never_overlaps(seed):
    cfg = ScenarioConfig(area_m=120, n_sensors=8, sim_seconds=300, seed=seed,
                         attack_variant=AttackVariant.NON_SPOOFED, attacker_activation_s=60)
    sim = Simulator(cfg)
    spans = _collect_occupancy(sim)
    sim.run()
    for sender, txs in spans.items():
        iv = sorted((tx.start, tx.end) for tx in txs)
        for (a0, a1), (b0, b1) in zip(iv, iv[1:]):
            assert a1 <= b0, f"node {sender} overlaps itself"


def test_no_delivery_beyond_comm_range():
    # sensor at 60 m can never hear the root, so it never joins or delivers
    topo = line_topology(1, spacing=60.0)
    topo = [(0, topo[0][1], topo[0][2]), (1, Position(60.0, 0.0), topo[1][2])]
    cfg = ScenarioConfig(n_sensors=1, n_attackers=0, sim_seconds=300)
    tr = Simulator(cfg, topology=topo).run()
    assert not tr.deliveries
    assert all(rec[1] != "deliver" for rec in tr.log)
    assert not any(obs == 1 for _, obs, _ in tr.dio_rx)


def test_isolated_lossless_link_delivers_everything():
    cfg = ScenarioConfig(n_sensors=1, n_attackers=0, sim_seconds=1800, radio=RadioParams(base_loss_prob=0.0))
    tr = Simulator(cfg, topology=line_topology(1, spacing=40.0)).run()
    assert tr.generated == 30
    assert len(tr.deliveries) == 30
    assert tr.data_retx == 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_deliveries_only_between_neighbours(seed):
    cfg = ScenarioConfig(area_m=150, n_sensors=6, n_attackers=0, sim_seconds=200, seed=seed)
    sim = Simulator(cfg)
    heard = []
    deliver = sim._deliver

    def spy(arg):
        node, (tx, _) = arg
        heard.append((tx.sender, node))
        deliver(arg)

    sim._deliver = spy
    sim.run()
    assert heard
    for sender, node in heard:
        assert sim.medium.in_range(sender, node)
