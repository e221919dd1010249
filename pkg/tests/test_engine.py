import math
from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_cfg
from copycat.attack import AttackVariant
from copycat.core import Role, US_PER_S, distance
from copycat.engine import (
    ScenarioConfig,
    Simulator,
    TopologyError,
    generate_topology,
    mean_ci,
    replicate,
    run,
    stream_rng,
)
from copycat.metrics import compute_report


def test_default_topology_shape():
    topo = generate_topology(ScenarioConfig(seed=1))
    roles = Counter(r for _, _, r in topo)
    # the five attackers are extra nodes on top of root + 30 sensors
    assert len(topo) == 36
    assert roles == {Role.ROOT: 1, Role.SENSOR: 30, Role.ATTACKER: 5}
    assert [i for i, _, _ in topo] == list(range(36))
    assert all(0 <= p.x <= 200 and 0 <= p.y <= 200 for _, p, _ in topo)


def test_topology_deterministic_and_shared_with_baseline():
    cfg = ScenarioConfig(seed=5)
    assert generate_topology(cfg) == generate_topology(cfg)
    clean = generate_topology(replace(cfg, n_attackers=0))
    assert all(r is not Role.ATTACKER for _, _, r in clean)
    assert clean == generate_topology(cfg)[:31]


@given(st.integers(0, 2**32))
@settings(max_examples=30, deadline=None)
def test_topology_is_connected(seed):
    topo = generate_topology(ScenarioConfig(seed=seed))
    legit = [p for _, p, r in topo if r is not Role.ATTACKER]
    seen, todo = {0}, [0]
    while todo:
        a = todo.pop()
        for b, q in enumerate(legit):
            if b not in seen and distance(legit[a], q) <= 50.0:
                seen.add(b)
                todo.append(b)
    assert len(seen) == len(legit)


def test_impossible_topology():
    with pytest.raises(TopologyError):
        generate_topology(ScenarioConfig(area_m=1e6, n_sensors=3))


def test_streams_independent():
    a = stream_rng(1, 3, 4).random()
    assert a == stream_rng(1, 3, 4).random()
    assert len({a, stream_rng(1, 3, 5).random(), stream_rng(1, 4, 4).random(), stream_rng(2, 3, 4).random()}) == 4


@pytest.fixture(scope="module")
def baseline_trace():
    return run(ScenarioConfig(seed=1), check_invariants=True)


def test_baseline_generates_thirty_per_sensor(baseline_trace):
    gen = Counter(r[2] for r in baseline_trace.log if r[1] == "gen")
    assert set(gen) == set(baseline_trace.legit_sensors)
    assert set(gen.values()) == {math.floor(1800 / 60)}
    assert baseline_trace.violations == []
    assert baseline_trace.replay_times == {} or not any(baseline_trace.replay_times.values())


def test_no_event_after_end(baseline_trace):
    end = baseline_trace.end_us
    # energy bins are closed at the end instant; nothing else may be stamped there
    closing = {"chk", "bin", "E"}
    assert max(r[0] for r in baseline_trace.log if r[1] not in closing) < end
    assert max(r[0] for r in baseline_trace.log) == end
    for n in range(len(baseline_trace.roles)):
        assert sum(baseline_trace.totals(n)) == baseline_trace.end_us


def test_zero_duration_is_empty():
    tr = run(ScenarioConfig(sim_seconds=0))
    assert tr.log == [] and tr.generated == 0 and tr.deliveries == {} and tr.dio_rx == []
    assert all(sum(tr.totals(n)) == 0 for n in range(len(tr.roles)))


@pytest.mark.parametrize("variant", [AttackVariant.NON_SPOOFED, AttackVariant.SPOOFED])
def test_no_replay_before_activation(variant):
    tr = run(ScenarioConfig(seed=2, sim_seconds=200.0, attack_variant=variant))
    act = 90 * US_PER_S
    assert tr.replay_times and all(t >= act for ts in tr.replay_times.values() for t in ts)
    attackers = {i for i, r in enumerate(tr.roles) if r is Role.ATTACKER}
    assert not [r for r in tr.log if r[1] == "tx" and r[2] in attackers and r[0] < act]


def test_same_seed_same_trace():
    cfg = small_cfg(seed=8, attack_variant=AttackVariant.SPOOFED)
    assert run(cfg).log == run(cfg).log


def test_replications_do_not_depend_on_order():
    cfg = small_cfg(seed=20, replications=3, attack_variant=AttackVariant.NON_SPOOFED)
    together = replicate(cfg).reports
    alone = [compute_report(run(replace(cfg, seed=20 + k), record=False)) for k in (2, 0, 1)]
    assert [together[k] for k in (2, 0, 1)] == alone


def test_replicate_summary():
    s = replicate(small_cfg(seed=1, replications=3))
    assert len(s.reports) == 3 and set(s.mean) == {"pdr", "app_pdr", "ae2ed_s", "apc_mw"}
    assert all(s.ci95[k] is not None for k in s.mean)
    one = replicate(small_cfg(seed=1, replications=1))
    assert all(v is None for v in one.ci95.values())


def test_mean_ci_values():
    assert mean_ci([]) == (None, None)
    assert mean_ci([None, 2.0]) == (2.0, None)
    m, h = mean_ci([1.0, 2.0, 3.0])
    # t(0.975, 2) = 4.302653; sd = 1
    assert m == 2.0 and h == pytest.approx(4.302653 / math.sqrt(3), rel=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(replay_interval_s=0)
    with pytest.raises(ValueError):
        ScenarioConfig(dio_imin_s=10, dio_imax_s=5)
    with pytest.raises(ValueError):
        ScenarioConfig(seed=-1)
