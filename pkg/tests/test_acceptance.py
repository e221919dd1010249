"""Acceptance criteria, each checked at its stated tolerance.

The full grid (baseline plus both variants at 1-4 s, ten seeds each, 36
nodes, 1800 s) runs once per session. Every criterion records a PASS/FAIL
line that is printed in the terminal summary.
"""
import math
import random
import time
from dataclasses import replace

import pytest

from copycat.attack import AttackVariant, replay_packet
from copycat.cli import grid_cells, main
from copycat.core import Role, US_PER_S, distance
from copycat.detect import monitor, n_windows
from copycat.energy import EnergyLedger, ElectricalProfile, energy_mj
from copycat.engine import ScenarioConfig, run
from copycat.metrics import check_oracle, compute_report
from copycat.rpl import ObjectiveFunction

SEEDS = range(1, 11)
GRID_BUDGET_S = 600.0
RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def _claimed(tr, a):
    # the id carried by this attacker's replays, as its neighbours see it
    pkt = replay_packet(tr.nodes[a].state, a)
    return pkt.claimed_source if pkt is not None else None


def _summarize(tr):
    """Everything the criteria need from one run, so traces can be dropped."""
    rep = compute_report(tr, series=False)
    act = int(tr.cfg.attacker_activation_s * US_PER_S)
    gaps = set()
    for ts in tr.replay_times.values():
        gaps |= {b - a for a, b in zip(ts, ts[1:])}
    conservation = all(
        sum(tr.totals(n)) == tr.end_us
        and all(abs(sum(b) - min(tr.bin_us, tr.end_us - i * tr.bin_us)) <= 1 for i, b in enumerate(tr.bins[n]))
        for n in range(len(tr.roles))
    )
    out = dict(
        report=rep,
        violations=list(tr.violations),
        mrhof_out_of_range=[v for v in tr.violations if "out-of-range parent" in v],
        early_replays=sum(t < act for ts in tr.replay_times.values() for t in ts),
        early_captures=sum(t < act for t in tr.capture_times.values()),
        replays=sum(len(ts) for ts in tr.replay_times.values()),
        gaps=gaps,
        conservation=conservation,
    )
    if not tr.cfg.attacked or tr.cfg.replay_interval_s == 1.0:
        recs = monitor(tr)
        windows = n_windows(tr, tr.cfg.detector_window_s)
        legit = [i for i, r in enumerate(tr.roles) if r is not Role.ATTACKER]
        out["fp"] = (len({(r.window_start_s, r.observer_id) for r in recs}), len(legit) * windows)
        if tr.cfg.attacked:
            flagged = {(r.window_start_s, r.observer_id, r.flagged_id) for r in recs}
            post = [w * tr.cfg.detector_window_s for w in range(windows)
                    if w * tr.cfg.detector_window_s >= tr.cfg.attacker_activation_s]
            pairs = []
            for a, role in enumerate(tr.roles):
                claimed = _claimed(tr, a) if role is Role.ATTACKER else None
                if claimed is None:
                    continue
                for n in legit:
                    if distance(tr.positions[n], tr.positions[a]) <= tr.cfg.radio.comm_range_m:
                        pairs.append(sum((w, n, claimed) in flagged for w in post) / len(post))
            out["pairs"] = pairs
    return out


@pytest.fixture(scope="module")
def grid():
    base = ScenarioConfig()
    cells = {}
    t0 = time.perf_counter()
    for name, cfg in grid_cells(base):
        cells[name] = (cfg, [_summarize(run(replace(cfg, seed=s), record=False, check_invariants=True))
                             for s in SEEDS])
    return cells, time.perf_counter() - t0


def _mean(runs, key):
    xs = [getattr(r["report"], key) for r in runs]
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs)


def _attacked(cells):
    return [(n, c, r) for n, (c, r) in cells.items() if c.attacked]


def test_grid_runtime(grid):
    _, elapsed = grid
    assert report(0, elapsed < GRID_BUDGET_S,
                  f"full grid 9 cells x 10 seeds in {elapsed:.0f} s (budget {GRID_BUDGET_S:.0f} s, invariant checks on)")


def test_c1_baseline_health(grid):
    cells, _ = grid
    runs = cells["baseline"][1]
    app, delay = _mean(runs, "app_pdr"), _mean(runs, "ae2ed_s")
    assert report(1, app >= 0.95 and delay < 1.0, f"baseline app_pdr {app:.3f} (>= 0.95), AE2ED {delay:.3f} s (< 1 s)")


def test_c2_attack_degrades_pdr(grid):
    cells, _ = grid
    base = _mean(cells["baseline"][1], "app_pdr")
    worst = max(_mean(r, "app_pdr") / base for _, _, r in _attacked(cells))
    direction = all(
        _mean(cells[f"non_spoofed_{iv:g}s"][1], "app_pdr") <= _mean(cells[f"spoofed_{iv:g}s"][1], "app_pdr")
        for iv in (1.0, 2.0, 3.0, 4.0))
    ok = worst <= 0.8 and direction
    assert report(2, ok, f"largest attacked/baseline app_pdr ratio {worst:.3f} (<= 0.80); "
                         f"non-spoofed <= spoofed at every interval: {direction}")


def test_c3_attack_inflates_delay(grid):
    cells, _ = grid
    base = _mean(cells["baseline"][1], "ae2ed_s")
    worst = min(_mean(r, "ae2ed_s") / base for _, _, r in _attacked(cells))
    assert report(3, worst >= 5.0, f"smallest attacked/baseline AE2ED ratio {worst:.2f} (>= 5)")


def test_c4_attack_inflates_power(grid):
    cells, _ = grid
    base = _mean(cells["baseline"][1], "apc_mw")
    worst = min(_mean(r, "apc_mw") / base for _, _, r in _attacked(cells))
    assert report(4, worst >= 2.0, f"smallest attacked/baseline APC ratio {worst:.2f} (>= 2)")


def test_c5_mrhof_immunity_and_of0_adoption(grid):
    cells, _ = grid
    bad = sum(len(x["mrhof_out_of_range"]) for _, _, r in _attacked(cells) for x in r)
    adoptions = 0
    for s in SEEDS:
        cfg = ScenarioConfig(seed=s, attack_variant=AttackVariant.SPOOFED,
                             objective_function=ObjectiveFunction.OF0)
        tr = run(cfg, record=False)
        adoptions += sum(1 for _, node, _, _, in_range in tr.parent_events
                         if not in_range and tr.roles[node] is Role.SENSOR)
    assert report(5, bad == 0 and adoptions >= 1,
                  f"MRHOF out-of-range parent instants {bad} (== 0); OF0 spoofed adoption events {adoptions} (>= 1)")


def test_c6_protocol_properties(grid):
    cells, _ = grid
    allruns = [x for _, r in cells.values() for x in r]
    violations = sum(len(x["violations"]) for x in allruns)
    early = sum(x["early_replays"] + x["early_captures"] for x in allruns)
    gaps_ok = all(x["gaps"] <= {round(c.replay_interval_s * US_PER_S)} for _, c, r in _attacked(cells) for x in r)
    replays = sum(x["replays"] for _, _, r in _attacked(cells) for x in r)
    ok = violations == 0 and early == 0 and gaps_ok and replays > 0
    assert report(6, ok, f"runtime invariant violations {violations} (trickle bounds, one DIO per interval, rank rule, "
                         f"acyclic <= N hops); attacker activity before 90 s {early}; "
                         f"replay gaps exact: {gaps_ok} over {replays} replays")


def test_c7_determinism(tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["--grid", "--replications", "1", "--seed", "3", "--out", str(o)]) for o in outs]
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("summary.csv", "node_power.csv", "summary_ci.csv", "detector_flags.csv"))
    assert report(7, codes == [0, 0] and same, f"two grid invocations byte-identical: {same}")


def test_c8_metrics_oracle():
    rng = random.Random(8)
    n = 0
    for _ in range(60):
        cfg = ScenarioConfig(
            area_m=rng.choice([60.0, 80.0, 100.0]), n_sensors=3, n_attackers=1, sim_seconds=120.0,
            attacker_activation_s=30.0, data_interval_s=10.0, replications=1, seed=rng.randrange(2**32),
            attack_variant=rng.choice(list(AttackVariant)), replay_interval_s=rng.choice([1.0, 2.0, 3.0, 4.0]),
            objective_function=rng.choice(list(ObjectiveFunction)))
        check_oracle(run(cfg))
        n += 1
    assert report(8, n >= 50, f"oracle equals incremental metrics exactly on {n} random 5-node 120 s scenarios")


def test_c9_energy_conservation(grid):
    cells, _ = grid
    conserved = all(x["conservation"] for _, r in cells.values() for x in r)
    hand = 1800 * 0.020 * 3.0  # s x mA x V
    got = energy_mj(EnergyLedger(t_lpm=1800.0), ElectricalProfile())
    ok = conserved and math.isclose(got, hand) and math.isclose(got, 108.0)
    assert report(9, ok, f"per-node and per-bin time partition exact to 1 us: {conserved}; "
                         f"all-LPM 1800 s energy {got:.3f} mJ (hand 108 mJ)")


def test_c10_detector(grid):
    cells, _ = grid
    flagged = sum(x["fp"][0] for x in cells["baseline"][1])
    total = sum(x["fp"][1] for x in cells["baseline"][1])
    fp = flagged / total
    pairs = [p for name in ("non_spoofed_1s", "spoofed_1s") for x in cells[name][1] for p in x["pairs"]]
    low = sum(p < 0.9 for p in pairs)
    ok = fp <= 0.05 and low == 0
    assert report(10, ok, f"baseline flagged windows {fp:.3%} (<= 5%); neighbour/attacker pairs below 90% "
                          f"detection {low}/{len(pairs)} (== 0), mean detection {sum(pairs) / len(pairs):.2f}")
