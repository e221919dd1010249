"""Deterministic discrete-event engine, topology generation and replications.

Events are ordered by ``(time_us, EventKind priority, insertion seq)``, which
is a total order, so a run is a pure function of its configuration.
"""
from __future__ import annotations

import heapq
import math
import random
from collections import Counter, deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from copycat.attack import AttackerState, AttackVariant, CopycatAttacker
from copycat.core import (
    BROADCAST,
    FRAME_BYTES,
    ROOT_ID,
    EventKind,
    Packet,
    PacketKind,
    Position,
    Role,
    US_PER_S,
    distance,
    to_us,
)
from copycat.energy import DutyCycle, ElectricalProfile, NodeMeter, PowerState
from copycat.radio import Mac, Medium, RadioParams, Transmission, resolve_collisions
from copycat.rpl import ObjectiveFunction, RplNode

TOPOLOGY_RETRIES = 100
# bins are closed this long after their end so late-credited strobes land first
SAMPLE_LAG_US = 1 * US_PER_S

_STREAM_TOPOLOGY = 1
_STREAM_ATTACKERS = 2
_STREAM_NODE = 3
_STREAM_MAC = 4
_STREAM_LOSS = 5


class TopologyError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    area_m: float = 200.0
    n_sensors: int = 30
    n_attackers: int = 5
    sim_seconds: float = 1800.0
    objective_function: ObjectiveFunction = ObjectiveFunction.MRHOF
    dio_imin_s: float = 4.0
    dio_imax_s: float = 1050.0
    replay_interval_s: float = 1.0
    data_interval_s: float = 60.0
    data_size_bytes: int = 30
    tx_power_dbm: float = 0.0
    attacker_activation_s: float = 90.0
    attack_variant: AttackVariant = AttackVariant.NONE
    seed: int = 1
    replications: int = 10
    detector_window_s: float = 60.0
    detector_fence_k: float = 1.5
    power_bin_s: float = 60.0
    radio: RadioParams = field(default_factory=RadioParams)
    energy: ElectricalProfile = field(default_factory=ElectricalProfile)
    duty: DutyCycle = field(default_factory=DutyCycle)

    def __post_init__(self):
        checks = [
            (self.area_m > 0, "area_m", "must be positive"),
            (self.n_sensors >= 1, "n_sensors", "must be >= 1"),
            (self.n_attackers >= 0, "n_attackers", "must be >= 0"),
            (self.sim_seconds >= 0, "sim_seconds", "must be >= 0"),
            (0 < self.dio_imin_s <= self.dio_imax_s, "dio_imin_s", "need 0 < dio_imin_s <= dio_imax_s"),
            (self.replay_interval_s > 0, "replay_interval_s", "must be positive"),
            (self.data_interval_s > 0, "data_interval_s", "must be positive"),
            (self.data_size_bytes > 0, "data_size_bytes", "must be positive"),
            (self.attacker_activation_s >= 0, "attacker_activation_s", "must be >= 0"),
            (0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer"),
            (self.replications >= 1, "replications", "must be >= 1"),
            (self.detector_window_s > 0, "detector_window_s", "must be positive"),
            (self.detector_fence_k >= 0, "detector_fence_k", "must be >= 0"),
            (self.power_bin_s > 0, "power_bin_s", "must be positive"),
        ]
        for ok, key, msg in checks:
            if not ok:
                raise ValueError(f"{key}: {msg}")

    @property
    def attacked(self) -> bool:
        return self.attack_variant is not AttackVariant.NONE and self.n_attackers > 0


def stream_rng(seed: int, stream: int, node: int = 0) -> random.Random:
    """Independent RNG per (seed, purpose, node)."""
    state = np.random.SeedSequence([seed, stream, node]).generate_state(2, dtype=np.uint64)
    return random.Random(int(state[0]) << 64 | int(state[1]))


def _reachable(positions: Sequence[Position], comm_range: float) -> bool:
    n = len(positions)
    seen = {0}
    todo = deque([0])
    while todo:
        i = todo.popleft()
        for j in range(n):
            if j not in seen and distance(positions[i], positions[j]) <= comm_range:
                seen.add(j)
                todo.append(j)
    return len(seen) == n


def generate_topology(cfg: ScenarioConfig, rng: Optional[random.Random] = None) -> List[Tuple[int, Position, Role]]:
    """Place the root, the sensors and the attackers uniformly in the area.

    Legitimate placements are redrawn until every sensor has a multi-hop path
    to the root. Attackers come from a separate stream and are appended after
    the sensors, so a baseline and an attacked run with the same seed share
    the same legitimate layout.
    """
    rng = rng or stream_rng(cfg.seed, _STREAM_TOPOLOGY)
    side = cfg.area_m
    for _ in range(TOPOLOGY_RETRIES):
        legit = [Position(rng.uniform(0, side), rng.uniform(0, side)) for _ in range(cfg.n_sensors + 1)]
        if _reachable(legit, cfg.radio.comm_range_m):
            break
    else:
        raise TopologyError(f"no connected placement after {TOPOLOGY_RETRIES} tries")
    arng = stream_rng(cfg.seed, _STREAM_ATTACKERS)
    attackers = [Position(arng.uniform(0, side), arng.uniform(0, side)) for _ in range(cfg.n_attackers)]
    out = [(0, legit[0], Role.ROOT)]
    out += [(i, p, Role.SENSOR) for i, p in enumerate(legit[1:], start=1)]
    out += [(len(legit) + i, p, Role.ATTACKER) for i, p in enumerate(attackers)]
    return out


@dataclass
class Trace:
    """Everything a finished run leaves behind."""

    cfg: ScenarioConfig
    end_us: int
    roles: List[Role]
    positions: List[Position]
    log: List[tuple]
    bins: List[List[Tuple[int, int, int, int]]]  # per node: (cpu, lpm, tx, rx) µs per bin
    bin_us: int
    generated: int
    data_retx: int
    deliveries: Dict[int, Tuple[int, int, int]]  # uid -> (origin, created_at, arrived_at)
    drops: Counter
    dio_rx: List[Tuple[int, int, int]]  # (t, observer, claimed)
    replay_times: Dict[int, List[int]]
    capture_times: Dict[int, int]
    parent_events: List[tuple]  # (t, node, parent, rank, in_range)
    violations: List[str]
    nodes: list = field(repr=False, default_factory=list)

    @property
    def legit_sensors(self) -> List[int]:
        return [i for i, r in enumerate(self.roles) if r is Role.SENSOR]

    def totals(self, node: int) -> Tuple[int, int, int, int]:
        cpu = lpm = tx = rx = 0
        for c, l, t, r in self.bins[node]:
            cpu += c
            lpm += l
            tx += t
            rx += r
        return cpu, lpm, tx, rx


class Simulator:
    """One simulation run. Not thread-safe; owns all of its state."""

    def __init__(self, cfg: ScenarioConfig, topology=None, record=True, check_invariants=False):
        self.cfg = cfg
        self.record = record
        self.check = check_invariants
        self.end = to_us(cfg.sim_seconds)
        self.now = 0
        self._q: list = []
        self._seq = 0
        self.wake_us = to_us(cfg.duty.wake_interval_s)
        self.check_us = to_us(cfg.duty.check_s)
        self._cpu_us = to_us(cfg.duty.cpu_per_op_s)
        self._air: Dict[int, int] = {}
        self._loss = cfg.radio.base_loss_prob
        self.bin_us = to_us(cfg.power_bin_s)

        if topology is None:
            topology = generate_topology(cfg)
        if not cfg.attacked:
            topology = [t for t in topology if t[2] is not Role.ATTACKER]
        topology = sorted(topology)
        if [t[0] for t in topology] != list(range(len(topology))):
            raise ValueError("node ids must be 0..n-1")
        self.positions = [t[1] for t in topology]
        self.roles = [t[2] for t in topology]
        self.n = len(topology)
        self.medium = Medium(self.positions, cfg.radio)
        self._keep_us = 2 * (self.wake_us + self.air_us(255))

        seed = cfg.seed
        self.loss_rng = [stream_rng(seed, _STREAM_LOSS, i) for i in range(self.n)]
        self.macs: List[Mac] = []
        self.nodes: list = []
        self.phase: List[int] = []
        self.meters: List[NodeMeter] = []
        for i, role in enumerate(self.roles):
            prng = stream_rng(seed, _STREAM_NODE, i)
            phase = int(prng.random() * self.wake_us)
            self.phase.append(phase)
            self.meters.append(NodeMeter(self.end, self.bin_us, phase, self.wake_us, self.check_us))
            mac = Mac(self, i, stream_rng(seed, _STREAM_MAC, i))
            self.macs.append(mac)
            if role is Role.ATTACKER:
                st = AttackerState(cfg.attack_variant, to_us(cfg.replay_interval_s), to_us(cfg.attacker_activation_s))
                self.nodes.append(CopycatAttacker(self, i, st, mac))
            else:
                self.nodes.append(RplNode(self, i, role, cfg.objective_function, prng, mac))

        self.log: List[tuple] = []
        self.generated = 0
        self.data_retx = 0
        self.deliveries: Dict[int, Tuple[int, int, int]] = {}
        self.drops: Counter = Counter()
        self.dio_rx: List[Tuple[int, int, int]] = []
        self.replay_times: Dict[int, List[int]] = {i: [] for i, r in enumerate(self.roles) if r is Role.ATTACKER}
        self.capture_times: Dict[int, int] = {}
        self.parent_events: List[tuple] = []
        self.violations: List[str] = []
        self._uid = 0
        self._bins: List[List[tuple]] = [[] for _ in range(self.n)]
        self._closed = 0

    # -- scheduling -------------------------------------------------------

    def _push(self, t, prio, cb, arg):
        self._seq += 1
        heapq.heappush(self._q, (t, prio, self._seq, cb, arg))

    def timer(self, t, cb, arg, target=None, kind=EventKind.TIMER_FIRE):
        self._seq += 1
        heapq.heappush(self._q, (t, kind, self._seq, cb, arg))

    def rx_event(self, t, node, arg):
        self._seq += 1
        heapq.heappush(self._q, (t, EventKind.RX_DELIVER, self._seq, self._deliver, (node, arg)))

    def tx_end_event(self, t, node, tx):
        self._seq += 1
        heapq.heappush(self._q, (t, EventKind.TX_END, self._seq, self._tx_end, tx))

    def air_us(self, size: int) -> int:
        a = self._air.get(size)
        if a is None:
            a = self._air[size] = to_us(size * 8 / self.cfg.radio.bitrate_bps)
        return a

    def next_wake(self, node: int, t: int) -> int:
        p = self.phase[node]
        w = self.wake_us
        return p + -(-(t - p) // w) * w

    def new_uid(self) -> int:
        self._uid += 1
        return self._uid

    # -- main loop --------------------------------------------------------

    def run(self) -> Trace:
        if self.end > 0:
            for node in self.nodes:
                node.boot()
            b = self.bin_us
            i = 0
            while (i + 1) * b < self.end:
                self._push((i + 1) * b + SAMPLE_LAG_US, EventKind.SAMPLE_ENERGY, self._sample, i)
                i += 1
        q = self._q
        pop = heapq.heappop
        end = self.end
        medium = self.medium
        keep = self._keep_us
        while q and q[0][0] < end:
            t, _, _, cb, arg = pop(q)
            self.now = t
            medium.prune(t, keep)
            cb(arg)
        self.now = end
        for tx in medium.on_air:
            if not tx.done:
                tx.done = True
                self._credit(tx.sender, PowerState.TX, tx.start, tx.end - tx.start)
        nbins = len(self.meters[0].cpu) if self.meters else 0
        for i in range(self._closed, nbins):
            self._sample(i)
        return Trace(
            cfg=self.cfg, end_us=self.end, roles=self.roles, positions=self.positions, log=self.log,
            bins=self._bins, bin_us=self.bin_us, generated=self.generated, data_retx=self.data_retx,
            deliveries=self.deliveries, drops=self.drops, dio_rx=self.dio_rx,
            replay_times=self.replay_times, capture_times=self.capture_times,
            parent_events=self.parent_events, violations=self.violations, nodes=self.nodes,
        )

    def _sample(self, i):
        for n, meter in enumerate(self.meters):
            a, z = meter.bin_bounds(i)
            checks = meter.checks_in(a, z) * meter.check_us
            row = meter.close_bin(i)
            self._bins[n].append(row)
            if self.record:
                self.log.append((self.now, "chk", n, i, checks))
                self.log.append((self.now, "bin", n, i) + row)
            if self.check and sum(row) != z - a:
                self.violations.append(f"energy partition broken at node {n} bin {i}")
        self._closed = i + 1

    # -- radio ------------------------------------------------------------

    def _credit(self, node, state, start, dur):
        got = self.meters[node].add(state, start, dur)
        if self.record and got:
            self.log.append((self.now, "E", node, state.value, start, got))

    def cpu(self, node):
        self._credit(node, PowerState.CPU, self.now, self._cpu_us)

    def _overhear(self, tx: Transmission, skip: int):
        """Neighbours whose channel check lands inside a strobe listen to one copy."""
        air = tx.air
        w = self.wake_us
        for n in self.medium.comm[tx.sender]:
            if n == skip:
                continue
            t = self.next_wake(n, tx.start)
            while t < tx.end:
                self._credit(n, PowerState.RX, t, air)
                t += w

    def _tx_end(self, tx: Transmission):
        if tx.done:
            return
        tx.done = True
        self._credit(tx.sender, PowerState.TX, tx.start, tx.end - tx.start)
        if tx.pkt.destination != BROADCAST:
            self._overhear(tx, tx.pkt.destination)
        self.macs[tx.sender].strobe_finished(tx)

    def _deliver(self, arg):
        n, (tx, w) = arg
        air = tx.air
        medium = self.medium
        if medium.transmitting(n, w, w + air):
            return
        self._credit(n, PowerState.RX, w, air)
        got = resolve_collisions(medium.overlapping(n, w, w + air), self.loss_rng[n], self._loss)
        if got is not tx:
            if self.record:
                self.log.append((self.now, "rxfail", n, tx.sender, int(tx.pkt.kind)))
            return
        pkt = tx.pkt
        node = self.nodes[n]
        if pkt.destination != BROADCAST and node.acks_unicast and not tx.done:
            now = self.now
            tx.end = now
            tx.done = True
            self._credit(tx.sender, PowerState.TX, tx.start, now - tx.start)
            self._overhear(tx, n)
            ack_air = self.air_us(FRAME_BYTES[PacketKind.ACK])
            ack_pkt = Packet(PacketKind.ACK, n, n, tx.sender, FRAME_BYTES[PacketKind.ACK], now, pkt.seq)
            ack = Transmission(n, ack_pkt, now, now + ack_air, ack_air)
            medium.add(ack)
            self._credit(n, PowerState.TX, now, ack_air)
            self._credit(tx.sender, PowerState.RX, now, ack_air)
            self._push(now + ack_air, EventKind.TX_END, self._ack_end, (tx, ack))
        node.receive(pkt)

    def _ack_end(self, arg):
        tx, ack = arg
        ack.done = True
        s = tx.sender
        got = resolve_collisions(self.medium.overlapping(s, ack.start, ack.end), self.loss_rng[s], self._loss)
        self.macs[s].ack_result(got is ack)

    # -- bookkeeping hooks ------------------------------------------------

    def note_tx(self, node, pkt: Packet, prior_on_air: int):
        if pkt.kind is PacketKind.DATA and prior_on_air > 0:
            self.data_retx += 1
        if self.record:
            self.log.append((self.now, "tx", node, int(pkt.kind), pkt.uid, prior_on_air))

    def note_drop(self, node, pkt: Packet, reason: str):
        self.drops[(pkt.kind.name, reason)] += 1
        if self.record:
            self.log.append((self.now, "drop", node, int(pkt.kind), pkt.uid, reason))

    def note_generate(self, node, pkt: Packet):
        self.generated += 1
        if self.record:
            self.log.append((self.now, "gen", node, pkt.uid))

    def note_delivery(self, pkt: Packet):
        if pkt.uid in self.deliveries:
            return
        self.deliveries[pkt.uid] = (pkt.origin, pkt.created_at, self.now)
        if self.record:
            self.log.append((self.now, "deliver", pkt.origin, pkt.uid, pkt.created_at))

    def note_dio_rx(self, node, claimed):
        self.dio_rx.append((self.now, node, claimed))

    def note_dio_tx(self, node, trickle):
        if self.record:
            self.log.append((self.now, "dio", node, trickle.start, trickle.interval, trickle.sent))
        if self.check:
            if not trickle.imin <= trickle.interval <= trickle.imax:
                self.violations.append(f"trickle interval {trickle.interval} out of bounds at node {node}")
            if trickle.sent > 1:
                self.violations.append(f"node {node} sent {trickle.sent} DIOs in one interval")

    def note_replay(self, node):
        self.replay_times[node].append(self.now)
        if self.record:
            self.log.append((self.now, "replay", node))

    def note_capture(self, node, pkt: Packet):
        self.capture_times[node] = self.now
        if self.record:
            self.log.append((self.now, "capture", node, pkt.claimed_source, pkt.payload_rank))

    def note_activate(self, node):
        if self.record:
            self.log.append((self.now, "activate", node))

    def note_probe(self, node, cand, etx):
        if self.record:
            self.log.append((self.now, "probe", node, cand, etx))

    def note_demote(self, node, parent):
        if self.record:
            self.log.append((self.now, "demote", node, parent))

    def note_parent(self, node):
        me = self.nodes[node]
        parent = me.parent
        in_range = self.medium.in_range(node, parent)
        self.parent_events.append((self.now, node, parent, me.rank, in_range))
        if self.record:
            self.log.append((self.now, "parent", node, parent, me.rank, in_range))
        if self.check:
            self._check_node(node)

    def _check_node(self, node):
        # links to an out-of-range claimed identity are phantoms created by a
        # spoofed replay; the structural rules only apply to real links
        me = self.nodes[node]
        real = self.medium.in_range
        if me.of is ObjectiveFunction.MRHOF and not real(node, me.parent):
            self.violations.append(f"t={self.now} MRHOF node {node} adopted out-of-range parent {me.parent}")
        if not real(node, me.parent):
            return
        p = self.nodes[me.parent]
        if self.roles[me.parent] is not Role.ATTACKER:
            if p.rank is None or me.rank <= p.rank:
                self.violations.append(f"t={self.now} rank rule: node {node} rank {me.rank} parent {me.parent} rank {p.rank}")
        hops, cur = 0, node
        while cur != ROOT_ID:
            nxt = self.nodes[cur].parent
            if nxt is not None and (not real(cur, nxt) or self.roles[nxt] is Role.ATTACKER):
                break
            cur = nxt
            hops += 1
            if cur is None or hops > self.n:
                self.violations.append(f"t={self.now} node {node} has no loop-free path to the root")
                break
        for c in self.nodes:
            if c.parent == node and c.rank is not None and c.rank <= me.rank and real(c.id, node):
                self.violations.append(f"t={self.now} rank rule: child {c.id} rank {c.rank} <= {me.rank}")

    def detach(self, node):
        """Poison ``node`` and its sub-DODAG, then let each try to rejoin.

        Poisoning is idealized as instantaneous: neighbours in radio range
        drop the detached nodes from their candidate sets and ignore any DIO
        of theirs still in flight.
        """
        nodes = self.nodes
        subtree, frontier = [node], [node]
        while frontier:
            cur = frontier.pop()
            for c in nodes:
                if c.parent == cur and c.id not in subtree:
                    subtree.append(c.id)
                    frontier.append(c.id)
        for d in subtree:
            nodes[d].become_unjoined()
            if self.record:
                self.log.append((self.now, "detach", d))
        for d in subtree:
            epoch = nodes[d].epoch
            for m in self.medium.comm[d]:
                other = nodes[m]
                if isinstance(other, RplNode):
                    other.candidates.pop(d, None)
                    other.probes.pop(d, None)
                    other.epoch_seen[d] = epoch
        for d in subtree:
            nodes[d].evaluate_parents()


def run(cfg: ScenarioConfig, record: bool = True, check_invariants: bool = False, topology=None) -> Trace:
    return Simulator(cfg, topology=topology, record=record, check_invariants=check_invariants).run()


def _replication(cfg: ScenarioConfig):
    from copycat.metrics import compute_report

    return compute_report(run(cfg, record=False))


@dataclass
class ReplicationSummary:
    reports: list
    mean: Dict[str, Optional[float]]
    ci95: Dict[str, Optional[float]]


def mean_ci(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and Student-t 95% half-width; undefined samples are skipped."""
    from scipy import stats

    xs = [v for v in values if v is not None]
    if not xs:
        return None, None
    m = math.fsum(xs) / len(xs)
    if len(xs) < 2:
        return m, None
    sd = float(np.std(xs, ddof=1))
    return m, float(stats.t.ppf(0.975, len(xs) - 1)) * sd / math.sqrt(len(xs))


def summarize(reports) -> ReplicationSummary:
    mean, ci = {}, {}
    for key in ("pdr", "app_pdr", "ae2ed_s", "apc_mw"):
        mean[key], ci[key] = mean_ci([getattr(r, key) for r in reports])
    return ReplicationSummary(list(reports), mean, ci)


def replicate(cfg: ScenarioConfig, workers: int = 1) -> ReplicationSummary:
    """Run ``cfg.replications`` seeds (seed, seed+1, ...) and summarize."""
    cfgs = [replace(cfg, seed=cfg.seed + k) for k in range(cfg.replications)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_replication, cfgs))
    else:
        reports = [_replication(c) for c in cfgs]
    return summarize(reports)


def config_fields() -> List[str]:
    return [f.name for f in fields(ScenarioConfig)]
