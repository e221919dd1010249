"""RPL node behaviour: DODAG joining, trickle-paced DIOs, parent selection,
link probing, DAO registration and upward data forwarding."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

from copycat.core import (
    BROADCAST,
    FRAME_BYTES,
    INFINITE_RANK,
    MIN_HOP_RANK_INCREASE,
    ROOT_RANK,
    Packet,
    PacketKind,
    EventKind,
    Role,
    US_PER_S,
)

APP = EventKind.APP_GENERATE

REDUNDANCY_K = 10
HYSTERESIS = MIN_HOP_RANK_INCREASE // 2
PROBES_PER_ROUND = 3
PROBE_SPACING_US = 1 * US_PER_S
DAO_TIMEOUT_US = 10 * US_PER_S
DAO_MAX_TRIES = 3
DIS_DELAY_US = 5 * US_PER_S
DIS_PERIOD_US = 60 * US_PER_S
MAX_HOPS = 64


class ObjectiveFunction(enum.Enum):
    MRHOF = "MRHOF"
    OF0 = "OF0"


def compute_rank(of: ObjectiveFunction, parent_rank: int, etx: float = 1.0) -> Optional[int]:
    """Rank a node gets through a parent; ``None`` once it would overflow."""
    if parent_rank < ROOT_RANK:
        raise ValueError(f"parent rank {parent_rank} below root rank")
    if etx < 1:
        raise ValueError("etx must be >= 1")
    if of is ObjectiveFunction.MRHOF:
        rank = parent_rank + round(etx * MIN_HOP_RANK_INCREASE)
    else:
        rank = parent_rank + MIN_HOP_RANK_INCREASE
    if rank >= INFINITE_RANK:
        return None
    return rank


class TrickleTimer:
    """RFC 6206 trickle timer in integer microseconds.

    Each interval starts with ``begin``; the DIO decision happens at
    ``fire_at`` (uniform in the second half of the interval) and the interval
    doubles at its end via ``expire``.
    """

    def __init__(self, imin_us: int, imax_us: int, k: int = REDUNDANCY_K, rng=None):
        if not 0 < imin_us <= imax_us:
            raise ValueError("need 0 < Imin <= Imax")
        self.imin = imin_us
        self.imax = imax_us
        self.k = k
        self.rng = rng
        self.interval = imin_us
        self.counter = 0
        self.start = 0
        self.fire_at = 0
        self.sent = 0

    def begin(self, now: int):
        self.start = now
        self.counter = 0
        self.sent = 0
        half = self.interval // 2
        self.fire_at = now + half + int(self.rng.random() * (self.interval - half))

    def consistent(self):
        self.counter += 1

    def reset(self, now: int) -> bool:
        """Inconsistency heard. Restarts at Imin unless already there."""
        if self.interval == self.imin:
            return False
        self.interval = self.imin
        self.begin(now)
        return True

    def fire(self) -> bool:
        """True when this interval's DIO is not suppressed."""
        if self.counter < self.k:
            self.sent += 1
            return True
        return False

    def expire(self, now: int):
        self.interval = min(2 * self.interval, self.imax)
        self.begin(now)

    @property
    def end(self) -> int:
        return self.start + self.interval


@dataclass
class NeighborEntry:
    neighbor: int
    last_rank: int
    etx: float = 1.0
    probe_verified: bool = False
    dio_count: int = 0


def _path_rank(of, entry: NeighborEntry):
    return compute_rank(of, entry.last_rank, entry.etx if of is ObjectiveFunction.MRHOF else 1.0)


def select_preferred_parent(
    of: ObjectiveFunction,
    candidates: Dict[int, NeighborEntry],
    parent: Optional[int] = None,
    rank: Optional[int] = None,
) -> Optional[Tuple[int, int]]:
    """Pick ``(parent, rank)`` from the candidate set, or ``None``.

    MRHOF considers only probe-verified neighbours and keeps the current
    parent unless a challenger improves the path rank by ``HYSTERESIS``.
    OF0 takes the lowest advertised rank and never looks at link quality.
    A joined node never raises its rank while keeping the same parent, and
    only moves to parents that lower it.
    """
    options = []
    for e in candidates.values():
        if of is ObjectiveFunction.MRHOF and not e.probe_verified:
            continue
        path = _path_rank(of, e)
        if path is None:
            continue
        key = path if of is ObjectiveFunction.MRHOF else e.last_rank
        options.append((key, e.neighbor, path))
    options.sort()

    if parent is None:
        if not options:
            return None
        _, nid, path = options[0]
        return nid, path

    current = candidates.get(parent)
    if current is None or (of is ObjectiveFunction.MRHOF and not current.probe_verified):
        for _, nid, path in options:
            if path < rank:
                return nid, path
        return None

    cur_path = _path_rank(of, current)
    new_rank = rank if cur_path is None else min(rank, cur_path)
    for key, nid, path in options:
        if nid == parent or path >= new_rank:
            continue
        if of is ObjectiveFunction.MRHOF:
            if cur_path is None or path <= cur_path - HYSTERESIS:
                return nid, path
        elif key < current.last_rank:
            return nid, path
        break
    return parent, new_rank


class ProbeRound:
    __slots__ = ("cand", "sent", "resolved", "attempts", "acks")

    def __init__(self, cand):
        self.cand = cand
        self.sent = 0
        self.resolved = 0
        self.attempts = 0
        self.acks = 0


def probe_etx(attempts: int, acks: int) -> Optional[float]:
    """ETX estimate from one probe round, ``None`` when nothing came back."""
    if acks == 0:
        return None
    return max(1.0, attempts / acks)


class RplNode:
    """Root or sensor running RPL; only the root keeps downward routes."""

    acks_unicast = True

    def __init__(self, sim, node_id: int, role: Role, of: ObjectiveFunction, rng, mac):
        self.sim = sim
        self.id = node_id
        self.role = role
        self.of = of
        self.rng = rng
        self.mac = mac
        self.rank: Optional[int] = None
        self.parent: Optional[int] = None
        self.candidates: Dict[int, NeighborEntry] = {}
        self.trickle: Optional[TrickleTimer] = None
        self.epoch = 0
        self.epoch_seen: Dict[int, int] = {}
        self.probes: Dict[int, ProbeRound] = {}
        self.downward_routes: Dict[int, int] = {}
        self.invalid_dios = 0
        self._seen_data = set()
        self._tgen = 0
        self._dis_gen = 0
        self._dao_gen = 0
        self._dao_seq = 0
        self._dao_tries = 0
        self._dao_pending = False
        self._seq = 0
        cfg = sim.cfg
        self._imin = round(cfg.dio_imin_s * US_PER_S)
        self._imax = round(cfg.dio_imax_s * US_PER_S)
        self._data_interval = round(cfg.data_interval_s * US_PER_S)
        self._data_phase = 0

    # -- lifecycle --------------------------------------------------------

    @property
    def joined(self) -> bool:
        return self.rank is not None

    def boot(self):
        sim = self.sim
        if self.role is Role.ROOT:
            self.rank = ROOT_RANK
            self._start_trickle()
            return
        self._schedule_dis(DIS_DELAY_US + int(self.rng.random() * US_PER_S))
        # first report lands in (30, 60] s, then one per data interval
        self._data_phase = 1 + int(self.rng.random() * (self._data_interval // 2))
        sim.timer(self._data_interval - self._data_phase, self._generate, 1, self.id, APP)

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    # -- trickle ----------------------------------------------------------

    def _start_trickle(self):
        self.trickle = TrickleTimer(self._imin, self._imax, REDUNDANCY_K, self.rng)
        self._trickle_begin()

    def _trickle_begin(self):
        t = self.trickle
        t.begin(self.sim.now)
        self._arm_trickle()

    def _arm_trickle(self):
        t = self.trickle
        self._tgen += 1
        self.sim.timer(t.fire_at, self._on_trickle_fire, self._tgen, self.id)
        self.sim.timer(t.end, self._on_trickle_expire, self._tgen, self.id)

    def _trickle_reset(self):
        if self.trickle is not None and self.trickle.reset(self.sim.now):
            self._arm_trickle()

    def _on_trickle_fire(self, gen):
        if gen != self._tgen or self.trickle is None:
            return
        t = self.trickle
        self.sim.cpu(self.id)
        if t.fire():
            self.sim.note_dio_tx(self.id, t)
            self._send_dio(BROADCAST)

    def _on_trickle_expire(self, gen):
        if gen != self._tgen or self.trickle is None:
            return
        self.trickle.expire(self.sim.now)
        self._arm_trickle()

    def _send_dio(self, dest):
        pkt = Packet(
            PacketKind.DIO, self.id, self.id, dest, FRAME_BYTES[PacketKind.DIO],
            self.sim.now, self._next_seq(), payload_rank=self.rank, epoch=self.epoch,
        )
        self.mac.send(pkt)

    # -- reception --------------------------------------------------------

    def receive(self, pkt: Packet):
        self.sim.cpu(self.id)
        kind = pkt.kind
        if kind is PacketKind.DIO:
            self.on_dio(pkt)
        elif kind is PacketKind.DATA:
            self.on_data(pkt)
        elif kind is PacketKind.DIS:
            self.on_dis(pkt)
        elif kind is PacketKind.DAO:
            self.on_dao(pkt)
        elif kind is PacketKind.DAO_ACK:
            self.on_dao_ack(pkt)
        # PROBE needs nothing beyond the link-layer ACK

    def on_dio(self, dio: Packet):
        claimed = dio.claimed_source
        if claimed == self.id:
            return
        rank = dio.payload_rank
        if rank is None or rank < ROOT_RANK:
            self.invalid_dios += 1
            return
        # the detector sees every well-formed DIO, stale or not
        self.sim.note_dio_rx(self.id, claimed)
        if dio.epoch < self.epoch_seen.get(claimed, 0):
            return
        entry = self.candidates.get(claimed)
        if entry is None:
            entry = NeighborEntry(claimed, rank)
            self.candidates[claimed] = entry
            consistent = False
        else:
            consistent = entry.last_rank == rank
            entry.last_rank = rank
        entry.dio_count += 1
        if self.trickle is not None:
            if consistent:
                self.trickle.consistent()
            else:
                self._trickle_reset()
        if self.role is Role.ROOT:
            return
        if self.of is ObjectiveFunction.MRHOF and not entry.probe_verified:
            if claimed not in self.probes:
                self.probe_candidate(claimed)
        self.evaluate_parents()

    def on_dis(self, dis: Packet):
        if not self.joined:
            return
        if dis.destination == BROADCAST:
            self._trickle_reset()
        else:
            self._send_dio(dis.true_source)

    # -- parent selection -------------------------------------------------

    def evaluate_parents(self):
        if self.role is Role.ROOT:
            return
        sim = self.sim
        sim.cpu(self.id)
        decision = select_preferred_parent(self.of, self.candidates, self.parent, self.rank)
        if decision is None:
            if self.parent is not None:
                sim.detach(self.id)
            return
        parent, rank = decision
        if parent == self.parent:
            if rank != self.rank:
                self.rank = rank
                sim.note_parent(self.id)
            return
        was_joined = self.parent is not None
        self.parent = parent
        self.rank = rank
        sim.note_parent(self.id)
        if was_joined:
            if self.trickle is None:
                self._start_trickle()
            else:
                self._trickle_reset()
        else:
            self._dis_gen += 1
            self._start_trickle()
        self.send_dao()

    def become_unjoined(self):
        """Leave the DODAG (parent lost, subtree poisoned)."""
        self.parent = None
        self.rank = None
        self.trickle = None
        self._tgen += 1
        self._dao_pending = False
        self._dao_gen += 1
        self.epoch += 1
        self._schedule_dis(DIS_DELAY_US)

    def _schedule_dis(self, delay):
        self._dis_gen += 1
        self.sim.timer(self.sim.now + delay, self._on_dis_timer, self._dis_gen, self.id)

    def _on_dis_timer(self, gen):
        if gen != self._dis_gen or self.joined:
            return
        pkt = Packet(PacketKind.DIS, self.id, self.id, BROADCAST, FRAME_BYTES[PacketKind.DIS],
                     self.sim.now, self._next_seq())
        self.mac.send(pkt)
        self.sim.timer(self.sim.now + DIS_PERIOD_US, self._on_dis_timer, gen, self.id)

    # -- probing ----------------------------------------------------------

    def probe_candidate(self, cand: int):
        rnd = ProbeRound(cand)
        self.probes[cand] = rnd
        self._probe_tick(rnd)

    def _probe_tick(self, rnd: ProbeRound):
        if self.probes.get(rnd.cand) is not rnd:
            return
        rnd.sent += 1
        pkt = Packet(PacketKind.PROBE, self.id, self.id, rnd.cand, FRAME_BYTES[PacketKind.PROBE],
                     self.sim.now, self._next_seq())

        def done(_pkt, acked, on_air, rnd=rnd):
            rnd.attempts += on_air
            rnd.acks += 1 if acked else 0
            rnd.resolved += 1
            if rnd.resolved == PROBES_PER_ROUND:
                self._probe_finished(rnd)

        if rnd.sent < PROBES_PER_ROUND:
            self.sim.timer(self.sim.now + PROBE_SPACING_US, self._probe_tick, rnd, self.id)
        self.mac.send(pkt, done)

    def _probe_finished(self, rnd: ProbeRound):
        if self.probes.get(rnd.cand) is not rnd:
            return
        del self.probes[rnd.cand]
        entry = self.candidates.get(rnd.cand)
        if entry is None:
            return
        etx = probe_etx(rnd.attempts, rnd.acks)
        self.sim.note_probe(self.id, rnd.cand, etx)
        if etx is None:
            # link assumed bad: forget the neighbour entirely
            del self.candidates[rnd.cand]
            if rnd.cand == self.parent:
                self.evaluate_parents()
            return
        entry.probe_verified = True
        entry.etx = etx
        self.evaluate_parents()

    # -- DAO --------------------------------------------------------------

    def send_dao(self):
        if self.role is Role.ROOT or not self.joined:
            return
        self._dao_seq += 1
        self._dao_tries = 1
        self._dao_pending = True
        self._send_dao_frame()

    def _send_dao_frame(self):
        pkt = Packet(PacketKind.DAO, self.id, self.id, self.parent, FRAME_BYTES[PacketKind.DAO],
                     self.sim.now, self._dao_seq, origin=self.id, path=(self.id,))
        self.mac.send(pkt)
        self._dao_gen += 1
        self.sim.timer(self.sim.now + DAO_TIMEOUT_US, self._on_dao_timeout, self._dao_gen, self.id)

    def _on_dao_timeout(self, gen):
        if gen != self._dao_gen or not self._dao_pending or not self.joined:
            return
        if self._dao_tries < DAO_MAX_TRIES:
            self._dao_tries += 1
            self._send_dao_frame()
            return
        self._dao_pending = False
        parent = self.parent
        self.sim.note_demote(self.id, parent)
        self.candidates.pop(parent, None)
        self.evaluate_parents()

    def on_dao(self, pkt: Packet):
        if self.role is Role.ROOT:
            self.downward_routes[pkt.origin] = pkt.path[-1]
            route = tuple(reversed(pkt.path))
            ack = Packet(PacketKind.DAO_ACK, self.id, self.id, route[0], FRAME_BYTES[PacketKind.DAO_ACK],
                         self.sim.now, pkt.seq, origin=pkt.origin, path=route[1:])
            self.mac.send(ack)
            return
        if not self.joined:
            return
        fwd = replace(pkt, true_source=self.id, claimed_source=self.id, destination=self.parent,
                      path=pkt.path + (self.id,))
        self.mac.send(fwd)

    def on_dao_ack(self, pkt: Packet):
        if pkt.origin == self.id:
            if self._dao_pending and pkt.seq == self._dao_seq:
                self._dao_pending = False
                self._dao_gen += 1
            return
        if not pkt.path:
            return
        fwd = replace(pkt, true_source=self.id, claimed_source=self.id, destination=pkt.path[0],
                      path=pkt.path[1:])
        self.mac.send(fwd)

    # -- data -------------------------------------------------------------

    def _generate(self, k):
        sim = self.sim
        sim.timer(sim.now + self._data_interval, self._generate, k + 1, self.id, APP)
        uid = sim.new_uid()
        pkt = Packet(PacketKind.DATA, self.id, self.id, self.parent if self.parent is not None else BROADCAST,
                     sim.cfg.data_size_bytes, sim.now, k, origin=self.id, uid=uid)
        sim.note_generate(self.id, pkt)
        sim.cpu(self.id)
        self.forward_data(pkt)

    def forward_data(self, pkt: Packet) -> bool:
        """Unicast towards the root or drop when there is no route."""
        sim = self.sim
        if self.role is Role.ROOT:
            sim.note_delivery(pkt)
            return True
        if not self.joined:
            sim.note_drop(self.id, pkt, "noroute")
            return False
        if pkt.hops >= MAX_HOPS:
            sim.note_drop(self.id, pkt, "hoplimit")
            return False
        if pkt.origin != self.id or pkt.destination != self.parent:
            pkt = replace(pkt, true_source=self.id, claimed_source=self.id, destination=self.parent,
                          hops=pkt.hops + (0 if pkt.origin == self.id else 1))
        return self.mac.send(pkt)

    def on_data(self, pkt: Packet):
        if pkt.uid in self._seen_data:
            return
        self._seen_data.add(pkt.uid)
        self.forward_data(pkt)
