"""Simplified lossy wireless medium and duty-cycled CSMA MAC.

Delivery follows a unit-disk model: frames decode only within
``comm_range_m`` and any other transmission from within
``interference_range_m`` that overlaps the reception window destroys it.
Surviving frames are still lost with probability ``base_loss_prob``.

Radios sleep and wake every ``DutyCycle.wake_interval_s`` to sample the
channel. A sender therefore repeats its frame (a strobe) until the intended
receiver wakes: broadcasts strobe a full wake interval so every neighbour
hears one copy, unicasts stop as soon as the destination acknowledges.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

from copycat.core import (
    BROADCAST,
    FRAME_BYTES,
    EventKind,
    Packet,
    PacketKind,
    Position,
    distance,
    to_us,
)
from copycat.energy import PowerState


@dataclass(frozen=True)
class RadioParams:
    comm_range_m: float = 50.0
    interference_range_m: float = 100.0
    bitrate_bps: float = 250_000.0
    base_loss_prob: float = 0.05
    csma_max_backoffs: int = 3
    backoff_window_s: float = 0.005
    mac_max_retries: int = 3
    # busy-channel deferrals per frame before the frame is given up
    mac_max_deferrals: int = 8
    queue_limit: int = 8

    def __post_init__(self):
        if self.interference_range_m < self.comm_range_m:
            raise ValueError("interference_range_m must be >= comm_range_m")
        if not 0 <= self.base_loss_prob < 1:
            raise ValueError("base_loss_prob must lie in [0, 1)")
        if self.comm_range_m <= 0:
            raise ValueError("comm_range_m must be positive")
        if self.bitrate_bps <= 0:
            raise ValueError("bitrate_bps must be positive")
        if self.backoff_window_s <= 0:
            raise ValueError("backoff_window_s must be positive")
        for name in ("csma_max_backoffs", "mac_max_retries", "mac_max_deferrals"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be >= 1")


def airtime(size_bytes: int, params: RadioParams = RadioParams()) -> float:
    """Seconds needed to put one frame on the air."""
    if size_bytes <= 0:
        raise ValueError("frame size must be positive")
    return size_bytes * 8 / params.bitrate_bps


class Transmission:
    """Medium occupancy by one sender over [start, end)."""

    __slots__ = ("sender", "pkt", "start", "end", "done", "attempt", "air")

    def __init__(self, sender, pkt, start, end, air, attempt=0):
        self.sender = sender
        self.pkt = pkt
        self.start = start
        self.end = end
        self.air = air
        self.done = False
        self.attempt = attempt

    def __repr__(self):
        return f"Transmission({self.sender}->{self.pkt.destination} {self.pkt.kind.name} [{self.start},{self.end}))"


def resolve_collisions(overlapping: Sequence[Transmission], rng, base_loss_prob: float) -> Optional[Transmission]:
    """Decide what a receiver decodes from the frames overlapping its window.

    Exactly one audible frame is decodable, subject to a Bernoulli loss draw.
    Two or more destroy each other (no capture effect); none is a no-op.
    """
    if len(overlapping) != 1:
        return None
    if rng.random() < base_loss_prob:
        return None
    return overlapping[0]


class Medium:
    """Shared channel state: who hears whom and what is currently on air."""

    def __init__(self, positions: Sequence[Position], params: RadioParams):
        self.params = params
        self.positions = list(positions)
        n = len(positions)
        self.comm: List[tuple] = []
        self.audible: List[frozenset] = []
        for i in range(n):
            d = [distance(positions[i], positions[j]) for j in range(n)]
            self.comm.append(tuple(j for j in range(n) if j != i and d[j] <= params.comm_range_m))
            # a node always "hears" itself: half-duplex radios cannot receive while sending
            self.audible.append(frozenset(j for j in range(n) if d[j] <= params.interference_range_m))
        self.comm_sets = [frozenset(c) for c in self.comm]
        self.on_air: List[Transmission] = []
        self._horizon = 0

    def in_range(self, a: int, b: int) -> bool:
        return b in self.comm_sets[a]

    def add(self, tx: Transmission):
        self.on_air.append(tx)

    def prune(self, now: int, keep_us: int):
        if now - self._horizon < keep_us:
            return
        self._horizon = now
        limit = now - keep_us
        self.on_air = [tx for tx in self.on_air if tx.end > limit]

    def busy(self, node: int, t: int) -> bool:
        heard = self.audible[node]
        for tx in self.on_air:
            if tx.start <= t < tx.end and tx.sender in heard:
                return True
        return False

    def overlapping(self, node: int, a: int, b: int) -> List[Transmission]:
        heard = self.audible[node]
        return [tx for tx in self.on_air if tx.start < b and tx.end > a and tx.sender in heard]

    def transmitting(self, node: int, a: int, b: int) -> bool:
        for tx in self.on_air:
            if tx.sender == node and tx.start < b and tx.end > a:
                return True
        return False


class Mac:
    """Per-node FIFO queue with CSMA channel access and unicast retries.

    ``send`` enqueues a frame; ``on_done(pkt, acked, on_air)`` is called when
    the frame leaves the queue (``on_air`` counts actual transmissions).
    """

    def __init__(self, sim, node_id: int, rng):
        self.sim = sim
        self.id = node_id
        self.rng = rng
        p = sim.cfg.radio
        self.params = p
        self.queue: deque = deque()
        self.busy = False
        self.backoffs = 0
        self.retries = 0
        self.on_air = 0
        self.backoff_us = to_us(p.backoff_window_s)
        self.guard_us = 2 * sim.check_us
        # neighbours whose wake-up phase was learned from an ACK
        self.known_phase = set()

    def send(self, pkt: Packet, on_done: Optional[Callable] = None, max_retries: Optional[int] = None) -> bool:
        if len(self.queue) >= self.params.queue_limit:
            self.sim.note_drop(self.id, pkt, "queue")
            if on_done is not None:
                on_done(pkt, False, 0)
            return False
        if max_retries is None:
            max_retries = self.params.mac_max_retries
        self.queue.append((pkt, on_done, max_retries))
        if not self.busy:
            self._next()
        return True

    def _next(self):
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        self.backoffs = 0
        self.retries = 0
        self.deferrals = 0
        self.on_air = 0
        self._cca(None)

    def _cca(self, _arg):
        sim = self.sim
        if sim.medium.busy(self.id, sim.now):
            if self.backoffs < self.params.csma_max_backoffs:
                self.backoffs += 1
                delay = 1 + int(self.rng.random() * self.backoff_us)
                sim.timer(sim.now + delay, self._cca, None, self.id, EventKind.TX_START)
            else:
                self._attempt_failed("channel")
            return
        dest = self.queue[0][0].destination
        if dest in self.known_phase:
            # phase lock: start strobing just before the receiver wakes up
            start = sim.next_wake(dest, sim.now + self.guard_us) - self.guard_us
            if start > sim.now:
                sim.timer(start, self._cca, None, self.id, EventKind.TX_START)
                return
        self._transmit()

    def _transmit(self):
        sim = self.sim
        pkt = self.queue[0][0]
        now = sim.now
        air = sim.air_us(pkt.size_bytes)
        strobe_end = now + sim.wake_us + air
        tx = Transmission(self.id, pkt, now, strobe_end, air, self.retries)
        sim.medium.add(tx)
        self.on_air += 1
        sim.note_tx(self.id, pkt, self.retries)
        if pkt.destination == BROADCAST:
            for n in sim.medium.comm[self.id]:
                w = sim.next_wake(n, now)
                sim.rx_event(w + air, n, (tx, w))
        elif sim.medium.in_range(self.id, pkt.destination):
            w = sim.next_wake(pkt.destination, now)
            sim.rx_event(w + air, pkt.destination, (tx, w))
        sim.tx_end_event(strobe_end, self.id, tx)

    # called by the simulator -------------------------------------------------

    def strobe_finished(self, tx: Transmission):
        """Strobe ran its full length: broadcast done or unicast unacknowledged."""
        if tx.pkt.destination == BROADCAST:
            self._complete(True)
        else:
            self._attempt_failed("noack")

    def ack_result(self, acked: bool):
        if acked:
            self.known_phase.add(self.queue[0][0].destination)
            self._complete(True)
        else:
            self._attempt_failed("ackloss")

    def _attempt_failed(self, reason: str):
        pkt = self.queue[0][0]
        if reason == "channel" and self.deferrals < self.params.mac_max_deferrals:
            # busy channel does not use up a retry; wait at least one wake interval
            self.deferrals += 1
            self.backoffs = 0
            k = min(self.retries + 1, 3)
            delay = self.sim.wake_us + 1 + int(self.rng.random() * k * self.sim.wake_us)
            self.sim.timer(self.sim.now + delay, self._cca, None, self.id, EventKind.TX_START)
            return
        if pkt.destination == BROADCAST or self.retries >= self.queue[0][2]:
            self.sim.note_drop(self.id, pkt, "channel" if reason == "channel" else "mac")
            self._complete(False)
            return
        self.retries += 1
        self.backoffs = 0
        span = self.sim.wake_us << self.retries
        delay = 1 + int(self.rng.random() * span)
        self.sim.timer(self.sim.now + delay, self._cca, None, self.id, EventKind.TX_START)

    def _complete(self, acked: bool):
        pkt, on_done, _ = self.queue.popleft()
        on_air = self.on_air
        if on_done is not None:
            on_done(pkt, acked, on_air)
        self._next()


__all__ = [
    "RadioParams",
    "airtime",
    "Transmission",
    "resolve_collisions",
    "Medium",
    "Mac",
    "PowerState",
    "FRAME_BYTES",
    "PacketKind",
]
