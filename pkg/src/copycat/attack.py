"""Copycat attacker: capture one DIO, then replay it on a fixed timer."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

from copycat.core import BROADCAST, EventKind, Packet, PacketKind, Role


class AttackVariant(enum.Enum):
    NONE = "NONE"
    NON_SPOOFED = "NON_SPOOFED"
    SPOOFED = "SPOOFED"


@dataclass
class AttackerState:
    variant: AttackVariant
    replay_interval_us: int
    active_since_us: int
    captured_dio: Optional[Packet] = None
    captured_at: Optional[int] = None
    replays: int = 0

    def __post_init__(self):
        if self.replay_interval_us <= 0:
            raise ValueError("replay interval must be positive")


def attacker_on_dio(state: AttackerState, dio: Packet, t: int) -> bool:
    """Store the first DIO heard once active. Returns True on capture."""
    if dio.kind is not PacketKind.DIO or t < state.active_since_us:
        return False
    if state.captured_dio is not None:
        return False
    state.captured_dio = dio
    state.captured_at = t
    return True


def replay_packet(state: AttackerState, attacker_id: int) -> Optional[Packet]:
    """The frame multicast on each replay timer expiry (None before capture).

    The DIO body is replayed verbatim. Only the header source differs between
    variants: the attacker's own address, or the captured sender's.
    """
    dio = state.captured_dio
    if dio is None:
        return None
    if state.variant is AttackVariant.SPOOFED:
        claimed = dio.claimed_source
    else:
        claimed = attacker_id
    return replace(dio, true_source=attacker_id, claimed_source=claimed, destination=BROADCAST)


class CopycatAttacker:
    """Compromised node: isolated from routing, replays one DIO forever."""

    role = Role.ATTACKER
    acks_unicast = False

    def __init__(self, sim, node_id: int, state: AttackerState, mac):
        self.sim = sim
        self.id = node_id
        self.state = state
        self.mac = mac
        self.rank = None
        self.parent = None
        self._frame: Optional[Packet] = None

    @property
    def joined(self) -> bool:
        return False

    def boot(self):
        self.sim.timer(self.state.active_since_us, self._activate, None, self.id, EventKind.ATTACKER_ACTIVATE)

    def _activate(self, _arg):
        self.sim.note_activate(self.id)

    def receive(self, pkt: Packet):
        if pkt.kind is PacketKind.DIO:
            self.sim.cpu(self.id)
            if attacker_on_dio(self.state, pkt, self.sim.now):
                self._frame = replay_packet(self.state, self.id)
                self.sim.note_capture(self.id, pkt)
                self.sim.timer(self.sim.now + self.state.replay_interval_us, self._replay, None, self.id)
        # everything else is ignored: no ACK, no reply, no forwarding

    def _replay(self, _arg):
        sim = self.sim
        sim.timer(sim.now + self.state.replay_interval_us, self._replay, None, self.id)
        self.state.replays += 1
        sim.note_replay(self.id)
        self.mac.send(self._frame)
