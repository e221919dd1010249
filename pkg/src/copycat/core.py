"""Shared types and small helpers.

All simulation times are integer microseconds so that event ordering never
depends on floating point rounding.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

US_PER_S = 1_000_000

MIN_HOP_RANK_INCREASE = 256
ROOT_RANK = 256
INFINITE_RANK = 0xFFFF
ROOT_ID = 0
BROADCAST = -1

NodeId = int
SimTime = int  # microseconds


def to_us(seconds: float) -> SimTime:
    """Convert seconds to integer microseconds (round half to even)."""
    return int(round(seconds * US_PER_S))


def to_s(t: SimTime) -> float:
    return t / US_PER_S


class Position(NamedTuple):
    x: float
    y: float


def distance(a: Position, b: Position) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


class InvalidRankError(ValueError):
    pass


def dag_rank(rank: int) -> int:
    """Integer rank level used for loop detection."""
    if rank < ROOT_RANK:
        raise InvalidRankError(f"rank {rank} is below the root rank {ROOT_RANK}")
    return rank // MIN_HOP_RANK_INCREASE


class Role(enum.Enum):
    ROOT = "root"
    SENSOR = "sensor"
    ATTACKER = "attacker"


class EventKind(enum.IntEnum):
    """Scheduler event classes; the value is the tie-break priority at equal times."""

    TX_END = 0
    RX_DELIVER = 1
    TX_START = 2
    TIMER_FIRE = 3
    APP_GENERATE = 4
    ATTACKER_ACTIVATE = 5
    SAMPLE_ENERGY = 6


class PacketKind(enum.IntEnum):
    DIO = 0
    DIS = 1
    DAO = 2
    DAO_ACK = 3
    DATA = 4
    PROBE = 5
    ACK = 6


# frame sizes in bytes (headers included); DATA comes from the config
FRAME_BYTES = {
    PacketKind.DIO: 80,
    PacketKind.DIS: 48,
    PacketKind.DAO: 64,
    PacketKind.DAO_ACK: 48,
    PacketKind.PROBE: 40,
    PacketKind.ACK: 11,
}


@dataclass(frozen=True, slots=True)
class Packet:
    """One frame on the air.

    ``claimed_source`` is the address written in the header; it only differs
    from ``true_source`` when an attacker spoofs a legitimate node.
    """

    kind: PacketKind
    true_source: NodeId
    claimed_source: NodeId
    destination: NodeId
    size_bytes: int
    created_at: SimTime
    seq: int
    payload_rank: Optional[int] = None
    epoch: int = 0
    origin: Optional[NodeId] = None
    uid: Optional[int] = None
    hops: int = 0
    path: Tuple[NodeId, ...] = ()

    @property
    def is_broadcast(self) -> bool:
        return self.destination == BROADCAST
