"""Energy accounting for Z1-class motes.

Time spent in each of the CPU, LPM, TX and RX states is converted to energy
with the mote's supply voltage and per-state current draw.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List

from copycat.core import US_PER_S


class PowerState(enum.Enum):
    CPU = "cpu"
    LPM = "lpm"
    TX = "tx"
    RX = "rx"


@dataclass(frozen=True)
class ElectricalProfile:
    """Supply voltage (V) and current draw (A) per state; Z1 mote defaults."""

    v: float = 3.0
    i_cpu: float = 426e-6
    i_lpm: float = 20e-6
    i_tx: float = 17.4e-3
    i_rx: float = 18.8e-3

    def __post_init__(self):
        for name in ("v", "i_cpu", "i_lpm", "i_tx", "i_rx"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class DutyCycle:
    """Radio duty-cycling constants (ContikiMAC-like low power listening)."""

    wake_interval_s: float = 0.125  # 8 Hz channel checks
    check_s: float = 0.002
    cpu_per_op_s: float = 0.001

    def __post_init__(self):
        if self.wake_interval_s <= 0:
            raise ValueError("wake_interval_s must be positive")
        if not 0 < self.check_s <= self.wake_interval_s:
            raise ValueError("check_s must lie in (0, wake_interval_s]")
        if self.cpu_per_op_s < 0:
            raise ValueError("cpu_per_op_s must be >= 0")


@dataclass
class EnergyLedger:
    """Seconds spent per state."""

    t_cpu: float = 0.0
    t_lpm: float = 0.0
    t_tx: float = 0.0
    t_rx: float = 0.0

    def record_state(self, state: PowerState, duration: float) -> "EnergyLedger":
        if duration < 0:
            raise ValueError(f"negative duration {duration}")
        attr = "t_" + state.value
        setattr(self, attr, getattr(self, attr) + duration)
        return self

    @property
    def total(self) -> float:
        return self.t_cpu + self.t_lpm + self.t_tx + self.t_rx


def record_state(ledger: EnergyLedger, state: PowerState, duration: float) -> EnergyLedger:
    return ledger.record_state(state, duration)


def energy_mj(ledger: EnergyLedger, profile: ElectricalProfile = ElectricalProfile()) -> float:
    charge = (
        profile.i_cpu * ledger.t_cpu
        + profile.i_lpm * ledger.t_lpm
        + profile.i_tx * ledger.t_tx
        + profile.i_rx * ledger.t_rx
    )
    return 1000.0 * profile.v * charge


def power_mw(ledger: EnergyLedger, profile: ElectricalProfile, tos: float) -> float:
    """Average power over ``tos`` seconds of operation."""
    if tos <= 0:
        raise ValueError("operating time must be positive to define power")
    return energy_mj(ledger, profile) / tos


def ledger_from_us(cpu: int, lpm: int, tx: int, rx: int) -> EnergyLedger:
    return EnergyLedger(cpu / US_PER_S, lpm / US_PER_S, tx / US_PER_S, rx / US_PER_S)


@dataclass
class NodeMeter:
    """Binned per-node state durations in integer microseconds.

    CPU, TX and RX time is recorded explicitly as it happens. Periodic channel
    checks are added analytically when a bin is closed, and LPM is whatever
    remains of the bin, so the four buckets always partition elapsed time.
    """

    end_us: int
    bin_us: int
    phase_us: int
    wake_us: int
    check_us: int
    cpu: List[int] = field(init=False)
    tx: List[int] = field(init=False)
    rx: List[int] = field(init=False)

    def __post_init__(self):
        n = -(-self.end_us // self.bin_us) if self.end_us > 0 else 0
        self.cpu = [0] * n
        self.tx = [0] * n
        self.rx = [0] * n

    def add(self, state: PowerState, start: int, duration: int) -> int:
        """Credit ``duration`` µs from ``start``; returns the part inside the run."""
        buckets = {PowerState.CPU: self.cpu, PowerState.TX: self.tx, PowerState.RX: self.rx}[state]
        end = min(start + duration, self.end_us)
        credited = 0
        b = self.bin_us
        while start < end:
            i = start // b
            stop = min(end, (i + 1) * b)
            buckets[i] += stop - start
            credited += stop - start
            start = stop
        return credited

    def bin_bounds(self, i: int):
        return i * self.bin_us, min((i + 1) * self.bin_us, self.end_us)

    def checks_in(self, start: int, stop: int) -> int:
        """Number of channel-check wake-ups falling in [start, stop)."""
        w, p = self.wake_us, self.phase_us
        return -(-(stop - p) // w) - (-(-(start - p) // w))

    def close_bin(self, i: int):
        """Finalize bin ``i``; returns (cpu, lpm, tx, rx) µs."""
        a, z = self.bin_bounds(i)
        self.rx[i] += self.checks_in(a, z) * self.check_us
        busy = self.cpu[i] + self.tx[i] + self.rx[i]
        lpm = (z - a) - busy
        if lpm < 0:
            raise RuntimeError(f"bin {i} over-committed by {-lpm} us")
        return self.cpu[i], lpm, self.tx[i], self.rx[i]
