"""Packet delivery ratio, end-to-end delay and power from a finished trace.

``compute_report`` reads the counters the engine maintains while running;
``oracle_scan`` recomputes the same three numbers from the raw record log
alone and must agree exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from copycat.core import PacketKind, Role, US_PER_S
from copycat.energy import ElectricalProfile, ledger_from_us, power_mw

Series = List[Tuple[float, float, float, float, float]]


class OracleDivergence(AssertionError):
    pass


@dataclass
class MetricsReport:
    pdr: Optional[float]
    app_pdr: Optional[float]
    ae2ed_s: Optional[float]
    apc_mw: float
    seed: int = 0
    generated: int = 0
    delivered: int = 0
    data_retx: int = 0
    per_node_series: Dict[int, Series] = field(default_factory=dict, repr=False)


def _pdr(delivered: int, generated: int, retx: int) -> Optional[float]:
    # every generated packet is sent once; MAC retransmissions inflate the denominator
    sent = generated + retx
    return delivered / sent if sent else None


def _ae2ed(total_delay_us: int, count: int) -> Optional[float]:
    if count == 0:
        return None
    return total_delay_us / count / US_PER_S


def _apc(totals: Dict[int, Tuple[int, int, int, int]], profile: ElectricalProfile, end_us: int) -> float:
    if end_us <= 0 or not totals:
        return 0.0
    tos = end_us / US_PER_S
    powers = [power_mw(ledger_from_us(*totals[n]), profile, tos) for n in sorted(totals)]
    return sum(powers) / len(powers)


def pdr(trace) -> Optional[float]:
    return _pdr(len(trace.deliveries), trace.generated, trace.data_retx)


def app_pdr(trace) -> Optional[float]:
    if trace.generated == 0:
        return None
    return len(trace.deliveries) / trace.generated


def ae2ed(trace) -> Optional[float]:
    total = sum(arrived - created for _, created, arrived in trace.deliveries.values())
    return _ae2ed(total, len(trace.deliveries))


def apc(trace) -> float:
    """Mean power of the legitimate sensors (root and attackers excluded)."""
    totals = {n: trace.totals(n) for n in trace.legit_sensors}
    return _apc(totals, trace.cfg.energy, trace.end_us)


def power_series(trace) -> Dict[int, Series]:
    prof = trace.cfg.energy
    out = {}
    for n, rows in enumerate(trace.bins):
        series = []
        for i, (cpu, lpm, tx, rx) in enumerate(rows):
            a = i * trace.bin_us
            span = min(trace.bin_us, trace.end_us - a)
            k = 1000.0 * prof.v / span
            series.append((a / US_PER_S, k * prof.i_cpu * cpu, k * prof.i_lpm * lpm,
                           k * prof.i_tx * tx, k * prof.i_rx * rx))
        out[n] = series
    return out


def compute_report(trace, series: bool = True) -> MetricsReport:
    return MetricsReport(
        pdr=pdr(trace),
        app_pdr=app_pdr(trace),
        ae2ed_s=ae2ed(trace),
        apc_mw=apc(trace),
        seed=trace.cfg.seed,
        generated=trace.generated,
        delivered=len(trace.deliveries),
        data_retx=trace.data_retx,
        per_node_series=power_series(trace) if series else {},
    )


def oracle_scan(trace) -> Tuple[Optional[float], Optional[float], float]:
    """Recompute (pdr, ae2ed, apc) by one pass over the raw record log."""
    generated = 0
    retx = 0
    delays: Dict[int, int] = {}
    busy: Dict[int, List[int]] = {}
    data = int(PacketKind.DATA)
    for rec in trace.log:
        tag = rec[1]
        if tag == "gen":
            generated += 1
        elif tag == "tx":
            if rec[3] == data and rec[5] > 0:
                retx += 1
        elif tag == "deliver":
            uid = rec[3]
            if uid not in delays:
                delays[uid] = rec[0] - rec[4]
        elif tag == "E":
            b = busy.setdefault(rec[2], [0, 0, 0])
            b[("cpu", "tx", "rx").index(rec[3])] += rec[5]
        elif tag == "chk":
            busy.setdefault(rec[2], [0, 0, 0])[2] += rec[4]
    totals = {}
    for n, role in enumerate(trace.roles):
        if role is not Role.SENSOR:
            continue
        cpu, tx, rx = busy.get(n, (0, 0, 0))
        totals[n] = (cpu, trace.end_us - cpu - tx - rx, tx, rx)
    return (
        _pdr(len(delays), generated, retx),
        _ae2ed(sum(delays.values()), len(delays)),
        _apc(totals, trace.cfg.energy, trace.end_us),
    )


def check_oracle(trace) -> MetricsReport:
    report = compute_report(trace, series=False)
    expected = (report.pdr, report.ae2ed_s, report.apc_mw)
    got = oracle_scan(trace)
    if got != expected:
        raise OracleDivergence(f"incremental {expected} != oracle {got}")
    return report
