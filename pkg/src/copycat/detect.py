"""Per-neighbour DIO rate outlier detection.

Every legitimate node counts the DIOs it hears from each claimed source in
tumbling windows; a source whose count sits above the upper IQR fence of
that window's distribution is flagged. The detector only reads the trace,
so switching it on or off cannot change a run.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from copycat.core import Role, US_PER_S

MIN_NEIGHBORS = 4


@dataclass(frozen=True, order=True)
class FlagRecord:
    window_start_s: float
    observer_id: int
    flagged_id: int
    count: int
    fence: float


def iqr_fence(values: Iterable[int], fence_k: float = 1.5) -> Optional[float]:
    """Upper fence Q3 + k*IQR with linearly interpolated quartiles."""
    xs = sorted(values)
    if len(xs) < MIN_NEIGHBORS:
        return None
    q1, q3 = np.percentile(xs, [25, 75])
    return float(q3 + fence_k * (q3 - q1))


def iqr_flags(counts, fence_k: float = 1.5) -> Set[int]:
    """Ids whose count exceeds the upper fence; empty below four neighbours.

    ``counts`` is a sequence of (id, count) pairs or a mapping id -> count.
    """
    items = list(counts.items()) if isinstance(counts, dict) else list(counts)
    fence = iqr_fence([c for _, c in items], fence_k)
    if fence is None:
        return set()
    return {i for i, c in items if c > fence}


def window_counts(trace, window_s: float) -> Dict[Tuple[int, int], Counter]:
    """(window index, observer) -> Counter of claimed sources heard."""
    width = int(round(window_s * US_PER_S))
    out: Dict[Tuple[int, int], Counter] = defaultdict(Counter)
    for t, observer, claimed in trace.dio_rx:
        out[(t // width, observer)][claimed] += 1
    return out


def n_windows(trace, window_s: float) -> int:
    return math.ceil(trace.end_us / (window_s * US_PER_S))


def observers(trace) -> List[int]:
    return [i for i, r in enumerate(trace.roles) if r is not Role.ATTACKER]


def monitor(trace, window_s: Optional[float] = None, fence_k: Optional[float] = None) -> List[FlagRecord]:
    window_s = trace.cfg.detector_window_s if window_s is None else window_s
    fence_k = trace.cfg.detector_fence_k if fence_k is None else fence_k
    legit = set(observers(trace))
    records = []
    for (w, obs), counter in window_counts(trace, window_s).items():
        if obs not in legit:
            continue
        fence = iqr_fence(counter.values(), fence_k)
        if fence is None:
            continue
        for claimed, c in counter.items():
            if c > fence:
                records.append(FlagRecord(w * window_s, obs, claimed, c, fence))
    records.sort()
    return records


def flagged_fraction(trace, records: List[FlagRecord], window_s: Optional[float] = None) -> float:
    """Share of (observer, window) cells holding at least one flag."""
    window_s = trace.cfg.detector_window_s if window_s is None else window_s
    cells = len(observers(trace)) * n_windows(trace, window_s)
    if cells == 0:
        return 0.0
    return len({(r.window_start_s, r.observer_id) for r in records}) / cells


__all__ = [
    "FlagRecord",
    "MIN_NEIGHBORS",
    "iqr_fence",
    "iqr_flags",
    "window_counts",
    "n_windows",
    "observers",
    "monitor",
    "flagged_fraction",
]
