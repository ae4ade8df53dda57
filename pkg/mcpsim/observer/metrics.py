"""
Passive path measurement from a single tap: loss, reordering and RTT, the
metrics an observer of unencrypted TCP would get from sequence numbers.
"""

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from mcpsim.harness.trace import US_PER_S
from mcpsim.observer.records import ObservationRecord
from mcpsim.pathdev.device_base import Direction
from mcpsim.protocol.wire import PSN_MODULUS, psn_delta

RTT_WINDOW = 1 << 16


@dataclass
class PathMetrics:
    loss: dict[str, int] = field(default_factory=lambda: {"fwd": 0, "rev": 0})
    reordering: dict[str, int] = field(default_factory=lambda: {"fwd": 0, "rev": 0})
    rtt_samples: list[int] = field(default_factory=list)

    @property
    def upstream_loss(self) -> int:
        return sum(self.loss.values())

    @property
    def total_reordering(self) -> int:
        return sum(self.reordering.values())

    @property
    def rtt_seconds(self) -> list[float]:
        return [s / US_PER_S for s in self.rtt_samples]

    def summary(self) -> dict:
        rtts = np.array(self.rtt_seconds) if self.rtt_samples else np.array([np.nan])
        return {
            "loss": dict(self.loss),
            "reordering": dict(self.reordering),
            "rtt_samples": len(self.rtt_samples),
            "rtt_median_s": float(np.nanmedian(rtts)),
        }


def _sequence_stats(psns: list[int]) -> tuple[int, int]:
    """(gaps, inversions) of one direction of one flow"""
    base = psns[0]
    offsets = [psn_delta(p, base) for p in psns]
    distinct = set(offsets)
    span = max(distinct) - min(distinct) + 1
    low = (base + min(distinct)) % PSN_MODULUS
    if low + span > PSN_MODULUS:
        span -= 1  # psn 0 is never sent
    running_max = offsets[0]
    inversions = 0
    for off in offsets[1:]:
        if off < running_max:
            inversions += 1
        running_max = max(running_max, off)
    return span - len(distinct), inversions


def measure_path_metrics(records: Iterable[ObservationRecord]) -> PathMetrics:
    records = list(records)
    metrics = PathMetrics()

    by_key: dict[tuple[int, Direction], list[int]] = defaultdict(list)
    for r in records:
        by_key[(r.cid, r.direction)].append(r.psn)
    for (_, direction), psns in by_key.items():
        gaps, inversions = _sequence_stats(psns)
        metrics.loss[direction.value] += gaps
        metrics.reordering[direction.value] += inversions

    pending: dict[int, deque] = defaultdict(deque)
    seen: dict[int, set] = defaultdict(set)
    for r in records:
        if r.direction is Direction.FORWARD:
            if r.psn not in seen[r.cid]:
                seen[r.cid].add(r.psn)
                pending[r.cid].append((r.psn, r.time))
            continue
        if r.pse == 0 or not pending[r.cid]:
            continue
        waiting = pending[r.cid]
        remaining = deque()
        for psn, sent in waiting:
            if 0 <= psn_delta(r.pse, psn) <= RTT_WINDOW:
                metrics.rtt_samples.append(r.time - sent)
            else:
                remaining.append((psn, sent))
        pending[r.cid] = remaining
    return metrics
