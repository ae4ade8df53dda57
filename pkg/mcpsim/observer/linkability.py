"""
Passive flow linkers and their scoring against ground truth.

A *segment* is the set of records sharing one canonical 5-tuple at a tap.
Linkers assign an inferred flow to every record; scoring looks at pairs of
segments and asks whether the linker put them in the same flow exactly when
they belong to the same true flow.
"""

from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np
from sklearn.metrics import precision_recall_fscore_support

from mcpsim.observer.records import ObservationRecord
from mcpsim.pathdev.device_base import Direction, FiveTuple
from mcpsim.protocol.wire import PSN_MODULUS, psn_delta

DEFAULT_DELTA = 64


def link_by_cid(records: Iterable[ObservationRecord]) -> list[int]:
    """Inferred flow label per record: records with equal cids share a label"""
    labels: dict[int, int] = {}
    return [labels.setdefault(r.cid, len(labels)) for r in records]


@dataclass(frozen=True)
class Migration:
    time: int
    old_flow: int
    new_tuple: FiveTuple
    confidence: float


@dataclass
class PsnLinkage:
    labels: list[int] = field(default_factory=list)
    migrations: list[Migration] = field(default_factory=list)


def link_by_psn(records: Iterable[ObservationRecord], delta: int = DEFAULT_DELTA) -> PsnLinkage:
    """Track flows by 5-tuple and link a new tuple to a flow whose PSN it continues.

    A record on an unseen tuple whose psn falls in (hwm, hwm + delta] of a
    tracked sender's high-water mark is a migration of that flow; anything
    else on an unseen tuple starts a new inferred flow.
    """
    if delta < 1:
        raise ValueError(f"delta must be >= 1, got {delta}")

    linkage = PsnLinkage()
    tuple_flow: dict[FiveTuple, int] = {}
    marks: dict[tuple[int, Direction], int] = {}
    n_flows = 0

    for r in records:
        key = r.tuple5.canonical()
        flow = tuple_flow.get(key)
        if flow is None:
            flow, best = None, delta + 1
            for (candidate, _), hwm in marks.items():
                gap = psn_delta(r.psn, hwm)
                if 0 < gap < best:
                    flow, best = candidate, gap
            if flow is None:
                flow = n_flows
                n_flows += 1
            else:
                confidence = max(0.0, 1.0 - len(marks) * 2 * delta / PSN_MODULUS)
                linkage.migrations.append(Migration(r.time, flow, r.tuple5, confidence))
            tuple_flow[key] = flow

        mark_key = (flow, r.direction)
        hwm = marks.get(mark_key)
        if hwm is None or psn_delta(r.psn, hwm) > 0:
            marks[mark_key] = r.psn
        linkage.labels.append(flow)
    return linkage


@dataclass(frozen=True)
class LinkageScore:
    precision: float
    recall: float
    f1: float
    segments: int
    pairs: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "segments": self.segments,
            "pairs": self.pairs,
        }


def _segment_labels(
    records: Sequence[ObservationRecord], labels: Sequence[int]
) -> dict[FiveTuple, int]:
    votes: dict[FiveTuple, Counter] = {}
    for r, label in zip(records, labels):
        votes.setdefault(r.tuple5.canonical(), Counter())[label] += 1
    return {seg: counts.most_common(1)[0][0] for seg, counts in votes.items()}


def linkage_scores(
    records: Sequence[ObservationRecord],
    true_flows: Sequence[int],
    inferred: Sequence[int],
    exclude: Optional[set[int]] = None,
) -> LinkageScore:
    """Segment-pair precision/recall/F1 of an inferred partition.

    Records whose true flow is in `exclude` (e.g. -1 for forged packets) are
    ignored.
    """
    if not len(records) == len(true_flows) == len(inferred):
        raise ValueError("records, true_flows and inferred must have equal length")
    exclude = exclude if exclude is not None else {-1}
    keep = [i for i, flow in enumerate(true_flows) if flow not in exclude]
    records = [records[i] for i in keep]
    truth = _segment_labels(records, [true_flows[i] for i in keep])
    guess = _segment_labels(records, [inferred[i] for i in keep])

    segments = sorted(truth)
    y_true, y_pred = [], []
    for a, b in combinations(segments, 2):
        y_true.append(truth[a] == truth[b])
        y_pred.append(guess[a] == guess[b])
    if not y_true:
        return LinkageScore(1.0, 1.0, 1.0, len(segments), 0)

    precision, recall, f1, _ = precision_recall_fscore_support(
        np.array(y_true), np.array(y_pred), average="binary", zero_division=0
    )
    return LinkageScore(float(precision), float(recall), float(f1), len(segments), len(y_true))
