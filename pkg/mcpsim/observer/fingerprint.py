from dataclasses import dataclass
from typing import Iterable

import numpy as np
from sklearn.neighbors import NearestCentroid

from mcpsim.observer.records import ObservationRecord
from mcpsim.pathdev.device_base import Direction
from mcpsim.protocol.wire import PcfType

KNOWN_PCF_TYPES = (PcfType.MTU, PcfType.OPAQUE)


@dataclass(frozen=True)
class Fingerprint:
    scratch_rate: float
    pcf_types: frozenset[int]
    lola_rate: float
    stop_used: bool
    echo_rate: float

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.scratch_rate,
                *(float(t in self.pcf_types) for t in KNOWN_PCF_TYPES),
                self.lola_rate,
                float(self.stop_used),
                self.echo_rate,
            ]
        )


def fingerprint(records: Iterable[ObservationRecord]) -> Fingerprint:
    """PCF usage pattern of one flow's records; payload contents play no part"""
    records = list(records)
    if not records:
        return Fingerprint(0.0, frozenset(), 0.0, False, 0.0)
    n = len(records)
    with_scratch = [r for r in records if r.scratch is not None]
    forward = [r for r in records if r.direction is Direction.FORWARD]
    return Fingerprint(
        scratch_rate=len(with_scratch) / n,
        pcf_types=frozenset(r.scratch.pcf_type for r in with_scratch),
        lola_rate=sum(r.lola for r in records) / n,
        stop_used=any(r.stop for r in records),
        echo_rate=sum(r.pse != 0 for r in forward) / len(forward) if forward else 0.0,
    )


class ProfileMatcher:
    """Nearest-centroid matcher from fingerprints to application profiles"""

    def __init__(self):
        self.model = NearestCentroid()
        self.is_fitted = False

    def fit(self, profiles: dict[str, list[Fingerprint]]) -> "ProfileMatcher":
        if len(profiles) < 2:
            raise ValueError("Need at least two application profiles")
        X, y = [], []
        for name, fingerprints in profiles.items():
            for fp in fingerprints:
                X.append(fp.vector())
                y.append(name)
        self.model.fit(np.vstack(X), np.array(y))
        self.is_fitted = True
        return self

    def match(self, fingerprints: list[Fingerprint]) -> list[str]:
        if not self.is_fitted:
            raise RuntimeError("ProfileMatcher must be fitted before match")
        return [str(p) for p in self.model.predict(np.vstack([fp.vector() for fp in fingerprints]))]

    def accuracy(self, labelled: dict[str, list[Fingerprint]]) -> float:
        expected, got = [], []
        for name, fingerprints in labelled.items():
            expected.extend([name] * len(fingerprints))
            got.extend(self.match(fingerprints))
        return float(np.mean([a == b for a, b in zip(expected, got)]))
