"""
(D, P) classification of a manipulation from a baseline/attack trace pair.

D: the attack run shows the endpoints a VERIFY_FAIL or POLICY_SIGNAL that the
baseline does not have. P: with those detection events masked, what the
endpoints were delivered (sequence, header values, timing beyond tolerance)
differs.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Optional

from mcpsim.errors import MismatchedScenarios
from mcpsim.harness.config import ScenarioConfig
from mcpsim.harness.trace import DETECTION_KINDS, ENDPOINT_KINDS, EventKind, TraceEvent
from mcpsim.observer.classes import ManipulationClass

DEFAULT_TOLERANCE_US = 1000
ENDPOINT_ACTORS = ("client", "server")


def _is_endpoint(actor: str) -> bool:
    return actor.startswith(ENDPOINT_ACTORS)


def _digest(packet: Optional[dict[str, Any]]) -> Optional[str]:
    return packet.get("digest") if packet else None


@dataclass(frozen=True)
class EndpointView:
    """Endpoint-visible subsequence of a trace"""

    events: tuple[TraceEvent, ...]

    @classmethod
    def from_trace(cls, trace: Iterable[TraceEvent]) -> "EndpointView":
        return cls(
            tuple(e for e in trace if e.kind in ENDPOINT_KINDS and _is_endpoint(e.actor))
        )

    def detections(self) -> Counter:
        return Counter(
            (e.actor, e.kind, _digest(e.packet), e.detail)
            for e in self.events
            if e.kind in DETECTION_KINDS
        )

    def delivered(self) -> list[TraceEvent]:
        return [e for e in self.events if e.kind not in DETECTION_KINDS]

    def __len__(self) -> int:
        return len(self.events)


def views_differ(
    baseline: EndpointView, attack: EndpointView, tolerance_us: int = DEFAULT_TOLERANCE_US
) -> bool:
    a, b = baseline.delivered(), attack.delivered()
    if len(a) != len(b):
        return True
    for x, y in zip(a, b):
        if (x.actor, x.kind, x.packet) != (y.actor, y.kind, y.packet):
            return True
        if abs(x.time - y.time) > tolerance_us:
            return True
    return False


def check_comparable(baseline: ScenarioConfig, attack: ScenarioConfig) -> None:
    if baseline.without_attacker_dict() != attack.without_attacker_dict():
        base, other = baseline.without_attacker_dict(), attack.without_attacker_dict()
        fields = sorted(k for k in base if base[k] != other.get(k))
        raise MismatchedScenarios(f"Scenarios differ outside the attacker block: {fields}")


def classify_dp(
    baseline: Iterable[TraceEvent],
    attack: Iterable[TraceEvent],
    tolerance_us: int = DEFAULT_TOLERANCE_US,
    baseline_config: Optional[ScenarioConfig] = None,
    attack_config: Optional[ScenarioConfig] = None,
) -> ManipulationClass:
    if baseline_config is not None and attack_config is not None:
        check_comparable(baseline_config, attack_config)

    base_view = EndpointView.from_trace(baseline)
    attack_view = EndpointView.from_trace(attack)
    detectable = bool(attack_view.detections() - base_view.detections())
    behavior_changing = views_differ(base_view, attack_view, tolerance_us)
    return ManipulationClass(detectable, behavior_changing)


def count_kind(trace: Iterable[TraceEvent], kind: EventKind) -> int:
    return sum(1 for e in trace if e.kind is kind)
