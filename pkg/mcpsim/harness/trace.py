import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from mcpsim.protocol.wire import Packet, encode

US_PER_S = 1_000_000


def seconds_to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_S))


class EventKind(Enum):
    SENT = "SENT"
    FORWARDED = "FORWARDED"
    DROPPED = "DROPPED"
    DELIVERED = "DELIVERED"
    DELIVERED_FLAGGED = "DELIVERED_FLAGGED"
    VERIFY_FAIL = "VERIFY_FAIL"
    STATE_TRANSITION = "STATE_TRANSITION"
    POLICY_SIGNAL = "POLICY_SIGNAL"
    KEEPALIVE = "KEEPALIVE"
    INJECTED = "INJECTED"


ENDPOINT_KINDS = frozenset(
    {
        EventKind.DELIVERED,
        EventKind.DELIVERED_FLAGGED,
        EventKind.VERIFY_FAIL,
        EventKind.POLICY_SIGNAL,
    }
)
DETECTION_KINDS = frozenset({EventKind.VERIFY_FAIL, EventKind.POLICY_SIGNAL})


def packet_summary(packet: Packet) -> dict[str, Any]:
    """Header fields of a packet as seen on the wire, plus a digest of its bytes"""
    scratch = packet.scratch
    return {
        "cid": f"{packet.cid:016x}",
        "psn": packet.psn,
        "pse": packet.pse,
        "flags": packet.flags.short(),
        "scratch": None
        if scratch is None
        else {
            "type": scratch.pcf_type,
            "mode": int(scratch.integrity_mode),
            "length": scratch.length,
            "value": scratch.value.hex(),
        },
        "payload_len": len(packet.payload),
        "digest": hashlib.sha256(encode(packet)).hexdigest()[:16],
    }


def format_detail(**values: Any) -> str:
    return " ".join(f"{k}={v}" for k, v in values.items())


def parse_detail(detail: str) -> dict[str, str]:
    parsed = {}
    for token in detail.split():
        if "=" in token:
            k, v = token.split("=", 1)
            parsed[k] = v
    return parsed


@dataclass(frozen=True)
class TraceEvent:
    time: int
    actor: str
    kind: EventKind
    packet: Optional[dict[str, Any]] = None
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "time": self.time,
            "actor": self.actor,
            "kind": self.kind.value,
            "packet": self.packet,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TraceEvent":
        return cls(
            time=int(data["time"]),
            actor=data["actor"],
            kind=EventKind(data["kind"]),
            packet=data.get("packet"),
            detail=data.get("detail", ""),
        )

    @classmethod
    def for_packet(
        cls, time: int, actor: str, kind: EventKind, packet: Packet, **detail: Any
    ) -> "TraceEvent":
        return cls(time, actor, kind, packet_summary(packet), format_detail(**detail))


@dataclass
class TraceRecorder:
    """Append-only event log; enforces nondecreasing time"""

    events: list[TraceEvent] = field(default_factory=list)

    def emit(self, event: TraceEvent) -> None:
        if self.events and event.time < self.events[-1].time:
            raise ValueError(
                f"Trace time went backwards: {event.time} < {self.events[-1].time}"
            )
        self.events.append(event)

    def extend(self, events) -> None:
        for event in events:
            self.emit(event)

    def of_kind(self, *kinds: EventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind in kinds]
