"""
Transport-independent on-path flow state.

    (absent) --first packet--> UNIFLOW
    UNIFLOW --reverse packet, pse in forward window--> ASSOCIATING
    ASSOCIATING --forward packet, pse in reverse window--> ASSOCIATED
    ASSOCIATED --stop seen in one direction--> STOPWAIT
    STOPWAIT --stop seen in the other direction--> STOPPING
    any --timeout--> (absent)

Timeouts: UNIFLOW/ASSOCIATING use idle, ASSOCIATED/STOPWAIT use associated,
STOPPING uses stopping. A legacy (not MCP-aware) tracker keeps every flow in
UNIFLOW and applies the idle timeout.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Optional

from mcpsim.harness.trace import (
    EventKind,
    TraceEvent,
    format_detail,
    packet_summary,
    seconds_to_us,
)
from mcpsim.pathdev.device_base import (
    DeviceOutput,
    Direction,
    FiveTuple,
    PacketContext,
    PathDevice,
)
from mcpsim.protocol.wire import Packet, psn_delta

PSE_WINDOW = 1 << 16


class FlowState(Enum):
    UNIFLOW = "UNIFLOW"
    ASSOCIATING = "ASSOCIATING"
    ASSOCIATED = "ASSOCIATED"
    STOPWAIT = "STOPWAIT"
    STOPPING = "STOPPING"


@dataclass(frozen=True)
class FlowTimeouts:
    idle: int = seconds_to_us(30)
    associated: int = seconds_to_us(300)
    stopping: int = seconds_to_us(5)

    @classmethod
    def from_seconds(cls, idle: float = 30, associated: float = 300, stopping: float = 5):
        return cls(seconds_to_us(idle), seconds_to_us(associated), seconds_to_us(stopping))


@dataclass
class FlowEntry:
    flow_key: Hashable
    first_direction: Direction
    last_activity: int
    timeouts: FlowTimeouts = field(default_factory=FlowTimeouts)
    state: FlowState = FlowState.UNIFLOW
    fwd_max_psn: Optional[int] = None
    rev_max_psn: Optional[int] = None
    stop_seen_fwd: bool = False
    stop_seen_rev: bool = False


@dataclass(frozen=True)
class StateTransition:
    time: int
    flow_key: Hashable
    old: Optional[FlowState]
    new: Optional[FlowState]

    @property
    def created(self) -> bool:
        return self.old is None

    @property
    def expired(self) -> bool:
        return self.new is None

    def describe(self) -> str:
        old = self.old.value if self.old else "-"
        new = self.new.value if self.new else "expired"
        return f"{old}->{new}"


def flow_timeout(entry: FlowEntry) -> int:
    if entry.state in (FlowState.UNIFLOW, FlowState.ASSOCIATING):
        return entry.timeouts.idle
    if entry.state in (FlowState.ASSOCIATED, FlowState.STOPWAIT):
        return entry.timeouts.associated
    return entry.timeouts.stopping


def flow_key(packet: Packet, tuple5: Optional[FiveTuple]) -> tuple:
    return packet.cid, tuple5.canonical() if tuple5 is not None else None


def _newer(psn: int, current: Optional[int]) -> int:
    if current is None or psn_delta(psn, current) > 0:
        return psn
    return current


def _in_window(pse: int, mark: Optional[int]) -> bool:
    return pse != 0 and mark is not None and abs(psn_delta(pse, mark)) <= PSE_WINDOW


class FlowTable:
    def __init__(self, timeouts: Optional[FlowTimeouts] = None, mcp_aware: bool = True):
        self.timeouts = timeouts or FlowTimeouts()
        self.mcp_aware = mcp_aware
        self.entries: dict[Hashable, FlowEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, key: Hashable) -> Optional[FlowEntry]:
        return self.entries.get(key)

    def _is_expired(self, entry: FlowEntry, now: int) -> bool:
        return now - entry.last_activity > flow_timeout(entry)

    def observe(
        self,
        packet: Packet,
        direction: Direction,
        now: int,
        tuple5: Optional[FiveTuple] = None,
    ) -> Optional[StateTransition]:
        key = flow_key(packet, tuple5)
        entry = self.entries.get(key)
        if entry is not None and self._is_expired(entry, now):
            del self.entries[key]
            entry = None

        if entry is None:
            entry = FlowEntry(key, direction, now, self.timeouts)
            entry.fwd_max_psn = packet.psn
            entry.stop_seen_fwd = packet.flags.stop and self.mcp_aware
            self.entries[key] = entry
            return StateTransition(now, key, None, entry.state)

        old = entry.state
        forward = direction is entry.first_direction
        if forward:
            entry.fwd_max_psn = _newer(packet.psn, entry.fwd_max_psn)
        else:
            entry.rev_max_psn = _newer(packet.psn, entry.rev_max_psn)
        entry.last_activity = max(entry.last_activity, now)

        if self.mcp_aware:
            self._advance(entry, packet, forward)

        if entry.state is not old:
            return StateTransition(now, key, old, entry.state)
        return None

    def _advance(self, entry: FlowEntry, packet: Packet, forward: bool) -> None:
        if packet.flags.stop:
            if forward:
                entry.stop_seen_fwd = True
            else:
                entry.stop_seen_rev = True

        if entry.state is FlowState.UNIFLOW and not forward:
            if _in_window(packet.pse, entry.fwd_max_psn):
                entry.state = FlowState.ASSOCIATING
        elif entry.state is FlowState.ASSOCIATING and forward:
            if _in_window(packet.pse, entry.rev_max_psn):
                entry.state = FlowState.ASSOCIATED

        if entry.state in (FlowState.ASSOCIATED, FlowState.STOPWAIT):
            if entry.stop_seen_fwd and entry.stop_seen_rev:
                entry.state = FlowState.STOPPING
            elif entry.stop_seen_fwd or entry.stop_seen_rev:
                entry.state = FlowState.STOPWAIT

    def expire(self, now: int) -> list[StateTransition]:
        expired = [key for key, e in self.entries.items() if self._is_expired(e, now)]
        transitions = []
        for key in expired:
            entry = self.entries.pop(key)
            transitions.append(StateTransition(now, key, entry.state, None))
        return transitions


def device_observe(
    table: FlowTable,
    packet: Packet,
    direction: Direction,
    now: int,
    tuple5: Optional[FiveTuple] = None,
) -> Optional[StateTransition]:
    return table.observe(packet, direction, now, tuple5)


class FlowTracker(PathDevice):
    """Stateful device (NAT state, firewall) driven by the flow state machine"""

    type_name = "flow_tracker"
    PARAMS = {
        "idle": 30.0,
        "associated": 300.0,
        "stopping": 5.0,
        "mcp_aware": True,
        "drop_unsolicited": False,
    }

    def __init__(self, device_id: str, **params):
        super().__init__(device_id, **params)
        timeouts = FlowTimeouts.from_seconds(
            self.params["idle"], self.params["associated"], self.params["stopping"]
        )
        self.table = FlowTable(timeouts, mcp_aware=bool(self.params["mcp_aware"]))
        self.expired_count = 0

    def _event(self, transition: StateTransition, packet: Optional[Packet] = None) -> TraceEvent:
        cid, tuple5 = transition.flow_key
        detail = format_detail(transition=transition.describe(), cid=f"{cid:016x}", flow=tuple5)
        summary = packet_summary(packet) if packet is not None else None
        return TraceEvent(
            transition.time, self.device_id, EventKind.STATE_TRANSITION, summary, detail
        )

    def handle(self, packet: Packet, ctx: PacketContext, now: int) -> DeviceOutput:
        expired = self.sweep(now)
        transition = self.table.observe(packet, ctx.direction, now, ctx.tuple5)
        events = list(expired)
        if transition is not None:
            events.append(self._event(transition, packet))
            if (
                transition.created
                and ctx.direction is Direction.REVERSE
                and self.params["drop_unsolicited"]
            ):
                del self.table.entries[transition.flow_key]
                return DeviceOutput.drop("unsolicited", events)
        entry = self.table.get(transition.flow_key if transition else flow_key(packet, ctx.tuple5))
        return DeviceOutput(packet, ctx, 0, {"state": entry.state.value}, events)

    def sweep(self, now: int) -> list[TraceEvent]:
        transitions = self.table.expire(now)
        self.expired_count += len(transitions)
        return [self._event(t) for t in transitions]
