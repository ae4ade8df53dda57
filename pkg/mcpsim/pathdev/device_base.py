from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, ClassVar, Optional

from mcpsim.harness.trace import TraceEvent
from mcpsim.protocol.wire import Packet

UDP = 17


class Direction(Enum):
    FORWARD = "fwd"
    REVERSE = "rev"

    @property
    def opposite(self) -> "Direction":
        return Direction.REVERSE if self is Direction.FORWARD else Direction.FORWARD


@dataclass(frozen=True, order=True)
class FiveTuple:
    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    proto: int = UDP

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_addr, self.dst_port, self.src_addr, self.src_port, self.proto)

    def canonical(self) -> "FiveTuple":
        """Direction-independent form: lower (addr, port) first"""
        if (self.src_addr, self.src_port) <= (self.dst_addr, self.dst_port):
            return self
        return self.reversed()

    @property
    def source(self) -> tuple[str, int]:
        return self.src_addr, self.src_port

    def __str__(self) -> str:
        return f"{self.src_addr}:{self.src_port}>{self.dst_addr}:{self.dst_port}/{self.proto}"


@dataclass(frozen=True)
class PacketContext:
    """What travels with a packet outside the MCP header"""

    tuple5: FiveTuple
    direction: Direction
    flow: int = -1  # ground-truth flow index, -1 for forged packets

    def with_tuple(self, tuple5: FiveTuple) -> "PacketContext":
        return replace(self, tuple5=tuple5)


class Action(Enum):
    FORWARD = "forward"
    ENQUEUED = "enqueued"
    DELAYED = "delayed"
    DROPPED = "dropped"


@dataclass(frozen=True)
class ForwardDecision:
    action: Action
    queue: Optional[str] = None
    delay: int = 0

    @property
    def dropped(self) -> bool:
        return self.action is Action.DROPPED


@dataclass
class DeviceOutput:
    packet: Optional[Packet]
    ctx: Optional[PacketContext]
    delay: int = 0
    detail: dict[str, Any] = field(default_factory=dict)
    events: list[TraceEvent] = field(default_factory=list)

    @property
    def dropped(self) -> bool:
        return self.packet is None

    @classmethod
    def drop(cls, reason: str, events: Optional[list[TraceEvent]] = None, **detail) -> "DeviceOutput":
        return cls(None, None, 0, {"reason": reason, **detail}, events or [])


class PathDevice(ABC):
    """Base class for cooperating on-path devices"""

    type_name: ClassVar[str]
    PARAMS: ClassVar[dict[str, Any]] = {}

    def __init__(self, device_id: str, **params):
        self.device_id = device_id
        self.params = {**self.PARAMS, **params}

    @abstractmethod
    def handle(self, packet: Packet, ctx: PacketContext, now: int) -> DeviceOutput:
        """Process one packet arriving at the device"""

    def sweep(self, now: int) -> list[TraceEvent]:
        """Housekeeping at simulated time `now`; stateless devices have none"""
        return []

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.device_id!r})"
