"""
Two-class LoLa router.

Latency-marked packets go to a short bounded FIFO served with priority;
everything else waits in an unbounded FIFO behind both queues. Each queue is
a single server with a fixed per-packet service time, so delay grows with
occupancy.
"""

from collections import deque
from dataclasses import dataclass, field

from mcpsim.harness.trace import seconds_to_us
from mcpsim.pathdev.device_base import (
    Action,
    DeviceOutput,
    ForwardDecision,
    PacketContext,
    PathDevice,
)
from mcpsim.protocol.wire import Packet

LATENCY = "latency"
LOSS = "loss"


@dataclass
class LolaQueues:
    capacity: int = 8
    service_time: int = seconds_to_us(0.001)
    latency_queue: deque = field(default_factory=deque)  # departure times
    loss_queue: deque = field(default_factory=deque)
    dropped: dict[str, int] = field(default_factory=lambda: {LATENCY: 0, LOSS: 0})

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"LoLa latency queue capacity must be >= 1, got {self.capacity}")
        if self.service_time < 0:
            raise ValueError("LoLa service time must be non-negative")

    def drain(self, now: int) -> None:
        for queue in (self.latency_queue, self.loss_queue):
            while queue and queue[0] <= now:
                queue.popleft()

    def occupancy(self, now: int) -> tuple[int, int]:
        self.drain(now)
        return len(self.latency_queue), len(self.loss_queue)


def lola_forward(queues: LolaQueues, packet: Packet, now: int) -> ForwardDecision:
    queues.drain(now)
    if packet.flags.lola:
        if len(queues.latency_queue) >= queues.capacity:
            queues.dropped[LATENCY] += 1
            return ForwardDecision(Action.DROPPED, LATENCY)
        start = max(now, queues.latency_queue[-1] if queues.latency_queue else now)
        departure = start + queues.service_time
        queues.latency_queue.append(departure)
        return ForwardDecision(Action.ENQUEUED, LATENCY, departure - now)

    backlog = [q[-1] for q in (queues.latency_queue, queues.loss_queue) if q]
    start = max([now, *backlog])
    departure = start + queues.service_time
    queues.loss_queue.append(departure)
    return ForwardDecision(Action.ENQUEUED, LOSS, departure - now)


class LolaRouter(PathDevice):
    type_name = "lola_router"
    PARAMS = {"capacity": 8, "service_time": 0.001}

    def __init__(self, device_id: str, **params):
        super().__init__(device_id, **params)
        capacity = int(self.params["capacity"])
        service = seconds_to_us(self.params["service_time"])
        self.queues = {
            direction: LolaQueues(capacity, service) for direction in ("fwd", "rev")
        }
        self.delays: dict[str, list[int]] = {LATENCY: [], LOSS: []}

    @property
    def drops(self) -> dict[str, int]:
        totals = {LATENCY: 0, LOSS: 0}
        for queues in self.queues.values():
            for name, count in queues.dropped.items():
                totals[name] += count
        return totals

    def handle(self, packet: Packet, ctx: PacketContext, now: int) -> DeviceOutput:
        decision = lola_forward(self.queues[ctx.direction.value], packet, now)
        if decision.dropped:
            return DeviceOutput.drop("queue-full", queue=decision.queue)
        self.delays[decision.queue].append(decision.delay)
        return DeviceOutput(packet, ctx, decision.delay, {"queue": decision.queue})
