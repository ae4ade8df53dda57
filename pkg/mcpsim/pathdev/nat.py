"""
Address translation with idle-expiring bindings.

Outbound packets refresh their binding; a packet arriving after the binding
expired gets a fresh external port (a rebind). Inbound packets without a live
binding are dropped. The MCP header is never touched.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mcpsim.harness.trace import seconds_to_us
from mcpsim.pathdev.device_base import (
    DeviceOutput,
    Direction,
    FiveTuple,
    PacketContext,
    PathDevice,
)
from mcpsim.protocol.wire import Packet

Endpoint = tuple[str, int]


@dataclass
class Binding:
    internal: Endpoint
    external_port: int
    last_activity: int


@dataclass(frozen=True)
class Rebind:
    time: int
    internal: Endpoint
    old_port: int
    new_port: int
    flow: int = -1

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "internal": f"{self.internal[0]}:{self.internal[1]}",
            "old_port": self.old_port,
            "new_port": self.new_port,
            "flow": self.flow,
        }


class BindingTable:
    def __init__(
        self,
        external_addr: str = "198.51.100.1",
        timeout: int = seconds_to_us(30),
        seed=0,
        port_base: int = 20000,
        port_range: int = 40000,
    ):
        self.external_addr = external_addr
        self.timeout = timeout
        self.port_base = port_base
        self.port_range = port_range
        self._rng = np.random.default_rng(seed)
        self._by_internal: dict[Endpoint, Binding] = {}
        self._by_port: dict[int, Binding] = {}
        self.rebinds: list[Rebind] = []

    def __len__(self) -> int:
        return len(self._by_internal)

    def _expired(self, binding: Binding, now: int) -> bool:
        return now - binding.last_activity > self.timeout

    def _allocate(self) -> int:
        if len(self._by_port) >= self.port_range:
            raise RuntimeError(f"NAT {self.external_addr} ran out of ports")
        while True:
            port = self.port_base + int(self._rng.integers(0, self.port_range))
            if port not in self._by_port:
                return port

    def _release(self, binding: Binding) -> None:
        self._by_internal.pop(binding.internal, None)
        self._by_port.pop(binding.external_port, None)

    def outbound(self, internal: Endpoint, now: int, flow: int = -1) -> Binding:
        binding = self._by_internal.get(internal)
        old_port = None
        if binding is not None and self._expired(binding, now):
            old_port = binding.external_port
            self._release(binding)
            binding = None
        if binding is None:
            binding = Binding(internal, self._allocate(), now)
            self._by_internal[internal] = binding
            self._by_port[binding.external_port] = binding
            if old_port is not None:
                self.rebinds.append(Rebind(now, internal, old_port, binding.external_port, flow))
        binding.last_activity = max(binding.last_activity, now)
        return binding

    def inbound(self, external_port: int, now: int) -> Optional[Binding]:
        binding = self._by_port.get(external_port)
        if binding is None or self._expired(binding, now):
            return None
        return binding


def nat_rewrite(ctx: PacketContext, table: BindingTable, now: int) -> Optional[PacketContext]:
    """Translate the 5-tuple of `ctx`; None means no binding (drop)"""
    t = ctx.tuple5
    if ctx.direction is Direction.FORWARD:
        binding = table.outbound(t.source, now, ctx.flow)
        return ctx.with_tuple(
            FiveTuple(table.external_addr, binding.external_port, t.dst_addr, t.dst_port, t.proto)
        )
    if t.dst_addr != table.external_addr:
        return None
    binding = table.inbound(t.dst_port, now)
    if binding is None:
        return None
    return ctx.with_tuple(FiveTuple(t.src_addr, t.src_port, *binding.internal, t.proto))


class NatDevice(PathDevice):
    type_name = "nat"
    PARAMS = {"binding_timeout": 30.0, "external_addr": "198.51.100.1"}

    def __init__(self, device_id: str, seed=0, **params):
        super().__init__(device_id, **params)
        self.table = BindingTable(
            external_addr=self.params["external_addr"],
            timeout=seconds_to_us(self.params["binding_timeout"]),
            seed=seed,
        )

    @property
    def rebinds(self) -> list[Rebind]:
        return self.table.rebinds

    def handle(self, packet: Packet, ctx: PacketContext, now: int) -> DeviceOutput:
        before = len(self.table.rebinds)
        rewritten = nat_rewrite(ctx, self.table, now)
        if rewritten is None:
            return DeviceOutput.drop("no-binding", port=ctx.tuple5.dst_port)
        detail = {"tuple": str(rewritten.tuple5)}
        if len(self.table.rebinds) > before:
            rebind = self.table.rebinds[-1]
            detail.update(rebind=f"{rebind.old_port}->{rebind.new_port}")
        return DeviceOutput(packet, rewritten, 0, detail)
