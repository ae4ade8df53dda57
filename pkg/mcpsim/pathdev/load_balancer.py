from typing import Optional

from mcpsim.pathdev.device_base import DeviceOutput, Direction, PacketContext, PathDevice
from mcpsim.protocol.cid import routed_backend, routed_cid_valid
from mcpsim.protocol.wire import Packet

DROP = None


def lb_route(cid: int, lb_key: bytes, backend_count: int) -> Optional[int]:
    """Backend index for a server-routed cid, or DROP when the authenticator fails"""
    if backend_count < 1:
        raise ValueError(f"backend_count must be >= 1, got {backend_count}")
    if not routed_cid_valid(lb_key, cid):
        return DROP
    return routed_backend(cid) % backend_count


class LoadBalancer(PathDevice):
    """Stateless cid-routing load balancer; only the forward direction is routed"""

    type_name = "load_balancer"
    PARAMS = {"lb_key": "", "backend_count": 1}

    def __init__(self, device_id: str, **params):
        super().__init__(device_id, **params)
        key = self.params["lb_key"]
        self.lb_key = bytes.fromhex(key) if isinstance(key, str) else bytes(key)
        self.backend_count = int(self.params["backend_count"])
        self.routed: dict[int, int] = {}

    def handle(self, packet: Packet, ctx: PacketContext, now: int) -> DeviceOutput:
        if ctx.direction is Direction.REVERSE:
            return DeviceOutput(packet, ctx)
        backend = lb_route(packet.cid, self.lb_key, self.backend_count)
        if backend is DROP:
            return DeviceOutput.drop("cid-auth")
        self.routed[backend] = self.routed.get(backend, 0) + 1
        return DeviceOutput(packet, ctx, 0, {"backend": backend})
