from mcpsim.pathdev.device_base import DeviceOutput, PacketContext, PathDevice
from mcpsim.protocol.wire import Packet, PcfType

MTU_VALUE_LEN = 2


def middlebox_write_scratch(packet: Packet, device_mtu: int, force: bool = False) -> Packet:
    """Lower an MTU scratch value to `device_mtu`.

    Only WRITABLE scratch is touched unless `force` is set, which models a
    non-compliant device that ignores the integrity mode.
    """
    scratch = packet.scratch
    if scratch is None or scratch.pcf_type != PcfType.MTU or scratch.length != MTU_VALUE_LEN:
        return packet
    if not scratch.writable and not force:
        return packet
    current = int.from_bytes(scratch.value, "big")
    if current <= device_mtu:
        return packet
    return packet.with_scratch_value(device_mtu.to_bytes(MTU_VALUE_LEN, "big"))


class MtuWriter(PathDevice):
    type_name = "mtu_writer"
    PARAMS = {"mtu": 1280, "compliant": True}

    def handle(self, packet: Packet, ctx: PacketContext, now: int) -> DeviceOutput:
        mtu = int(self.params["mtu"])
        written = middlebox_write_scratch(packet, mtu, force=not self.params["compliant"])
        detail = {"wrote": mtu} if written is not packet else {}
        return DeviceOutput(written, ctx, 0, detail)
