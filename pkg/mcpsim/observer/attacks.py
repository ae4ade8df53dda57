"""
Active on-path attacks: header-field exfiltration, forged stop injection and
scratch-space coercion.

Exfiltration uses two cooperating taps. Both keep the same reference value per
(cid, direction): the last original scratch value, or the next expected PSN.
The ingress replaces the channel value with reference XOR covert (XOR an
optional keyed pad); the egress recovers the covert bytes and writes the
reference back. The first packet seen for a key only establishes the
reference and carries nothing. The pad is keyed by the packet tag, which
neither tap changes. Loss between the two taps still desynchronises the PSN
channel, since the egress cannot tell how many references it missed.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional

import numpy as np

from mcpsim.errors import ChannelTooSmall
from mcpsim.pathdev.device_base import Action, Direction, FiveTuple, ForwardDecision
from mcpsim.protocol.integrity import truncated_mac
from mcpsim.protocol.wire import TAG_LEN, Flags, Packet, psn_advance

PSN_BYTES = 4
_PAD_BLOCK = 32


class TapRole(Enum):
    INGRESS = "ingress"
    EGRESS = "egress"


class Channel(Enum):
    WRITABLE_SCRATCH = "scratch"
    PROTECTED_PSN = "psn"


def channel_capacity(packet: Packet, channel: Channel) -> int:
    """Covert bytes one packet can carry"""
    if channel is Channel.PROTECTED_PSN:
        return PSN_BYTES
    return packet.scratch.length if packet.scratch is not None else 0


def channel_value(packet: Packet, channel: Channel) -> bytes:
    if channel is Channel.PROTECTED_PSN:
        return packet.psn.to_bytes(PSN_BYTES, "big")
    return packet.scratch.value if packet.scratch is not None else b""


def _with_channel_value(packet: Packet, channel: Channel, value: bytes) -> Packet:
    if channel is Channel.PROTECTED_PSN:
        psn = int.from_bytes(value, "big")
        if psn == 0:
            raise ChannelTooSmall("covert value would produce the reserved psn 0")
        return Packet(
            packet.flags, packet.cid, psn, packet.pse, packet.scratch, packet.payload, packet.tag
        )
    return packet.with_scratch_value(value)


def keystream(key: bytes, cid: int, counter: int, length: int) -> bytes:
    blocks = []
    for block in range((length + _PAD_BLOCK - 1) // _PAD_BLOCK):
        nonce = cid.to_bytes(8, "big") + counter.to_bytes(8, "big") + block.to_bytes(2, "big")
        blocks.append(truncated_mac(key, nonce, _PAD_BLOCK))
    return b"".join(blocks)[:length]


def _xor(*parts: bytes) -> bytes:
    out = bytearray(len(parts[0]))
    for part in parts:
        for i, b in enumerate(part):
            out[i] ^= b
    return bytes(out)


@dataclass(frozen=True)
class ExfilResult:
    packet: Packet
    covert: bytes = b""


def exfil_apply(
    packet: Packet,
    role: TapRole,
    channel: Channel,
    covert_bits: bytes = b"",
    key: Optional[bytes] = None,
    reference: Optional[bytes] = None,
    counter: int = 0,
) -> ExfilResult:
    """Embed (INGRESS) or extract and restore (EGRESS) covert bytes.

    INGRESS uses the packet's current channel value as reference unless one
    is given. EGRESS needs the reference the ingress used; it returns the
    packet with that value restored and the full-capacity covert bytes.
    """
    capacity = channel_capacity(packet, channel)
    if role is TapRole.INGRESS and len(covert_bits) > capacity:
        raise ChannelTooSmall(
            f"{len(covert_bits)} covert bytes exceed the {channel.value} channel capacity {capacity}"
        )
    if capacity == 0:
        return ExfilResult(packet)

    pad = keystream(key, packet.cid, counter, capacity) if key else bytes(capacity)
    if role is TapRole.INGRESS:
        reference = channel_value(packet, channel) if reference is None else reference
        covert = covert_bits.ljust(capacity, b"\x00")
        return ExfilResult(_with_channel_value(packet, channel, _xor(reference, covert, pad)), covert)

    if reference is None:
        raise ValueError("EGRESS needs the reference value the ingress embedded against")
    covert = _xor(channel_value(packet, channel), reference, pad)
    return ExfilResult(_with_channel_value(packet, channel, reference), covert)


def next_reference(packet: Packet, channel: Channel) -> bytes:
    """Value both taps expect in the channel of the next packet on this key"""
    return advance_reference(channel_value(packet, channel), channel)


def advance_reference(reference: bytes, channel: Channel) -> bytes:
    if channel is Channel.PROTECTED_PSN:
        return psn_advance(int.from_bytes(reference, "big")).to_bytes(PSN_BYTES, "big")
    return reference


def set_resync(packet: Packet, on: bool) -> Packet:
    return replace(packet, flags=replace(packet.flags, resume=on))


def pad_nonce(packet: Packet) -> int:
    """Per-packet pad counter both taps derive from the untouched tag"""
    return int.from_bytes(packet.tag[:8], "big")


@dataclass
class ExfilTap:
    """One side of a two-point exfiltration channel.

    With restore on, an ingress that sees a channel value other than its
    reference (upstream loss, reordering, a rewritten scratch value) or that
    would produce psn 0 leaves the value alone and raises the reserved resume
    flag instead. The egress clears the flag and adopts the value as its new
    reference, so neither carries a chunk for that packet.
    """

    role: TapRole
    channel: Channel
    key: Optional[bytes] = None
    message: bytes = b""
    restore: bool = True
    references: dict[tuple[int, Direction], bytes] = field(default_factory=dict)
    chunks: list[bytes] = field(default_factory=list)
    resyncs: int = 0
    _cursor: int = 0

    def _peek_chunk(self, capacity: int) -> bytes:
        if not self.message:
            return b""
        return bytes(self.message[(self._cursor + i) % len(self.message)] for i in range(capacity))

    def _consume(self, capacity: int) -> None:
        if self.message:
            self._cursor = (self._cursor + capacity) % len(self.message)

    def process(self, packet: Packet, direction: Direction) -> Packet:
        capacity = channel_capacity(packet, self.channel)
        if capacity == 0:
            return packet
        key = (packet.cid, direction)
        if self.role is TapRole.EGRESS and packet.flags.resume:
            return self._resync(packet, key)
        reference = self.references.get(key)
        if reference is None:
            self.references[key] = next_reference(packet, self.channel)
            return packet
        if self.role is TapRole.INGRESS:
            return self._embed(packet, key, reference, capacity)
        return self._extract(packet, key, reference)

    def _resync(self, packet: Packet, key: tuple[int, Direction]) -> Packet:
        self.resyncs += 1
        self.references[key] = next_reference(packet, self.channel)
        return set_resync(packet, self.role is TapRole.INGRESS)

    def _embed(self, packet: Packet, key: tuple[int, Direction], reference: bytes, capacity: int) -> Packet:
        if self.restore and channel_value(packet, self.channel) != reference:
            return self._resync(packet, key)
        chunk = self._peek_chunk(capacity)
        try:
            result = exfil_apply(
                packet, TapRole.INGRESS, self.channel, chunk, self.key, reference, pad_nonce(packet)
            )
        except ChannelTooSmall:
            if self.restore:
                return self._resync(packet, key)
            self.references[key] = advance_reference(reference, self.channel)
            return packet
        self._consume(capacity)
        self.chunks.append(result.covert)
        self.references[key] = advance_reference(reference, self.channel)
        return result.packet

    def _extract(self, packet: Packet, key: tuple[int, Direction], reference: bytes) -> Packet:
        result = exfil_apply(
            packet, TapRole.EGRESS, self.channel, key=self.key, reference=reference, counter=pad_nonce(packet)
        )
        self.chunks.append(result.covert)
        self.references[key] = advance_reference(reference, self.channel)
        return result.packet if self.restore else packet

    @property
    def bits(self) -> int:
        return 8 * sum(len(c) for c in self.chunks)


@dataclass
class ObservedFlow:
    """What a tap has learned about one connection from passive observation"""

    cid: int
    tuples: dict[Direction, FiveTuple] = field(default_factory=dict)
    last_psn: dict[Direction, int] = field(default_factory=dict)

    def update(self, packet: Packet, direction: Direction, tuple5: FiveTuple) -> None:
        self.tuples[direction] = tuple5
        self.last_psn[direction] = packet.psn


def inject_stop(
    flow: ObservedFlow, directions: Iterable[Direction], rng: np.random.Generator
) -> list[tuple[Direction, FiveTuple, Packet]]:
    """Forge stop-flagged packets for a flow.

    cid, psn and pse continue what was observed, so a path device accepts
    them; the tag is random because the attacker holds no connection key.
    """
    forged = []
    for direction in directions:
        if direction not in flow.tuples:
            continue
        psn = psn_advance(flow.last_psn[direction])
        pse = flow.last_psn.get(direction.opposite, 0)
        packet = Packet(
            Flags(stop=True), flow.cid, psn, pse, tag=rng.bytes(TAG_LEN)
        )
        forged.append((direction, flow.tuples[direction], packet))
    return forged


class Penalty(Enum):
    DROP = "drop"
    DELAY = "delay"


@dataclass(frozen=True)
class CoercionPolicy:
    required_pcf_type: int
    penalty: Penalty = Penalty.DROP
    delay: int = 0
    advertise: bool = True

    def describe(self) -> str:
        return f"require-pcf={self.required_pcf_type} penalty={self.penalty.value}"


def complies(packet: Packet, policy: CoercionPolicy) -> bool:
    return packet.scratch is not None and packet.scratch.pcf_type == policy.required_pcf_type


def coerce_gate(packet: Packet, policy: CoercionPolicy) -> ForwardDecision:
    if complies(packet, policy):
        return ForwardDecision(Action.FORWARD)
    if policy.penalty is Penalty.DROP:
        return ForwardDecision(Action.DROPPED, "coercion")
    return ForwardDecision(Action.DELAYED, "slow-lane", policy.delay)
