"""
MCP packet model and its bit-exact binary codec.

Layout (big-endian):

    0..3    magic (top 28 bits, 0xD8007FF) | L R S X flag bits (bits 3..0)
    4..11   cid
    12..15  psn
    16..19  pse
    [X set] pcf_type (1 byte), integrity_mode << 6 | length (1 byte), value
    ...     payload
    -16..   integrity tag
"""

import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

from mcpsim.errors import BadPSN, NotMCP, ReservedMode, Truncated

MAGIC = 0xD8007FF
HEADER_LEN = 20
TAG_LEN = 16
MIN_PACKET_LEN = HEADER_LEN + TAG_LEN
SCRATCH_FRAMING_LEN = 2
MAX_SCRATCH_LEN = 63

PSN_MODULUS = 1 << 32
PSN_MAX = PSN_MODULUS - 1
CID_MAX = (1 << 64) - 1

_HEADER = struct.Struct(">IQII")

FLAG_LOLA = 0b1000
FLAG_RESUME = 0b0100
FLAG_STOP = 0b0010
FLAG_EXTENDED = 0b0001


class PcfType(IntEnum):
    MTU = 0x01
    OPAQUE = 0x02


class IntegrityMode(IntEnum):
    READ_ONLY = 0
    WRITABLE = 1


@dataclass(frozen=True)
class Flags:
    lola: bool = False
    resume: bool = False
    stop: bool = False
    extended: bool = False

    def to_nibble(self) -> int:
        return (
            (FLAG_LOLA if self.lola else 0)
            | (FLAG_RESUME if self.resume else 0)
            | (FLAG_STOP if self.stop else 0)
            | (FLAG_EXTENDED if self.extended else 0)
        )

    @classmethod
    def from_nibble(cls, nibble: int) -> "Flags":
        return cls(
            lola=bool(nibble & FLAG_LOLA),
            resume=bool(nibble & FLAG_RESUME),
            stop=bool(nibble & FLAG_STOP),
            extended=bool(nibble & FLAG_EXTENDED),
        )

    def short(self) -> str:
        """Compact flag string, e.g. 'L-S-'"""
        return "".join(
            c if on else "-"
            for c, on in zip("LRSX", (self.lola, self.resume, self.stop, self.extended))
        )


@dataclass(frozen=True)
class ScratchSpace:
    pcf_type: int
    integrity_mode: int
    value: bytes = b""

    def __post_init__(self):
        if not 0 <= self.pcf_type <= 0xFF:
            raise ValueError(f"pcf_type out of range: {self.pcf_type}")
        if self.integrity_mode not in (IntegrityMode.READ_ONLY, IntegrityMode.WRITABLE):
            raise ValueError(f"Reserved integrity mode: {self.integrity_mode}")
        if len(self.value) > MAX_SCRATCH_LEN:
            raise ValueError(f"Scratch value too long: {len(self.value)} bytes")

    @property
    def length(self) -> int:
        return len(self.value)

    @property
    def writable(self) -> bool:
        return self.integrity_mode == IntegrityMode.WRITABLE

    def with_value(self, value: bytes) -> "ScratchSpace":
        if len(value) != self.length:
            raise ValueError("Scratch length is fixed by the sender")
        return replace(self, value=bytes(value))


@dataclass(frozen=True)
class Packet:
    flags: Flags
    cid: int
    psn: int
    pse: int = 0
    scratch: Optional[ScratchSpace] = None
    payload: bytes = b""
    tag: bytes = field(default=bytes(TAG_LEN))

    magic = MAGIC

    def __post_init__(self):
        if self.flags.extended != (self.scratch is not None):
            raise ValueError("flags.extended must match scratch presence")
        if not 0 <= self.cid <= CID_MAX:
            raise ValueError(f"cid out of range: {self.cid}")
        if not 0 <= self.psn <= PSN_MAX or not 0 <= self.pse <= PSN_MAX:
            raise ValueError("psn/pse out of 32-bit range")
        if len(self.tag) != TAG_LEN:
            raise ValueError(f"tag must be {TAG_LEN} bytes")

    def with_tag(self, tag: bytes) -> "Packet":
        return replace(self, tag=bytes(tag))

    def with_scratch_value(self, value: bytes) -> "Packet":
        return replace(self, scratch=self.scratch.with_value(value))

    def encoded_length(self) -> int:
        scratch_len = SCRATCH_FRAMING_LEN + self.scratch.length if self.scratch else 0
        return MIN_PACKET_LEN + scratch_len + len(self.payload)


def psn_advance(psn: int) -> int:
    """Next serial number, skipping 0"""
    return psn + 1 if psn < PSN_MAX else 1


def psn_delta(a: int, b: int) -> int:
    """Signed distance a - b in the 32-bit serial space"""
    d = (a - b) % PSN_MODULUS
    return d - PSN_MODULUS if d >= PSN_MODULUS // 2 else d


def encode_body(packet: Packet, zero_writable: bool = False) -> bytes:
    """Header, scratch and payload, without the trailing tag"""
    first = (MAGIC << 4) | packet.flags.to_nibble()
    parts = [_HEADER.pack(first, packet.cid, packet.psn, packet.pse)]
    scratch = packet.scratch
    if scratch is not None:
        parts.append(bytes([scratch.pcf_type, (scratch.integrity_mode << 6) | scratch.length]))
        if zero_writable and scratch.writable:
            parts.append(bytes(scratch.length))
        else:
            parts.append(scratch.value)
    parts.append(packet.payload)
    return b"".join(parts)


def encode(packet: Packet) -> bytes:
    return encode_body(packet) + packet.tag


def decode(data: bytes) -> Packet:
    data = bytes(data)
    if len(data) < 4:
        raise Truncated(f"Need at least 4 bytes, got {len(data)}")
    (first,) = struct.unpack_from(">I", data, 0)
    if first >> 4 != MAGIC:
        raise NotMCP(f"Bad magic 0x{first >> 4:07X}")
    if len(data) < MIN_PACKET_LEN:
        raise Truncated(f"Need at least {MIN_PACKET_LEN} bytes, got {len(data)}")

    _, cid, psn, pse = _HEADER.unpack_from(data, 0)
    flags = Flags.from_nibble(first & 0xF)
    if psn == 0:
        raise BadPSN("psn 0 is reserved")

    offset = HEADER_LEN
    scratch = None
    if flags.extended:
        if len(data) < MIN_PACKET_LEN + SCRATCH_FRAMING_LEN:
            raise Truncated("Missing scratch framing")
        pcf_type = data[offset]
        mode = data[offset + 1] >> 6
        length = data[offset + 1] & 0x3F
        if mode >= 2:
            raise ReservedMode(f"Reserved integrity mode {mode}")
        offset += SCRATCH_FRAMING_LEN
        if len(data) < offset + length + TAG_LEN:
            raise Truncated(f"Scratch declares {length} bytes past the end")
        scratch = ScratchSpace(pcf_type, mode, data[offset : offset + length])
        offset += length

    return Packet(
        flags=flags,
        cid=cid,
        psn=psn,
        pse=pse,
        scratch=scratch,
        payload=data[offset:-TAG_LEN],
        tag=data[-TAG_LEN:],
    )
