"""
Three-class trust boundary: what the endpoints protect, what the path may
read, and what the path may rewrite.

Tags are HMAC-SHA-256 truncated to 16 bytes over the canonical bytes of a
packet. Canonical bytes are the encoded packet without its tag and with the
value of a WRITABLE scratch space zeroed; scratch type, mode and length stay
inside the envelope.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np
from cryptography.hazmat.primitives import constant_time, hashes, hmac

from mcpsim.protocol.wire import (
    HEADER_LEN,
    SCRATCH_FRAMING_LEN,
    TAG_LEN,
    Packet,
    encode_body,
)

KEY_LEN = 32


class TrustClass(Enum):
    END_TO_END = "end_to_end"
    PATH_READABLE = "path_readable"
    PATH_WRITABLE = "path_writable"


class VerifyResult(Enum):
    OK = "ok"
    FAIL = "fail"


@dataclass(frozen=True)
class ConnectionKey:
    key: bytes

    def __post_init__(self):
        if len(self.key) != KEY_LEN:
            raise ValueError(f"Connection keys are {KEY_LEN} bytes, got {len(self.key)}")

    @classmethod
    def generate(cls, rng: np.random.Generator) -> "ConnectionKey":
        return cls(rng.bytes(KEY_LEN))

    def __repr__(self) -> str:
        return "ConnectionKey(<redacted>)"


def truncated_mac(key: bytes, data: bytes, length: int) -> bytes:
    """First `length` bytes of HMAC-SHA-256(key, data)"""
    h = hmac.HMAC(key, hashes.SHA256())
    h.update(data)
    return h.finalize()[:length]


def canonical_bytes(packet: Packet) -> bytes:
    return encode_body(packet, zero_writable=True)


def compute_tag(key: ConnectionKey, packet: Packet) -> bytes:
    return truncated_mac(key.key, canonical_bytes(packet), TAG_LEN)


def seal(key: ConnectionKey, packet: Packet) -> Packet:
    """Return the packet carrying its correct tag"""
    return packet.with_tag(compute_tag(key, packet))


def verify(key: ConnectionKey, packet: Packet) -> VerifyResult:
    if constant_time.bytes_eq(packet.tag, compute_tag(key, packet)):
        return VerifyResult.OK
    return VerifyResult.FAIL


def trust_regions(packet: Packet) -> list[tuple[int, int, TrustClass]]:
    """Byte ranges [start, end) of the encoded packet and their trust class.

    Every byte of the encoding falls in exactly one range. The tag is readable
    by the path but any change to it is detected, so it sits with the header.
    """
    regions = [(0, HEADER_LEN, TrustClass.PATH_READABLE)]
    offset = HEADER_LEN
    scratch = packet.scratch
    if scratch is not None:
        regions.append((offset, offset + SCRATCH_FRAMING_LEN, TrustClass.PATH_READABLE))
        offset += SCRATCH_FRAMING_LEN
        if scratch.length:
            value_class = (
                TrustClass.PATH_WRITABLE if scratch.writable else TrustClass.PATH_READABLE
            )
            regions.append((offset, offset + scratch.length, value_class))
            offset += scratch.length
    if packet.payload:
        regions.append((offset, offset + len(packet.payload), TrustClass.END_TO_END))
        offset += len(packet.payload)
    regions.append((offset, offset + TAG_LEN, TrustClass.PATH_READABLE))
    return regions


def classify_bit(packet: Packet, bit_index: int) -> TrustClass:
    byte_index = bit_index // 8
    for start, end, trust_class in trust_regions(packet):
        if start <= byte_index < end:
            return trust_class
    raise IndexError(f"bit {bit_index} is outside the encoded packet")


def golden_vector_lines(key: ConnectionKey, packets: Iterable[Packet]) -> list[str]:
    return [f"{canonical_bytes(p).hex()} {compute_tag(key, p).hex()}" for p in packets]


def write_golden_vectors(path: str | Path, key: ConnectionKey, packets: Iterable[Packet]) -> Path:
    path = Path(path)
    path.write_text("\n".join(golden_vector_lines(key, packets)) + "\n")
    return path


def read_golden_vectors(path: str | Path) -> list[tuple[bytes, bytes]]:
    vectors = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        canonical_hex, tag_hex = line.split()
        vectors.append((bytes.fromhex(canonical_hex), bytes.fromhex(tag_hex)))
    return vectors
