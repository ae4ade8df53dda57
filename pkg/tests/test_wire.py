import numpy as np
import pytest

from mcpsim.errors import BadPSN, NotMCP, ReservedMode, Truncated, WireError
from mcpsim.harness.experiments import random_packet
from mcpsim.protocol.wire import (
    Flags,
    IntegrityMode,
    Packet,
    PcfType,
    ScratchSpace,
    decode,
    encode,
    psn_advance,
    psn_delta,
)


def test_minimal_packet_layout():
    data = encode(Packet(Flags(), 0, 1, 0))
    assert data[:4] == bytes.fromhex("D8007FF0")
    assert len(data) == 36


def test_stop_flag_sets_bit_one():
    data = encode(Packet(Flags(stop=True), 0, 1, 0))
    assert data[3] == 0xF2


def test_field_positions():
    scratch = ScratchSpace(PcfType.MTU, IntegrityMode.WRITABLE, b"\x05\xdc")
    packet = Packet(
        Flags(lola=True, extended=True), 0x0102030405060708, 0x0A0B0C0D, 7, scratch, b"hi", b"\xee" * 16
    )
    data = encode(packet)
    assert data[3] == 0xF9
    assert data[4:12] == bytes(range(1, 9))
    assert data[12:16] == bytes.fromhex("0A0B0C0D")
    assert data[16:20] == (7).to_bytes(4, "big")
    assert data[20] == 0x01
    assert data[21] == (1 << 6) | 2
    assert data[22:24] == b"\x05\xdc"
    assert data[24:26] == b"hi"
    assert data[26:] == b"\xee" * 16
    assert len(data) == packet.encoded_length() == 36 + 2 + 2 + 2


def test_round_trip_fuzz():
    rng = np.random.default_rng(10)
    for _ in range(10_000):
        packet = random_packet(rng)
        assert decode(encode(packet)) == packet


def test_truncated_input():
    with pytest.raises(Truncated):
        decode(b"\xd8\x00\x7f")


def test_not_mcp():
    with pytest.raises(NotMCP):
        decode(bytes(36))


def test_reserved_integrity_mode():
    scratch = ScratchSpace(PcfType.OPAQUE, IntegrityMode.READ_ONLY, b"ab")
    data = bytearray(encode(Packet(Flags(extended=True), 1, 1, 0, scratch)))
    data[21] |= 0b10 << 6
    with pytest.raises(ReservedMode):
        decode(bytes(data))


def test_psn_zero_rejected():
    data = bytearray(encode(Packet(Flags(), 1, 1, 0)))
    data[12:16] = bytes(4)
    with pytest.raises(BadPSN):
        decode(bytes(data))


def test_declared_scratch_longer_than_data():
    data = bytearray(encode(Packet(Flags(), 1, 1, 0)))
    data[3] |= 0x01
    data[21] = 63
    with pytest.raises(Truncated):
        decode(bytes(data))


def test_decode_never_crashes_on_garbage():
    rng = np.random.default_rng(11)
    for _ in range(2_000):
        data = rng.bytes(int(rng.integers(0, 120)))
        if rng.random() < 0.5:
            data = bytes.fromhex("d8007ff0") + data
        try:
            decode(data)
        except WireError:
            pass


def test_extended_flag_must_match_scratch():
    with pytest.raises(ValueError):
        Packet(Flags(extended=True), 1, 1, 0)


def test_psn_serial_space():
    assert psn_advance(5) == 6
    assert psn_advance(0xFFFFFFFF) == 1
    assert psn_delta(1, 0xFFFFFFFF) == 2
    assert psn_delta(5, 10) == -5
