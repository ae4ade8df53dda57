import hashlib
import hmac

import numpy as np
import pytest

from mcpsim.harness.experiments import _rejected, random_packet
from mcpsim.protocol.integrity import (
    ConnectionKey,
    TrustClass,
    VerifyResult,
    canonical_bytes,
    classify_bit,
    compute_tag,
    read_golden_vectors,
    seal,
    trust_regions,
    verify,
    write_golden_vectors,
)
from mcpsim.protocol.wire import Flags, IntegrityMode, Packet, PcfType, ScratchSpace, encode


def _scratch_packet(mode: IntegrityMode) -> Packet:
    scratch = ScratchSpace(PcfType.MTU, mode, b"\x05\xdc")
    return Packet(Flags(extended=True), 42, 1000, 999, scratch, b"payload")


def test_tag_matches_stdlib_hmac(key, rng):
    for _ in range(200):
        packet = random_packet(rng)
        oracle = hmac.new(key.key, canonical_bytes(packet), hashlib.sha256).digest()[:16]
        assert compute_tag(key, packet) == oracle


def test_sealed_packet_verifies(key):
    packet = seal(key, _scratch_packet(IntegrityMode.READ_ONLY))
    assert verify(key, packet) is VerifyResult.OK


def test_wrong_key_fails(key, rng):
    packet = seal(key, _scratch_packet(IntegrityMode.READ_ONLY))
    assert verify(ConnectionKey.generate(rng), packet) is VerifyResult.FAIL


def test_writable_value_outside_envelope(key):
    packet = seal(key, _scratch_packet(IntegrityMode.WRITABLE))
    assert verify(key, packet.with_scratch_value(b"\x05\x00")) is VerifyResult.OK


def test_read_only_value_inside_envelope(key):
    packet = seal(key, _scratch_packet(IntegrityMode.READ_ONLY))
    assert verify(key, packet.with_scratch_value(b"\x05\x00")) is VerifyResult.FAIL


def test_canonical_zeroes_only_writable_value():
    writable = canonical_bytes(_scratch_packet(IntegrityMode.WRITABLE))
    read_only = canonical_bytes(_scratch_packet(IntegrityMode.READ_ONLY))
    assert writable[22:24] == b"\x00\x00"
    assert read_only[22:24] == b"\x05\xdc"


def test_trust_regions_cover_every_byte(rng):
    for _ in range(500):
        packet = random_packet(rng)
        regions = trust_regions(packet)
        assert regions[0][0] == 0
        assert regions[-1][1] == len(encode(packet))
        for (_, end, _), (start, _, _) in zip(regions, regions[1:]):
            assert end == start


def test_classify_bit():
    packet = _scratch_packet(IntegrityMode.WRITABLE)
    assert classify_bit(packet, 0) is TrustClass.PATH_READABLE
    assert classify_bit(packet, 22 * 8) is TrustClass.PATH_WRITABLE
    assert classify_bit(packet, 24 * 8) is TrustClass.END_TO_END
    with pytest.raises(IndexError):
        classify_bit(packet, len(encode(packet)) * 8)


def test_key_length_enforced():
    with pytest.raises(ValueError):
        ConnectionKey(b"short")
    assert "redacted" in repr(ConnectionKey(bytes(32)))


def test_golden_vectors_round_trip(tmp_path, key):
    packets = [seal(key, _scratch_packet(m)) for m in IntegrityMode]
    path = write_golden_vectors(tmp_path / "vectors.txt", key, packets)
    vectors = read_golden_vectors(path)
    assert len(vectors) == 2
    for (canonical, tag), packet in zip(vectors, packets):
        assert canonical == canonical_bytes(packet)
        assert tag == packet.tag
        assert hmac.new(key.key, canonical, hashlib.sha256).digest()[:16] == tag


def test_single_bit_flips_detected(key):
    rng = np.random.default_rng(5)
    packet = seal(key, random_packet(rng, writable=False, scratch_len=4))
    data = bytearray(encode(packet))
    for bit in range(0, 20 * 8, 7):
        flipped = bytearray(data)
        flipped[bit // 8] ^= 0x80 >> (bit % 8)
        assert _rejected(key, bytes(flipped))
