import numpy as np
import pytest

from conftest import CLIENT_TUPLE, make_packet
from mcpsim.errors import ChannelTooSmall
from mcpsim.harness.experiments import exfil_trial_packets
from mcpsim.observer.attacks import (
    Channel,
    CoercionPolicy,
    ExfilTap,
    ObservedFlow,
    Penalty,
    TapRole,
    channel_capacity,
    coerce_gate,
    exfil_apply,
    inject_stop,
    keystream,
)
from mcpsim.observer.classes import ClassPattern, ManipulationClass
from mcpsim.pathdev.device_base import Action, Direction
from mcpsim.protocol.integrity import VerifyResult, verify
from mcpsim.protocol.wire import Flags, IntegrityMode, Packet, PcfType, ScratchSpace, encode

FWD, REV = Direction.FORWARD, Direction.REVERSE


def _scratch_packet(psn: int, value: bytes = bytes(8)) -> Packet:
    scratch = ScratchSpace(PcfType.OPAQUE, IntegrityMode.WRITABLE, value)
    return Packet(Flags(extended=True), 0xC1D, psn, 0, scratch, b"data")


def _run_taps(channel: Channel, packets: list[Packet], key=None, restore=True):
    ingress = ExfilTap(TapRole.INGRESS, channel, key, message=b"covert!!")
    egress = ExfilTap(TapRole.EGRESS, channel, key, restore=restore)
    delivered = [egress.process(ingress.process(p, FWD), FWD) for p in packets]
    return ingress, egress, delivered


class TestExfiltration:
    @pytest.mark.parametrize("channel", list(Channel))
    def test_two_taps_recover_message_and_restore(self, channel):
        packets = [_scratch_packet(psn) for psn in range(10, 14)]
        ingress, egress, delivered = _run_taps(channel, packets)
        assert delivered == packets
        assert egress.chunks == ingress.chunks
        assert b"".join(egress.chunks).startswith(b"covert")
        assert egress.bits == 8 * channel_capacity(packets[0], channel) * 3

    def test_keyed_pad(self):
        packets = [_scratch_packet(psn) for psn in range(10, 13)]
        key = b"k" * 32
        ingress, egress, delivered = _run_taps(Channel.WRITABLE_SCRATCH, packets, key=key)
        assert delivered == packets
        assert egress.chunks == ingress.chunks
        assert keystream(key, 1, 0, 40) != keystream(key, 1, 1, 40)
        assert len(keystream(key, 1, 0, 40)) == 40

    def test_without_restore_scratch_change_reaches_endpoint(self):
        packets = [_scratch_packet(psn) for psn in range(10, 13)]
        _, egress, delivered = _run_taps(Channel.WRITABLE_SCRATCH, packets, restore=False)
        assert delivered[0] == packets[0]
        assert delivered[1] != packets[1]
        assert delivered[1].scratch.value == b"covert!!"
        assert egress.chunks[0] == b"covert!!"

    @pytest.mark.parametrize("channel", list(Channel))
    def test_restore_survives_gaps_and_reordering(self, channel):
        packets = [_scratch_packet(psn) for psn in (10, 11, 12, 15, 14, 16, 17, 18)]
        ingress, egress, delivered = _run_taps(channel, packets, key=b"k" * 32)
        assert delivered == packets
        assert egress.chunks == ingress.chunks
        assert len(ingress.chunks) >= 3

    @pytest.mark.parametrize("size", [1, 2, 4, 17, 63])
    def test_lossy_sealed_sequences_restore_byte_identical(self, size, rng, key):
        packets = exfil_trial_packets(rng, key, size, count=12)
        ingress, egress, delivered = _run_taps(Channel.WRITABLE_SCRATCH, packets, key=b"p" * 32)
        assert [encode(p) for p in delivered] == [encode(p) for p in packets]
        assert egress.chunks == ingress.chunks

    def test_psn_gap_raises_resync_mark_between_taps(self):
        ingress = ExfilTap(TapRole.INGRESS, Channel.PROTECTED_PSN, message=b"covert!!")
        ingress.process(_scratch_packet(10), FWD)
        marked = ingress.process(_scratch_packet(13), FWD)
        assert marked.flags.resume and marked.psn == 13
        assert ingress.resyncs == 1 and ingress.chunks == []

    def test_restore_follows_changing_scratch_value(self):
        values = [b"A" * 8, b"A" * 8, b"B" * 8, b"B" * 8, b"A" * 8, b"A" * 8]
        packets = [_scratch_packet(10 + i, v) for i, v in enumerate(values)]
        ingress, egress, delivered = _run_taps(Channel.WRITABLE_SCRATCH, packets)
        assert delivered == packets
        assert egress.chunks == ingress.chunks
        assert ingress.resyncs == egress.resyncs == 2

    def test_covert_word_equal_to_zero_psn_is_skipped(self):
        message = (11).to_bytes(4, "big")
        ingress = ExfilTap(TapRole.INGRESS, Channel.PROTECTED_PSN, message=message)
        egress = ExfilTap(TapRole.EGRESS, Channel.PROTECTED_PSN)
        packets = [_scratch_packet(psn) for psn in (10, 11, 12)]
        delivered = [egress.process(ingress.process(p, FWD), FWD) for p in packets]
        assert delivered == packets
        assert ingress.chunks == egress.chunks == [message]

    def test_covert_word_equal_to_zero_psn_without_restore(self):
        tap = ExfilTap(TapRole.INGRESS, Channel.PROTECTED_PSN, message=(11).to_bytes(4, "big"), restore=False)
        tap.process(_scratch_packet(10), FWD)
        packet = _scratch_packet(11)
        assert tap.process(packet, FWD) is packet
        assert tap.chunks == []

    def test_first_packet_only_sets_reference(self):
        tap = ExfilTap(TapRole.INGRESS, Channel.PROTECTED_PSN, message=b"abcd")
        packet = _scratch_packet(10)
        assert tap.process(packet, FWD) is packet
        assert tap.chunks == []

    def test_capacity_enforced(self):
        packet = _scratch_packet(10, bytes(2))
        with pytest.raises(ChannelTooSmall):
            exfil_apply(packet, TapRole.INGRESS, Channel.WRITABLE_SCRATCH, b"abc")

    def test_egress_needs_reference(self):
        with pytest.raises(ValueError):
            exfil_apply(_scratch_packet(10), TapRole.EGRESS, Channel.PROTECTED_PSN)

    def test_packets_without_scratch_have_no_scratch_channel(self):
        packet = make_packet()
        assert channel_capacity(packet, Channel.WRITABLE_SCRATCH) == 0
        assert exfil_apply(packet, TapRole.INGRESS, Channel.WRITABLE_SCRATCH).packet is packet


class TestStopInjection:
    def test_forged_stop_continues_observed_sequence(self, key):
        flow = ObservedFlow(0xABCDEF)
        flow.update(make_packet(100), FWD, CLIENT_TUPLE)
        flow.update(make_packet(500, pse=100), REV, CLIENT_TUPLE.reversed())
        forged = inject_stop(flow, [FWD, REV], np.random.default_rng(0))
        assert [d for d, _, _ in forged] == [FWD, REV]

        (_, tuple5, fwd), (_, _, rev) = forged
        assert tuple5 == CLIENT_TUPLE
        assert fwd.flags.stop and fwd.cid == 0xABCDEF
        assert (fwd.psn, fwd.pse) == (101, 500)
        assert (rev.psn, rev.pse) == (501, 100)
        assert verify(key, fwd) is VerifyResult.FAIL

    def test_unobserved_direction_skipped(self):
        flow = ObservedFlow(1)
        flow.update(make_packet(100), FWD, CLIENT_TUPLE)
        forged = inject_stop(flow, [FWD, REV], np.random.default_rng(0))
        assert [d for d, _, _ in forged] == [FWD]


class TestCoercion:
    def test_compliant_packet_forwarded(self):
        policy = CoercionPolicy(PcfType.OPAQUE)
        assert coerce_gate(_scratch_packet(1), policy).action is Action.FORWARD

    def test_penalties(self):
        packet = make_packet()
        dropped = coerce_gate(packet, CoercionPolicy(PcfType.OPAQUE))
        assert dropped.dropped and dropped.queue == "coercion"
        delayed = coerce_gate(packet, CoercionPolicy(PcfType.MTU, Penalty.DELAY, delay=5000))
        assert (delayed.action, delayed.delay) == (Action.DELAYED, 5000)
        assert "penalty=drop" in CoercionPolicy(PcfType.MTU).describe()


class TestManipulationClasses:
    def test_order_by_attacker_preference(self):
        classes = [ManipulationClass(d, p) for d in (True, False) for p in (True, False)]
        assert [str(c) for c in sorted(classes)] == ["(!D,!P)", "(!D,P)", "(D,!P)", "(D,P)"]
        assert ManipulationClass(False, False).to_dict() == {"D": False, "P": False, "class": "(!D,!P)"}

    @pytest.mark.parametrize(
        "text, cls, expected",
        [
            ("(D,*)", ManipulationClass(True, False), True),
            ("(D,*)", ManipulationClass(False, True), False),
            ("(!D,!P)", ManipulationClass(False, False), True),
            ("(*,P)", ManipulationClass(False, True), True),
        ],
    )
    def test_pattern_matching(self, text, cls, expected):
        pattern = ClassPattern.parse(text)
        assert pattern.matches(cls) is expected
        assert str(pattern) == text

    @pytest.mark.parametrize("text", ["D,P,X", "(Q,P)", "(D,!X)"])
    def test_bad_patterns(self, text):
        with pytest.raises(ValueError):
            ClassPattern.parse(text)
