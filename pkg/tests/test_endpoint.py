import pytest

from conftest import connected_pair
from mcpsim.errors import StoppedConnection
from mcpsim.harness.trace import EventKind
from mcpsim.pathdev.load_balancer import lb_route
from mcpsim.pathdev.mtu_writer import middlebox_write_scratch
from mcpsim.protocol import endpoint as ep
from mcpsim.protocol.endpoint import AcceptDecision, CidMode, PathSignal, Role, SendOptions, VerifyPolicy
from mcpsim.protocol.wire import PcfType


def test_psn_never_zero_and_advances():
    client, _ = connected_pair()
    client.next_psn = 0xFFFFFFFF
    first = ep.next_packet(client, b"a")
    second = ep.next_packet(client, b"b")
    assert first.psn == 0xFFFFFFFF
    assert second.psn == 1


def test_echo_of_highest_psn():
    client, server = connected_pair()
    assert ep.next_packet(client, b"x").pse == 0
    for _ in range(3):
        ep.accept_packet(server, ep.next_packet(client, b"x"))
    reply = ep.next_packet(server, b"y")
    assert reply.pse == server.highest_received_psn


def test_echo_can_be_suppressed():
    client, server = connected_pair()
    server.echo_psn = False
    ep.accept_packet(server, ep.next_packet(client, b"x"))
    assert ep.next_packet(server, b"y").pse == 0


def test_delivery_and_events():
    client, server = connected_pair()
    result = ep.accept_packet(server, ep.next_packet(client, b"hello"), now=5)
    assert result.decision is AcceptDecision.DELIVERED
    assert result.app_payload == b"hello"
    assert [e.kind for e in result.events] == [EventKind.DELIVERED]
    assert result.events[0].time == 5
    assert result.events[0].actor == "server"


def test_tampered_packet_hard_fail():
    client, server = connected_pair()
    packet = ep.next_packet(client, b"hello")
    forged = packet.with_tag(bytes(16))
    result = ep.accept_packet(server, forged)
    assert result.decision is AcceptDecision.DROPPED
    assert [e.kind for e in result.events] == [EventKind.VERIFY_FAIL]
    assert server.highest_received_psn is None


def test_tampered_packet_deliver_with_flag():
    client, server = connected_pair(verify_policy=VerifyPolicy.DELIVER_WITH_FLAG)
    forged = ep.next_packet(client, b"hello").with_tag(bytes(16))
    result = ep.accept_packet(server, forged)
    assert result.decision is AcceptDecision.DELIVERED_FLAGGED
    assert [e.kind for e in result.events] == [EventKind.VERIFY_FAIL, EventKind.DELIVERED_FLAGGED]


def test_flagged_delivery_strips_feedback_without_applying_it():
    client, server = connected_pair(verify_policy=VerifyPolicy.DELIVER_WITH_FLAG)
    client.feedback_queue.append(PathSignal(PcfType.MTU, b"\x05\x00", Role.CLIENT))
    forged = ep.next_packet(client, b"hello").with_tag(bytes(16))
    result = ep.accept_packet(server, forged)
    assert result.app_payload == b"hello"
    assert result.feedback == [PathSignal(PcfType.MTU, b"\x05\x00", Role.CLIENT)]
    assert server.learned_path_mtu is None


def test_keepalive_and_stop_payloads_are_empty():
    client, server = connected_pair()
    keepalive = ep.next_packet(client, b"")
    assert keepalive.payload == b""
    assert ep.signal_stop(client).payload == b""
    result = ep.accept_packet(server, keepalive)
    assert result.decision is AcceptDecision.DELIVERED and result.app_payload == b""


def test_queued_feedback_rides_on_empty_packets():
    client, _ = connected_pair()
    client.feedback_queue.append(PathSignal(PcfType.MTU, b"\x05\x00", Role.CLIENT))
    assert ep.next_packet(client, b"").payload == b"\x01\x01\x02\x05\x00"


def test_stop_and_teardown():
    client, server = connected_pair()
    stop = ep.signal_stop(client)
    assert stop.flags.stop and client.stop_sent
    ep.accept_packet(server, stop)
    assert server.stop_received
    ep.teardown(client)
    with pytest.raises(StoppedConnection):
        ep.next_packet(client, b"late")


def test_mtu_feedback_loop():
    client, server = connected_pair()
    request = ep.ScratchRequest.mtu(1500)
    packet = ep.next_packet(client, b"data", SendOptions(scratch_request=request))
    written = middlebox_write_scratch(packet, 1280)
    assert int.from_bytes(written.scratch.value, "big") == 1280

    result = ep.accept_packet(server, written)
    assert result.decision is AcceptDecision.DELIVERED
    assert server.feedback_queue == [PathSignal(PcfType.MTU, b"\x05\x00", Role.SERVER)]

    reply = ep.next_packet(server, b"ack")
    assert server.feedback_queue == []
    back = ep.accept_packet(client, reply)
    assert back.app_payload == b"ack"
    assert client.learned_path_mtu == 1280


def test_read_only_mtu_not_written():
    client, _ = connected_pair()
    packet = ep.next_packet(client, b"", SendOptions(scratch_request=ep.ScratchRequest.mtu(1500, writable=False)))
    assert middlebox_write_scratch(packet, 1280) is packet
    forced = middlebox_write_scratch(packet, 1280, force=True)
    assert forced.scratch.value == b"\x05\x00"


def test_feedback_codec_tolerates_garbage():
    signals = [PathSignal(PcfType.OPAQUE, b"abc", Role.CLIENT)]
    assert ep.decode_feedback(ep.encode_feedback(signals) + b"app", Role.CLIENT) == (signals, b"app")
    assert ep.decode_feedback(b"\x05\x02", Role.CLIENT) == ([], b"\x05\x02")
    assert ep.decode_feedback(b"", Role.CLIENT) == ([], b"")


def test_hotp_rotation_and_reassociation():
    client, server = connected_pair(CidMode.HOTP_ROTATING)
    assert client.current_cid == server.current_cid
    old = client.current_cid
    new = ep.rotate_cid(client)
    assert new != old
    assert ep.try_reassociate(server, new)
    assert server.current_cid == new
    assert server.hotp_counter == client.hotp_counter


def test_static_cids_do_not_rotate():
    client, server = connected_pair()
    with pytest.raises(ValueError):
        ep.rotate_cid(client)
    assert not ep.try_reassociate(server, 12345)


def test_server_routed_cid_chosen_by_server():
    client, server = connected_pair(CidMode.SERVER_ROUTED)
    assert client.current_cid == server.current_cid
    assert lb_route(client.current_cid, server.lb_key, 1) == 0


def test_bind_requires_same_mode():
    client = ep.open_connection(Role.CLIENT, CidMode.RANDOM_STATIC, [0, 0])
    server = ep.open_connection(Role.SERVER, CidMode.HOTP_ROTATING, [0, 1], key=client.key)
    with pytest.raises(ValueError):
        ep.bind_peers(client, server)
