from conftest import CLIENT_TUPLE, make_packet
from mcpsim.harness.trace import EventKind, seconds_to_us
from mcpsim.pathdev.device_base import Direction, PacketContext
from mcpsim.pathdev.flow_state import (
    FlowState,
    FlowTable,
    FlowTimeouts,
    FlowTracker,
    device_observe,
    flow_key,
    flow_timeout,
)

FWD, REV = Direction.FORWARD, Direction.REVERSE


def _associate(table: FlowTable, now: int = 0) -> tuple:
    """fwd(psn 100) -> rev(psn 500, pse 100) -> fwd(psn 101, pse 500)"""
    first = device_observe(table, make_packet(100), FWD, now, CLIENT_TUPLE)
    table.observe(make_packet(500, pse=100), REV, now + 1, CLIENT_TUPLE.reversed())
    table.observe(make_packet(101, pse=500), FWD, now + 2, CLIENT_TUPLE)
    return first.flow_key


def test_association_sequence():
    table = FlowTable()
    first = table.observe(make_packet(100), FWD, 0, CLIENT_TUPLE)
    assert first.created and first.new is FlowState.UNIFLOW

    second = table.observe(make_packet(500, pse=100), REV, 1, CLIENT_TUPLE.reversed())
    assert (second.old, second.new) == (FlowState.UNIFLOW, FlowState.ASSOCIATING)

    third = table.observe(make_packet(101, pse=500), FWD, 2, CLIENT_TUPLE)
    assert (third.old, third.new) == (FlowState.ASSOCIATING, FlowState.ASSOCIATED)


def test_reverse_without_echo_does_not_associate():
    table = FlowTable()
    key = table.observe(make_packet(100), FWD, 0, CLIENT_TUPLE).flow_key
    assert table.observe(make_packet(500, pse=0), REV, 1, CLIENT_TUPLE) is None
    assert table.observe(make_packet(501, pse=90_000), REV, 2, CLIENT_TUPLE) is None
    assert table.get(key).state is FlowState.UNIFLOW


def test_stop_in_both_directions():
    table = FlowTable()
    key = _associate(table)
    stopwait = table.observe(make_packet(102, pse=500, stop=True), FWD, 3, CLIENT_TUPLE)
    assert stopwait.new is FlowState.STOPWAIT
    stopping = table.observe(make_packet(501, pse=102, stop=True), REV, 4, CLIENT_TUPLE)
    assert stopping.new is FlowState.STOPPING
    assert table.get(key).state is FlowState.STOPPING


def test_timeouts_follow_state():
    timeouts = FlowTimeouts.from_seconds(idle=30, associated=300, stopping=5)
    table = FlowTable(timeouts)
    key = _associate(table)
    assert table.expire(2 + seconds_to_us(299)) == []
    expired = table.expire(3 + seconds_to_us(300))
    assert [t.flow_key for t in expired] == [key]
    assert expired[0].expired and expired[0].old is FlowState.ASSOCIATED
    assert len(table) == 0


def test_uniflow_expires_after_idle():
    table = FlowTable(FlowTimeouts.from_seconds(idle=30))
    table.observe(make_packet(100), FWD, 0, CLIENT_TUPLE)
    assert table.expire(seconds_to_us(30)) == []
    assert len(table.expire(seconds_to_us(30) + 1)) == 1


def test_legacy_table_never_associates():
    table = FlowTable(mcp_aware=False)
    key = _associate(table)
    assert table.get(key).state is FlowState.UNIFLOW


def test_packet_after_expiry_creates_new_flow():
    table = FlowTable(FlowTimeouts.from_seconds(idle=1))
    table.observe(make_packet(100), FWD, 0, CLIENT_TUPLE)
    again = table.observe(make_packet(101), FWD, seconds_to_us(2), CLIENT_TUPLE)
    assert again.created


def test_flow_key_is_direction_independent():
    packet = make_packet()
    assert flow_key(packet, CLIENT_TUPLE) == flow_key(packet, CLIENT_TUPLE.reversed())
    assert flow_key(packet, None) == (packet.cid, None)


def test_tracker_emits_transitions(fwd_ctx, rev_ctx):
    tracker = FlowTracker("d1", idle=1.0)
    out = tracker.handle(make_packet(100), fwd_ctx, 0)
    assert out.detail == {"state": "UNIFLOW"}
    assert [e.kind for e in out.events] == [EventKind.STATE_TRANSITION]

    out = tracker.handle(make_packet(500, pse=100), rev_ctx, 10)
    assert out.detail == {"state": "ASSOCIATING"}

    assert len(tracker.sweep(seconds_to_us(5))) == 1
    assert tracker.expired_count == 1


def test_tracker_drops_unsolicited(rev_ctx):
    tracker = FlowTracker("fw", drop_unsolicited=True)
    out = tracker.handle(make_packet(100), rev_ctx, 0)
    assert out.dropped
    assert out.detail["reason"] == "unsolicited"
    assert len(tracker.table) == 0


def test_tracker_forwards_packets_without_ground_truth_flow():
    tracker = FlowTracker("d1")
    ctx = PacketContext(CLIENT_TUPLE, FWD, -1)
    assert not tracker.handle(make_packet(7), ctx, 0).dropped


def test_flow_timeout_per_state():
    timeouts = FlowTimeouts.from_seconds(idle=30, associated=300, stopping=5)
    uniflow = FlowTable(timeouts)
    key = uniflow.observe(make_packet(100), FWD, 0, CLIENT_TUPLE).flow_key
    assert flow_timeout(uniflow.get(key)) == seconds_to_us(30)

    associated = FlowTable(timeouts)
    entry = associated.get(_associate(associated))
    assert entry.state is FlowState.ASSOCIATED
    assert flow_timeout(entry) == seconds_to_us(300)
