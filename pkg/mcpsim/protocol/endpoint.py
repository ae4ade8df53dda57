"""
Client and server endpoint behaviour.

An endpoint allocates PSNs (never 0), echoes the highest PSN it has received,
signals stop, allocates scratch space (WRITABLE mode is the endpoint's
permission for the path to write), verifies every received packet under its
policy, and closes the path-signal loop by echoing observed scratch values in
the end-to-end payload prefix of its next packet.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from mcpsim.errors import StoppedConnection
from mcpsim.harness.trace import EventKind, TraceEvent
from mcpsim.protocol import cid as cids
from mcpsim.protocol.integrity import ConnectionKey, VerifyResult, seal, verify
from mcpsim.protocol.wire import (
    MAX_SCRATCH_LEN,
    Flags,
    IntegrityMode,
    Packet,
    PcfType,
    ScratchSpace,
    psn_advance,
    psn_delta,
)

PSN_WINDOW = 1 << 16
MTU_SCRATCH_LEN = 2
MAX_FEEDBACK_ITEMS = 255


class Role(Enum):
    CLIENT = "client"
    SERVER = "server"

    @property
    def peer(self) -> "Role":
        return Role.SERVER if self is Role.CLIENT else Role.CLIENT


class CidMode(Enum):
    RANDOM_STATIC = "RANDOM_STATIC"
    SERVER_ROUTED = "SERVER_ROUTED"
    HOTP_ROTATING = "HOTP_ROTATING"


class VerifyPolicy(Enum):
    HARD_FAIL = "HARD_FAIL"
    DELIVER_WITH_FLAG = "DELIVER_WITH_FLAG"


class AcceptDecision(Enum):
    DELIVERED = "DELIVERED"
    DELIVERED_FLAGGED = "DELIVERED_FLAGGED"
    DROPPED = "DROPPED"


@dataclass(frozen=True)
class PathSignal:
    pcf_type: int
    observed_value: bytes
    direction: Role

    def __post_init__(self):
        if self.pcf_type == PcfType.MTU and len(self.observed_value) != MTU_SCRATCH_LEN:
            raise ValueError("MTU path signals carry exactly 2 bytes")


@dataclass(frozen=True)
class ScratchRequest:
    pcf_type: int
    integrity_mode: int
    length: int
    value: bytes

    def __post_init__(self):
        if not 0 <= self.length <= MAX_SCRATCH_LEN:
            raise ValueError(f"Scratch length must be 0-{MAX_SCRATCH_LEN}")
        if len(self.value) != self.length:
            raise ValueError("Initial scratch value must match the requested length")

    @classmethod
    def mtu(cls, mtu: int, writable: bool = True) -> "ScratchRequest":
        mode = IntegrityMode.WRITABLE if writable else IntegrityMode.READ_ONLY
        return cls(PcfType.MTU, mode, MTU_SCRATCH_LEN, mtu.to_bytes(MTU_SCRATCH_LEN, "big"))


@dataclass(frozen=True)
class SendOptions:
    lola: bool = False
    stop: bool = False
    scratch_request: Optional[ScratchRequest] = None


@dataclass
class ConnectionState:
    role: Role
    cid_mode: CidMode
    current_cid: int
    next_psn: int
    key: ConnectionKey
    verify_policy: VerifyPolicy = VerifyPolicy.HARD_FAIL
    highest_received_psn: Optional[int] = None
    stop_sent: bool = False
    stop_received: bool = False
    feedback_queue: list[PathSignal] = field(default_factory=list)
    learned_path_mtu: Optional[int] = None
    torn_down: bool = False
    echo_psn: bool = True
    cid_key: Optional[bytes] = None
    hotp_counter: int = 0
    lb_key: Optional[bytes] = None
    backend_id: int = 0
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = self.role.value


@dataclass
class AcceptResult:
    decision: AcceptDecision
    events: list[TraceEvent]
    app_payload: bytes = b""
    feedback: list[PathSignal] = field(default_factory=list)

    @property
    def delivered(self) -> bool:
        return self.decision is not AcceptDecision.DROPPED


def open_connection(
    role: Role,
    cid_mode: CidMode,
    seed,
    verify_policy: VerifyPolicy = VerifyPolicy.HARD_FAIL,
    *,
    key: Optional[ConnectionKey] = None,
    cid_key: Optional[bytes] = None,
    lb_key: Optional[bytes] = None,
    backend_id: int = 0,
    echo_psn: bool = True,
    name: str = "",
) -> ConnectionState:
    rng = np.random.default_rng(seed)
    next_psn = int(rng.integers(1, 1 << 32))
    if key is None:
        key = ConnectionKey.generate(rng)

    if cid_mode is CidMode.RANDOM_STATIC:
        current_cid = int(rng.integers(0, 1 << 64, dtype=np.uint64))
    elif cid_mode is CidMode.SERVER_ROUTED:
        lb_key = lb_key if lb_key is not None else rng.bytes(16)
        current_cid = cids.issue_routed_cid(lb_key, backend_id, rng)
    else:
        cid_key = cid_key if cid_key is not None else rng.bytes(32)
        current_cid = cids.hotp_cid(cid_key, 0)

    return ConnectionState(
        role=role,
        cid_mode=cid_mode,
        current_cid=current_cid,
        next_psn=next_psn,
        key=key,
        verify_policy=verify_policy,
        echo_psn=echo_psn,
        cid_key=cid_key,
        lb_key=lb_key,
        backend_id=backend_id,
        name=name,
    )


def bind_peers(client: ConnectionState, server: ConnectionState) -> None:
    """Make both ends agree on the cid: the server picks for SERVER_ROUTED, the client otherwise"""
    if client.cid_mode is not server.cid_mode:
        raise ValueError("Both endpoints of a connection use the same cid mode")
    if server.cid_mode is CidMode.SERVER_ROUTED:
        client.current_cid = server.current_cid
        client.lb_key, client.backend_id = server.lb_key, server.backend_id
    elif server.cid_mode is CidMode.HOTP_ROTATING:
        server.cid_key = client.cid_key
        server.hotp_counter = client.hotp_counter
        server.current_cid = client.current_cid
    else:
        server.current_cid = client.current_cid


def rotate_cid(conn: ConnectionState) -> int:
    """Advance the HOTP counter after an address change"""
    if conn.cid_mode is not CidMode.HOTP_ROTATING:
        raise ValueError(f"{conn.cid_mode.value} cids do not rotate")
    conn.hotp_counter += 1
    conn.current_cid = cids.hotp_cid(conn.cid_key, conn.hotp_counter)
    return conn.current_cid


def try_reassociate(conn: ConnectionState, observed_cid: int) -> bool:
    """Server side: re-link a rotated cid within the look-ahead window"""
    if conn.cid_mode is not CidMode.HOTP_ROTATING or conn.cid_key is None:
        return False
    counter = cids.reassociate_hotp(conn.cid_key, conn.hotp_counter, observed_cid)
    if counter is None:
        return False
    conn.hotp_counter = counter
    conn.current_cid = observed_cid
    return True


def encode_feedback(signals: list[PathSignal]) -> bytes:
    """Count byte then (pcf_type, length, value) per signal. Packets with neither
    feedback nor application data omit the prefix and go out empty.
    """
    parts = [bytes([len(signals)])]
    for signal in signals:
        parts.append(bytes([signal.pcf_type, len(signal.observed_value)]))
        parts.append(signal.observed_value)
    return b"".join(parts)


def decode_feedback(payload: bytes, direction: Role) -> tuple[list[PathSignal], bytes]:
    """Split the feedback prefix from the application payload.

    A prefix that does not parse is treated as absent.
    """
    if not payload:
        return [], b""
    count, offset = payload[0], 1
    signals = []
    try:
        for _ in range(count):
            pcf_type, length = payload[offset], payload[offset + 1]
            value = payload[offset + 2 : offset + 2 + length]
            if len(value) != length:
                return [], payload
            signals.append(PathSignal(pcf_type, value, direction))
            offset += 2 + length
    except (IndexError, ValueError):
        return [], payload
    return signals, payload[offset:]


def next_packet(
    conn: ConnectionState, payload: bytes = b"", options: Optional[SendOptions] = None
) -> Packet:
    if conn.torn_down:
        raise StoppedConnection(f"{conn.name}: connection {conn.current_cid:016x} is torn down")
    options = options or SendOptions()

    scratch = None
    request = options.scratch_request
    if request is not None:
        scratch = ScratchSpace(request.pcf_type, request.integrity_mode, request.value)

    queued = conn.feedback_queue[:MAX_FEEDBACK_ITEMS]
    del conn.feedback_queue[:MAX_FEEDBACK_ITEMS]

    pse = (conn.highest_received_psn or 0) if conn.echo_psn else 0
    packet = Packet(
        flags=Flags(lola=options.lola, stop=options.stop, extended=scratch is not None),
        cid=conn.current_cid,
        psn=conn.next_psn,
        pse=pse,
        scratch=scratch,
        payload=encode_feedback(queued) + payload if queued or payload else b"",
    )
    conn.next_psn = psn_advance(conn.next_psn)
    if options.stop:
        conn.stop_sent = True
    return seal(conn.key, packet)


def signal_stop(conn: ConnectionState) -> Packet:
    return next_packet(conn, b"", SendOptions(stop=True))


def teardown(conn: ConnectionState) -> None:
    conn.torn_down = True


def _update_highest(conn: ConnectionState, psn: int) -> None:
    high = conn.highest_received_psn
    if high is None or 0 < psn_delta(psn, high) <= PSN_WINDOW:
        conn.highest_received_psn = psn


def _echoable(scratch: ScratchSpace) -> bool:
    if scratch.pcf_type == PcfType.MTU:
        return scratch.length == MTU_SCRATCH_LEN
    return scratch.writable


def accept_packet(conn: ConnectionState, packet: Packet, now: int = 0) -> AcceptResult:
    if verify(conn.key, packet) is VerifyResult.FAIL:
        events = [TraceEvent.for_packet(now, conn.name, EventKind.VERIFY_FAIL, packet)]
        if conn.verify_policy is VerifyPolicy.HARD_FAIL:
            return AcceptResult(AcceptDecision.DROPPED, events)
        events.append(
            TraceEvent.for_packet(now, conn.name, EventKind.DELIVERED_FLAGGED, packet)
        )
        # unauthenticated feedback is handed up but never applied
        feedback, app_payload = decode_feedback(packet.payload, conn.role.peer)
        return AcceptResult(AcceptDecision.DELIVERED_FLAGGED, events, app_payload, feedback)

    _update_highest(conn, packet.psn)
    if packet.flags.stop:
        conn.stop_received = True

    feedback, app_payload = decode_feedback(packet.payload, conn.role.peer)
    for signal in feedback:
        if signal.pcf_type == PcfType.MTU:
            conn.learned_path_mtu = int.from_bytes(signal.observed_value, "big")

    scratch = packet.scratch
    if scratch is not None and _echoable(scratch):
        conn.feedback_queue.append(PathSignal(scratch.pcf_type, scratch.value, conn.role))
        del conn.feedback_queue[:-MAX_FEEDBACK_ITEMS]

    events = [TraceEvent.for_packet(now, conn.name, EventKind.DELIVERED, packet)]
    return AcceptResult(AcceptDecision.DELIVERED, events, app_payload, feedback)
