"""
Deterministic discrete-event simulator.

Topology: position 0 holds the clients, positions 1..n the path devices and
position n+1 the server host. Link i joins positions i and i+1; taps sit on
links. Time is integer microseconds; events are ordered by (time, insertion
sequence) and nothing after `duration` is processed.

Every source of randomness has its own seeded stream, so an attacker drawing
random numbers never perturbs what the endpoints or the path do.
"""

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from loguru import logger

from mcpsim.harness.attackers import create_attacker
from mcpsim.harness.config import EndpointConfig, PauseConfig, ScenarioConfig
from mcpsim.harness.trace import (
    US_PER_S,
    EventKind,
    TraceEvent,
    TraceRecorder,
    parse_detail,
    seconds_to_us,
)
from mcpsim.harness.trace_io import events_to_jsonl
from mcpsim.observer.records import ObservationRecord
from mcpsim.pathdev.device_base import Direction, FiveTuple, PacketContext, PathDevice
from mcpsim.pathdev.device_factory import DeviceFactory
from mcpsim.pathdev.flow_state import FlowTracker
from mcpsim.pathdev.lola import LolaRouter
from mcpsim.pathdev.nat import NatDevice
from mcpsim.protocol import endpoint as ep
from mcpsim.protocol.endpoint import CidMode, Role
from mcpsim.protocol.wire import IntegrityMode, Packet, PcfType

STREAM_ENDPOINT = 1
STREAM_TRAFFIC = 2
STREAM_LINK = 3

SWEEP_INTERVAL = US_PER_S
SERVER_ADDR = ("203.0.113.10", 443)
MAX_PAYLOAD = 1200


def client_address(flow: int) -> tuple[str, int]:
    return f"10.0.{flow // 250}.{flow % 250 + 1}", 49152 + flow


@dataclass
class Session:
    """One endpoint's side of one flow"""

    flow: int
    role: Role
    conn: ep.ConnectionState
    cfg: EndpointConfig
    rng: np.random.Generator
    tuple5: Optional[FiveTuple] = None
    base_time: int = 0
    sent_data: int = 0
    received_data: int = 0
    last_send: Optional[int] = None
    last_recv: Optional[int] = None
    last_rotation: int = 0
    keepalive_gen: int = 0
    stopped: bool = False
    started: bool = False

    @property
    def name(self) -> str:
        return self.conn.name

    def pause_at(self, now: int) -> Optional[PauseConfig]:
        for pause in self.cfg.traffic.pauses:
            start, end = pause.window_us()
            if pause.applies_to(self.flow) and start <= now < end:
                return pause
        return None


@dataclass
class GroundTruth:
    flows: list[dict[str, Any]] = field(default_factory=list)
    rebinds: list[dict[str, Any]] = field(default_factory=list)
    rotations: list[dict[str, Any]] = field(default_factory=list)
    reassociations: list[dict[str, Any]] = field(default_factory=list)
    observation_flows: list[int] = field(default_factory=list)
    devices: dict[str, dict[str, Any]] = field(default_factory=dict)
    attacker: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "flows": self.flows,
            "rebinds": self.rebinds,
            "rotations": self.rotations,
            "reassociations": self.reassociations,
            "observation_flows": self.observation_flows,
            "devices": self.devices,
            "attacker": self.attacker,
        }


@dataclass
class SimulationResult:
    config: ScenarioConfig
    trace: list[TraceEvent]
    ground_truth: GroundTruth
    observations: list[ObservationRecord]

    def to_jsonl(self) -> str:
        return events_to_jsonl(self.trace)

    def truth_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "ground_truth": self.ground_truth.to_dict(),
            "observations": [r.to_dict() for r in self.observations],
        }

    def of_kind(self, *kinds: EventKind) -> list[TraceEvent]:
        return [e for e in self.trace if e.kind in kinds]


class Simulator:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.config = config
        self.seed = config.seed
        self.now = 0
        self.recorder = TraceRecorder()
        self.truth = GroundTruth()
        self.observations: list[ObservationRecord] = []
        self._queue: list = []
        self._seq = itertools.count()

        factory = DeviceFactory(config.seed)
        self.devices: list[PathDevice] = [
            factory.create_device(d.type, i, d.params) for i, d in enumerate(config.path.devices)
        ]
        self.link_delays = config.path.delays_us()
        self.jitter = seconds_to_us(config.path.jitter)
        self.link_rngs = [
            np.random.default_rng([self.seed, STREAM_LINK, i]) for i in range(len(self.link_delays))
        ]
        self.server_position = len(self.devices) + 1
        self.observe_taps = set(config.observe_taps)

        self.clients: list[Session] = []
        self.clients_by_addr: dict[tuple[str, int], Session] = {}
        self.servers: list[Session] = []
        self.servers_by_cid: dict[int, Session] = {}
        self._open_sessions()

        self.attacker = None
        if config.attacker is not None:
            self.attacker = create_attacker(config.attacker, self.seed)

    # ------------------------------------------------------------------ setup

    def _open_sessions(self) -> None:
        client_cfg = self.config.endpoints.client
        server_cfg = self.config.endpoints.server
        single = self.config.flows == 1
        lb_key = bytes.fromhex(server_cfg.lb_key) if server_cfg.lb_key else None
        for flow in range(self.config.flows):
            client = ep.open_connection(
                Role.CLIENT,
                client_cfg.cid_mode_enum,
                [self.seed, STREAM_ENDPOINT, flow, 0],
                client_cfg.verify_policy_enum,
                echo_psn=client_cfg.traffic.echo_psn,
                name="client" if single else f"client{flow}",
            )
            server = ep.open_connection(
                Role.SERVER,
                server_cfg.cid_mode_enum,
                [self.seed, STREAM_ENDPOINT, flow, 1],
                server_cfg.verify_policy_enum,
                key=client.key,
                lb_key=lb_key,
                backend_id=server_cfg.backend_id,
                echo_psn=server_cfg.traffic.echo_psn,
                name="server",
            )
            ep.bind_peers(client, server)
            addr = client_address(flow)
            c = Session(
                flow,
                Role.CLIENT,
                client,
                client_cfg,
                np.random.default_rng([self.seed, STREAM_TRAFFIC, flow, 0]),
                FiveTuple(*addr, *SERVER_ADDR),
            )
            s = Session(
                flow,
                Role.SERVER,
                server,
                server_cfg,
                np.random.default_rng([self.seed, STREAM_TRAFFIC, flow, 1]),
            )
            self.clients.append(c)
            self.clients_by_addr[addr] = c
            self.servers.append(s)
            self.servers_by_cid[server.current_cid] = s
            self.truth.flows.append(
                {"flow": flow, "client": f"{addr[0]}:{addr[1]}", "cid": f"{client.current_cid:016x}"}
            )

    # ------------------------------------------------------------- event loop

    def schedule(self, time: int, action: Callable, *args) -> None:
        heapq.heappush(self._queue, (time, next(self._seq), action, args))

    def emit(self, event: TraceEvent) -> None:
        self.recorder.emit(event)

    def run(self) -> SimulationResult:
        duration = self.config.duration_us
        for session in self.clients:
            self._schedule_traffic(session, 0)
        for t in range(SWEEP_INTERVAL, duration + 1, SWEEP_INTERVAL):
            self.schedule(t, self._sweep)
        if self.attacker is not None:
            self.attacker.start(self)

        while self._queue and self._queue[0][0] <= duration:
            time, _, action, args = heapq.heappop(self._queue)
            self.now = time
            action(*args)

        self._collect_truth()
        logger.info(
            "Scenario finished",
            scenario=self.config.name,
            seed=self.seed,
            events=len(self.recorder.events),
            flows=self.config.flows,
        )
        return SimulationResult(
            self.config, self.recorder.events, self.truth, self.observations
        )

    def _sweep(self) -> None:
        for device in self.devices:
            self.recorder.extend(device.sweep(self.now))

    def _collect_truth(self) -> None:
        for device in self.devices:
            summary: dict[str, Any] = {"type": device.type_name}
            if isinstance(device, NatDevice):
                summary["rebinds"] = len(device.rebinds)
                self.truth.rebinds.extend(
                    {**r.to_dict(), "device": device.device_id} for r in device.rebinds
                )
            elif isinstance(device, FlowTracker):
                summary["expired"] = device.expired_count
                summary["tracked"] = len(device.table)
            elif isinstance(device, LolaRouter):
                summary["drops"] = device.drops
                summary["mean_delay_us"] = {
                    q: float(np.mean(d)) if d else 0.0 for q, d in device.delays.items()
                }
            self.truth.devices[device.device_id] = summary
        if self.attacker is not None:
            self.attacker.finish(self)
            self.truth.attacker = self.attacker.summary()

    # ---------------------------------------------------------------- traffic

    def _schedule_traffic(self, session: Session, base: int) -> None:
        traffic = session.cfg.traffic
        session.base_time = base
        session.started = True
        if traffic.sends_data:
            offset = traffic.start_time
            if traffic.start_spread > 0:
                offset += float(session.rng.uniform(0, traffic.start_spread))
            self.schedule(base + seconds_to_us(offset), self._data_tick, session)
        if traffic.stop_time is not None:
            self.schedule(base + seconds_to_us(traffic.stop_time), self._stop_tick, session)

    def _interval(self, session: Session) -> int:
        traffic = session.cfg.traffic
        if traffic.arrival == "poisson":
            return max(1, seconds_to_us(float(session.rng.exponential(1 / traffic.packet_rate))))
        return seconds_to_us(1 / traffic.packet_rate)

    def _data_tick(self, session: Session) -> None:
        if session.stopped or session.conn.torn_down:
            return
        traffic = session.cfg.traffic
        pause = session.pause_at(self.now)
        if pause is not None and pause.mode == "idle":
            self.schedule(pause.window_us()[1], self._data_tick, session)
            return

        self._send(session, self._payload(session), data=True)
        if traffic.packet_count and session.sent_data >= traffic.packet_count:
            return
        if traffic.packet_rate > 0:
            self.schedule(self.now + self._interval(session), self._data_tick, session)

    def _stop_tick(self, session: Session) -> None:
        if session.stopped or session.conn.torn_down:
            return
        self._send(session, b"", stop=True)
        session.stopped = True

    def _payload(self, session: Session) -> bytes:
        model = session.cfg.traffic.payload
        if model.dist == "uniform":
            n = int(session.rng.integers(model.low, model.high + 1))
        elif model.dist == "normal":
            n = int(round(float(session.rng.normal(model.mean, model.std))))
        else:
            n = int(model.mean)
        return session.rng.bytes(min(max(n, 1), MAX_PAYLOAD))

    def _send_options(self, session: Session, data: bool, stop: bool) -> ep.SendOptions:
        traffic = session.cfg.traffic
        lola = traffic.lola.mode == "always" or (
            traffic.lola.mode == "random" and session.rng.random() < traffic.lola.probability
        )
        request = None
        scratch = traffic.scratch
        if data and scratch is not None and scratch.every and session.sent_data % scratch.every == 0:
            request = ep.ScratchRequest(
                PcfType[scratch.pcf_type],
                IntegrityMode[scratch.integrity_mode],
                scratch.length,
                scratch.value_bytes,
            )
        return ep.SendOptions(lola=lola and data, stop=stop, scratch_request=request)

    def _maybe_rotate(self, session: Session) -> None:
        conn = session.conn
        if session.role is not Role.CLIENT or conn.cid_mode is not CidMode.HOTP_ROTATING:
            return
        if session.last_send is None:
            return
        gap = seconds_to_us(session.cfg.cid_rotation_gap)
        quiet_since = max(
            session.last_recv if session.last_recv is not None else session.base_time,
            session.last_rotation,
        )
        if self.now - session.last_send >= gap or self.now - quiet_since >= gap:
            old = conn.current_cid
            ep.rotate_cid(conn)
            session.last_rotation = self.now
            self.truth.rotations.append(
                {
                    "time": self.now,
                    "flow": session.flow,
                    "counter": conn.hotp_counter,
                    "old_cid": f"{old:016x}",
                    "new_cid": f"{conn.current_cid:016x}",
                }
            )

    def _send(
        self,
        session: Session,
        payload: bytes,
        data: bool = False,
        stop: bool = False,
        keepalive: bool = False,
        detail: str = "",
    ) -> None:
        if session.conn.torn_down or session.tuple5 is None:
            return
        self._maybe_rotate(session)
        packet = ep.next_packet(session.conn, payload, self._send_options(session, data, stop))
        if data:
            session.sent_data += 1
        session.last_send = self.now
        kind = EventKind.KEEPALIVE if keepalive else EventKind.SENT
        self.emit(TraceEvent.for_packet(self.now, session.name, kind, packet, **parse_detail(detail)))
        self._touch(session)

        if session.role is Role.CLIENT:
            ctx = PacketContext(session.tuple5, Direction.FORWARD, session.flow)
            self._transmit(0, packet, ctx)
        else:
            ctx = PacketContext(session.tuple5, Direction.REVERSE, session.flow)
            self._transmit(self.server_position - 1, packet, ctx)

    def _touch(self, session: Session) -> None:
        interval = session.cfg.keepalive_us
        if interval is None or session.stopped:
            return
        session.keepalive_gen += 1
        self.schedule(self.now + interval, self._keepalive_tick, session, session.keepalive_gen)

    def _keepalive_tick(self, session: Session, generation: int) -> None:
        if generation != session.keepalive_gen or session.stopped:
            return
        self._send(session, b"", keepalive=True)

    # ------------------------------------------------------------------- path

    def _client_outage(self, ctx: PacketContext) -> bool:
        if ctx.flow < 0 or ctx.flow >= len(self.clients):
            return False
        pause = self.clients[ctx.flow].pause_at(self.now)
        return pause is not None and pause.mode == "outage"

    def _transmit(self, link: int, packet: Packet, ctx: PacketContext, from_attacker: bool = False) -> None:
        """Put a packet on `link` at the current time"""
        if link == 0 and self._client_outage(ctx):
            self.emit(TraceEvent.for_packet(self.now, "link0", EventKind.DROPPED, packet, reason="outage"))
            return

        extra = 0
        if self.attacker is not None and not from_attacker and link in self.attacker.taps:
            verdict = self.attacker.on_tap(self, link, packet, ctx)
            if verdict is None:
                return
            packet, ctx, extra = verdict.packet, verdict.ctx, verdict.delay

        if link in self.observe_taps:
            self.observations.append(ObservationRecord.observe(packet, ctx, f"link{link}", self.now))
            self.truth.observation_flows.append(ctx.flow)

        delay = self.link_delays[link] + extra
        if self.jitter and not from_attacker:
            delay += int(self.link_rngs[link].integers(0, self.jitter + 1))
        position = link + 1 if ctx.direction is Direction.FORWARD else link
        self.schedule(self.now + delay, self._arrive, position, packet, ctx)

    def inject(self, link: int, packet: Packet, ctx: PacketContext) -> None:
        self._transmit(link, packet, ctx, from_attacker=True)

    def _arrive(self, position: int, packet: Packet, ctx: PacketContext) -> None:
        if position == 0:
            self._client_receive(packet, ctx)
            return
        if position == self.server_position:
            self._server_receive(packet, ctx)
            return

        device = self.devices[position - 1]
        out = device.handle(packet, ctx, self.now)
        self.recorder.extend(out.events)
        if out.dropped:
            self.emit(
                TraceEvent.for_packet(self.now, device.device_id, EventKind.DROPPED, packet, **out.detail)
            )
            return
        detail = dict(out.detail)
        if out.delay:
            detail["delay_us"] = out.delay
        self.emit(
            TraceEvent.for_packet(self.now, device.device_id, EventKind.FORWARDED, out.packet, **detail)
        )
        link = position if out.ctx.direction is Direction.FORWARD else position - 1
        if out.delay:
            self.schedule(self.now + out.delay, self._transmit, link, out.packet, out.ctx)
        else:
            self._transmit(link, out.packet, out.ctx)

    def policy_signal(self, link: int, ctx: PacketContext, packet: Packet, detail: str) -> None:
        """Deliver a path-originated policy advertisement to the packet's sender"""
        if ctx.direction is Direction.FORWARD:
            session = self.clients[ctx.flow] if 0 <= ctx.flow < len(self.clients) else None
            delay = sum(self.link_delays[:link])
        else:
            session = self.servers_by_cid.get(packet.cid)
            delay = sum(self.link_delays[link + 1 :])
        if session is None:
            return
        self.schedule(self.now + delay, self._policy_arrive, session, packet, detail)

    def _policy_arrive(self, session: Session, packet: Packet, detail: str) -> None:
        self.emit(
            TraceEvent.for_packet(self.now, session.name, EventKind.POLICY_SIGNAL, packet, **parse_detail(detail))
        )

    # -------------------------------------------------------------- endpoints

    def _client_receive(self, packet: Packet, ctx: PacketContext) -> None:
        session = self.clients_by_addr.get((ctx.tuple5.dst_addr, ctx.tuple5.dst_port))
        if session is None:
            self.emit(TraceEvent.for_packet(self.now, "client", EventKind.DROPPED, packet, reason="no-host"))
            return
        if self._client_outage(PacketContext(ctx.tuple5, ctx.direction, session.flow)):
            self.emit(TraceEvent.for_packet(self.now, "link0", EventKind.DROPPED, packet, reason="outage"))
            return
        result = ep.accept_packet(session.conn, packet, self.now)
        self.recorder.extend(result.events)
        if result.decision is ep.AcceptDecision.DELIVERED:
            session.last_recv = self.now
            self._touch(session)

    def _server_session(self, packet: Packet) -> Optional[Session]:
        session = self.servers_by_cid.get(packet.cid)
        if session is not None:
            return session
        for candidate in self.servers:
            old = candidate.conn.current_cid
            if ep.try_reassociate(candidate.conn, packet.cid):
                self.servers_by_cid[packet.cid] = candidate
                self.truth.reassociations.append(
                    {
                        "time": self.now,
                        "flow": candidate.flow,
                        "counter": candidate.conn.hotp_counter,
                        "old_cid": f"{old:016x}",
                        "new_cid": f"{packet.cid:016x}",
                    }
                )
                return candidate
        return None

    def _server_receive(self, packet: Packet, ctx: PacketContext) -> None:
        session = self._server_session(packet)
        if session is None:
            self.emit(
                TraceEvent.for_packet(self.now, "server", EventKind.DROPPED, packet, reason="unknown-cid")
            )
            return
        result = ep.accept_packet(session.conn, packet, self.now)
        self.recorder.extend(result.events)
        if result.decision is not ep.AcceptDecision.DELIVERED:
            return

        session.last_recv = self.now
        session.tuple5 = ctx.tuple5.reversed()
        self._touch(session)
        if not session.started:
            self._schedule_traffic(session, self.now)

        if packet.flags.stop:
            return
        if not result.app_payload:
            if session.cfg.echo_keepalives:
                self._send(session, b"", detail="echo=keepalive")
            return
        session.received_data += 1
        every = session.cfg.traffic.respond_every
        if every and session.received_data % every == 0:
            self._send(session, self._payload(session), data=True)


def run_scenario(config: ScenarioConfig) -> SimulationResult:
    return Simulator(config).run()
