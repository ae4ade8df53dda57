"""
Attacker actors living on one or more taps inside the simulation loop.

A tap sees every packet put on its link, in both directions, and may pass it
on (possibly modified or delayed), drop it, or inject packets of its own.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Optional

import numpy as np

from mcpsim.errors import ConfigError
from mcpsim.harness.config import AttackerConfig
from mcpsim.harness.trace import EventKind, TraceEvent, seconds_to_us
from mcpsim.observer.attacks import (
    Channel,
    CoercionPolicy,
    ExfilTap,
    ObservedFlow,
    Penalty,
    TapRole,
    coerce_gate,
    inject_stop,
)
from mcpsim.observer.records import ObservationRecord
from mcpsim.pathdev.device_base import Action, Direction, PacketContext
from mcpsim.protocol.wire import Packet, PcfType

if TYPE_CHECKING:
    from mcpsim.harness.simulator import Simulator

STREAM_ATTACK = 4
ATTACKER_NAME = "attacker"


@dataclass(frozen=True)
class TapVerdict:
    packet: Packet
    ctx: PacketContext
    delay: int = 0


class Attacker(ABC):
    PARAMS: dict[str, Any] = {}
    FIXED: dict[str, Any] = {}

    def __init__(self, config: AttackerConfig, seed: int):
        unknown = set(config.params) - set(self.PARAMS)
        if unknown:
            raise ConfigError(f"Unknown parameters for {config.type} attacker: {sorted(unknown)}")
        self.config = config
        self.params = {**self.PARAMS, **config.params, **self.FIXED}
        self.taps = tuple(config.taps)
        self.rng = np.random.default_rng([seed, STREAM_ATTACK])

    def start(self, sim: "Simulator") -> None:
        pass

    def finish(self, sim: "Simulator") -> None:
        pass

    @abstractmethod
    def on_tap(
        self, sim: "Simulator", link: int, packet: Packet, ctx: PacketContext
    ) -> Optional[TapVerdict]:
        """Handle a packet crossing one of the taps; None drops it"""

    def summary(self) -> dict[str, Any]:
        return {"type": self.config.type, "taps": list(self.taps)}

    def _pass(self, packet: Packet, ctx: PacketContext, delay: int = 0) -> TapVerdict:
        return TapVerdict(packet, ctx, delay)

    def _drop(self, sim: "Simulator", packet: Packet, reason: str) -> None:
        sim.emit(TraceEvent.for_packet(sim.now, ATTACKER_NAME, EventKind.DROPPED, packet, reason=reason))


class PassiveAttacker(Attacker):
    """Records what it sees and touches nothing"""

    def __init__(self, config: AttackerConfig, seed: int):
        super().__init__(config, seed)
        self.records: list[ObservationRecord] = []
        self.record_flows: list[int] = []

    def on_tap(self, sim, link, packet, ctx):
        self.records.append(ObservationRecord.observe(packet, ctx, f"link{link}", sim.now))
        self.record_flows.append(ctx.flow)
        return self._pass(packet, ctx)

    def finish(self, sim):
        if not set(self.taps) & sim.observe_taps:
            sim.observations.extend(self.records)
            sim.truth.observation_flows.extend(self.record_flows)

    def summary(self):
        return {**super().summary(), "records": len(self.records)}


class ExfilAttacker(Attacker):
    """Two-point header exfiltration; the ingress tap is the first one a packet meets"""

    PARAMS = {"channel": "scratch", "key": None, "message": None, "restore": True}

    def __init__(self, config: AttackerConfig, seed: int):
        super().__init__(config, seed)
        try:
            channel = Channel(self.params["channel"])
        except ValueError as e:
            raise ConfigError(f"exfil channel must be 'scratch' or 'psn': {e}") from e
        if len(self.taps) > 2:
            raise ConfigError("exfil uses an ingress and at most one egress tap")
        key = bytes.fromhex(self.params["key"]) if self.params["key"] else None
        message = self.params["message"]
        message = bytes.fromhex(message) if message else self.rng.bytes(64)
        restore = bool(self.params["restore"])
        self.ingress = ExfilTap(TapRole.INGRESS, channel, key, message, restore=restore)
        self.egress = ExfilTap(TapRole.EGRESS, channel, key, restore=restore)
        self.near, self.far = min(self.taps), max(self.taps)

    def _role(self, link: int, direction: Direction) -> TapRole:
        if len(self.taps) == 1:
            return TapRole.INGRESS
        first = self.near if direction is Direction.FORWARD else self.far
        return TapRole.INGRESS if link == first else TapRole.EGRESS

    def on_tap(self, sim, link, packet, ctx):
        if ctx.flow < 0:
            return self._pass(packet, ctx)
        tap = self.ingress if self._role(link, ctx.direction) is TapRole.INGRESS else self.egress
        return self._pass(tap.process(packet, ctx.direction), ctx)

    def summary(self):
        sent, received = self.ingress.chunks, self.egress.chunks
        recovered = sum(a == b for a, b in zip(sent, received))
        return {
            **super().summary(),
            "channel": self.ingress.channel.value,
            "packets": len(sent),
            "bits": self.ingress.bits,
            "bits_per_packet": self.ingress.bits / len(sent) if sent else 0.0,
            "extracted": len(received),
            "resyncs": self.ingress.resyncs,
            "fidelity": recovered / len(sent) if sent and received else None,
        }


class TamperAttacker(ExfilAttacker):
    """Protected-field exfiltration with nobody undoing the change"""

    PARAMS = {"key": None, "message": None}
    FIXED = {"channel": "psn", "restore": False}

    def __init__(self, config: AttackerConfig, seed: int):
        if len(config.taps) != 1:
            raise ConfigError("tamper uses exactly one tap")
        super().__init__(config, seed)


class InjectStopAttacker(Attacker):
    """Forges stop signals; taps[0] injects toward the server, taps[-1] toward the client"""

    PARAMS = {"at": 2.0, "sides": None}

    def __init__(self, config: AttackerConfig, seed: int):
        super().__init__(config, seed)
        sides = self.params["sides"]
        if sides is None:
            sides = ["fwd", "rev"] if len(self.taps) > 1 else ["fwd"]
        try:
            self.sides = [Direction(s) for s in sides]
        except ValueError as e:
            raise ConfigError(f"inject_stop sides must be 'fwd'/'rev': {e}") from e
        self.flows: dict[int, dict[int, ObservedFlow]] = {link: {} for link in self.taps}
        self.injected = 0

    def start(self, sim):
        sim.schedule(seconds_to_us(self.params["at"]), self._inject, sim)

    def on_tap(self, sim, link, packet, ctx):
        if ctx.flow >= 0:
            flows = self.flows[link]
            flow = flows.setdefault(packet.cid, ObservedFlow(packet.cid))
            flow.update(packet, ctx.direction, ctx.tuple5)
        return self._pass(packet, ctx)

    def _inject(self, sim: "Simulator") -> None:
        for direction in self.sides:
            link = self.taps[0] if direction is Direction.FORWARD else self.taps[-1]
            for cid in sorted(self.flows[link]):
                for d, tuple5, packet in inject_stop(self.flows[link][cid], [direction], self.rng):
                    sim.emit(
                        TraceEvent.for_packet(sim.now, ATTACKER_NAME, EventKind.INJECTED, packet, link=link)
                    )
                    sim.inject(link, packet, PacketContext(tuple5, d, -1))
                    self.injected += 1

    def summary(self):
        return {**super().summary(), "injected": self.injected, "sides": [s.value for s in self.sides]}


class CoercionAttacker(Attacker):
    """Scratch-space gate: penalise packets without the required scratch type"""

    PARAMS = {"required_pcf_type": "MTU", "penalty": "drop", "delay": 0.05, "advertise": True}

    def __init__(self, config: AttackerConfig, seed: int):
        super().__init__(config, seed)
        if len(self.taps) != 1:
            raise ConfigError("coercion uses exactly one tap")
        try:
            self.policy = CoercionPolicy(
                PcfType[self.params["required_pcf_type"]],
                Penalty(self.params["penalty"]),
                seconds_to_us(self.params["delay"]),
                bool(self.params["advertise"]),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"Bad coercion policy: {e}") from e
        self.advertised: set[tuple[int, Direction]] = set()
        self.penalised = 0

    def on_tap(self, sim, link, packet, ctx):
        if self.policy.advertise and ctx.flow >= 0:
            key = (packet.cid, ctx.direction)
            if key not in self.advertised:
                self.advertised.add(key)
                sim.policy_signal(link, ctx, packet, self.policy.describe())

        decision = coerce_gate(packet, self.policy)
        if decision.action is Action.FORWARD:
            return self._pass(packet, ctx)
        self.penalised += 1
        if decision.dropped:
            self._drop(sim, packet, "coercion")
            return None
        return self._pass(packet, ctx, decision.delay)

    def summary(self):
        return {
            **super().summary(),
            "policy": self.policy.describe(),
            "advertised": len(self.advertised),
            "penalised": self.penalised,
        }


class DropAttacker(Attacker):
    """Drops single packets at random, bounded by max_drop_rate"""

    PARAMS = {"drop_rate": 0.1, "max_drop_rate": 0.5}

    def __init__(self, config: AttackerConfig, seed: int):
        super().__init__(config, seed)
        rate, limit = self.params["drop_rate"], self.params["max_drop_rate"]
        if not 0 <= rate <= 1 or not 0 <= limit <= 1:
            raise ConfigError("drop rates must be within [0, 1]")
        if rate > limit:
            raise ConfigError(f"drop_rate {rate} exceeds max_drop_rate {limit}")
        self.dropped = 0

    def on_tap(self, sim, link, packet, ctx):
        if self.rng.random() < self.params["drop_rate"]:
            self.dropped += 1
            self._drop(sim, packet, "attacker")
            return None
        return self._pass(packet, ctx)

    def summary(self):
        return {**super().summary(), "dropped": self.dropped}


ATTACKERS: dict[str, type[Attacker]] = {
    "passive": PassiveAttacker,
    "exfil": ExfilAttacker,
    "tamper": TamperAttacker,
    "inject_stop": InjectStopAttacker,
    "coercion": CoercionAttacker,
    "drop": DropAttacker,
}


def create_attacker(config: AttackerConfig, seed: int) -> Attacker:
    if config.type not in ATTACKERS:
        raise ConfigError(f"Unknown attacker type {config.type!r}")
    return ATTACKERS[config.type](config, seed)
