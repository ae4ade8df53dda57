"""
Scenario configuration.

Scenario files are JSON objects mirroring these dataclasses field for field.
Unknown keys, bad enum names, negative times and out-of-range taps raise
ConfigError. Times in files are seconds; `*_us` helpers convert.
"""

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

from mcpsim.errors import ConfigError
from mcpsim.harness.trace import seconds_to_us
from mcpsim.protocol.endpoint import CidMode, VerifyPolicy
from mcpsim.protocol.wire import IntegrityMode, PcfType

DEFAULT_LINK_DELAY = 0.01
ATTACKER_TYPES = ("passive", "exfil", "tamper", "inject_stop", "coercion", "drop")


def _check_keys(cls, data: dict[str, Any], where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"Unknown keys in {where}: {sorted(unknown)}")


def _build(cls, data: dict[str, Any], where: str):
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def _non_negative(value: float, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if value < 0:
        raise ConfigError(f"{where} must be non-negative, got {value}")
    return value


def _choice(value: str, choices, where: str) -> str:
    if value not in choices:
        raise ConfigError(f"{where} must be one of {list(choices)}, got {value!r}")
    return value


def _to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_dict(v) for k, v in obj.items()}
    return obj


@dataclass(frozen=True)
class PayloadLengthModel:
    dist: str = "constant"  # constant | uniform | normal
    mean: float = 100
    std: float = 0
    low: int = 0
    high: int = 0

    @classmethod
    def from_dict(cls, data: dict, where: str = "payload") -> "PayloadLengthModel":
        _check_keys(cls, data, where)
        model = _build(cls, data, where)
        _choice(model.dist, ("constant", "uniform", "normal"), f"{where}.dist")
        for name in ("mean", "std", "low", "high"):
            _non_negative(getattr(model, name), f"{where}.{name}")
        if model.dist == "uniform" and model.high < model.low:
            raise ConfigError(f"{where}: high < low")
        return model


@dataclass(frozen=True)
class LolaRule:
    mode: str = "never"  # never | always | random
    probability: float = 0.5

    @classmethod
    def from_dict(cls, data: dict, where: str = "lola") -> "LolaRule":
        _check_keys(cls, data, where)
        rule = _build(cls, data, where)
        _choice(rule.mode, ("never", "always", "random"), f"{where}.mode")
        if not 0 <= rule.probability <= 1:
            raise ConfigError(f"{where}.probability must be within [0, 1]")
        return rule


@dataclass(frozen=True)
class ScratchRequestConfig:
    pcf_type: str = "MTU"
    integrity_mode: str = "WRITABLE"
    length: int = 2
    value: str = "05dc"  # hex; MTU 1500
    every: int = 1  # every nth packet carries scratch; 0 disables

    @classmethod
    def from_dict(cls, data: dict, where: str = "scratch") -> "ScratchRequestConfig":
        _check_keys(cls, data, where)
        request = _build(cls, data, where)
        _choice(request.pcf_type, PcfType.__members__, f"{where}.pcf_type")
        _choice(request.integrity_mode, IntegrityMode.__members__, f"{where}.integrity_mode")
        try:
            value = bytes.fromhex(request.value)
        except ValueError as e:
            raise ConfigError(f"{where}.value is not hex: {e}") from e
        if len(value) != request.length or not 0 <= request.length <= 63:
            raise ConfigError(f"{where}: value must be exactly length (0-63) bytes")
        _non_negative(request.every, f"{where}.every")
        return request

    @property
    def value_bytes(self) -> bytes:
        return bytes.fromhex(self.value)


@dataclass(frozen=True)
class PauseConfig:
    start: float
    duration: float
    mode: str = "idle"  # idle | outage
    flows: tuple[int, ...] = ()  # empty: every flow

    @classmethod
    def from_dict(cls, data: dict, where: str = "pause") -> "PauseConfig":
        _check_keys(cls, data, where)
        data = dict(data)
        data["flows"] = tuple(data.get("flows", ()))
        pause = _build(cls, data, where)
        _non_negative(pause.start, f"{where}.start")
        _non_negative(pause.duration, f"{where}.duration")
        _choice(pause.mode, ("idle", "outage"), f"{where}.mode")
        return pause

    def applies_to(self, flow: int) -> bool:
        return not self.flows or flow in self.flows

    def window_us(self) -> tuple[int, int]:
        start = seconds_to_us(self.start)
        return start, start + seconds_to_us(self.duration)


@dataclass(frozen=True)
class TrafficModel:
    packet_rate: float = 0.0  # packets per second; 0 sends packet_count packets at start
    packet_count: int = 0  # 0: unlimited
    start_time: float = 0.0  # server: relative to its first received packet
    start_spread: float = 0.0
    arrival: str = "periodic"  # periodic | poisson
    payload: PayloadLengthModel = field(default_factory=PayloadLengthModel)
    lola: LolaRule = field(default_factory=LolaRule)
    scratch: Optional[ScratchRequestConfig] = None
    stop_time: Optional[float] = None
    pauses: tuple[PauseConfig, ...] = ()
    respond_every: int = 0  # reply after every nth received data packet
    echo_psn: bool = True

    @classmethod
    def from_dict(cls, data: dict, where: str = "traffic") -> "TrafficModel":
        _check_keys(cls, data, where)
        data = dict(data)
        if "payload" in data:
            data["payload"] = PayloadLengthModel.from_dict(data["payload"], f"{where}.payload")
        if "lola" in data:
            data["lola"] = LolaRule.from_dict(data["lola"], f"{where}.lola")
        if data.get("scratch") is not None:
            data["scratch"] = ScratchRequestConfig.from_dict(data["scratch"], f"{where}.scratch")
        data["pauses"] = tuple(
            PauseConfig.from_dict(p, f"{where}.pauses[{i}]")
            for i, p in enumerate(data.get("pauses", ()))
        )
        model = _build(cls, data, where)
        for name in ("packet_rate", "packet_count", "start_time", "start_spread", "respond_every"):
            _non_negative(getattr(model, name), f"{where}.{name}")
        if model.stop_time is not None:
            _non_negative(model.stop_time, f"{where}.stop_time")
        _choice(model.arrival, ("periodic", "poisson"), f"{where}.arrival")
        if model.packet_rate == 0 and model.packet_count > 1:
            raise ConfigError(f"{where}: packet_count > 1 needs a packet_rate")
        return model

    @property
    def sends_data(self) -> bool:
        return self.packet_rate > 0 or self.packet_count > 0


@dataclass(frozen=True)
class EndpointConfig:
    cid_mode: str = "RANDOM_STATIC"
    verify_policy: str = "HARD_FAIL"
    keepalive_interval: Optional[float] = None
    echo_keepalives: bool = False
    cid_rotation_gap: float = 20.0
    lb_key: Optional[str] = None  # hex; server-routed cids
    backend_id: int = 0
    traffic: TrafficModel = field(default_factory=TrafficModel)

    @classmethod
    def from_dict(cls, data: dict, where: str = "endpoint") -> "EndpointConfig":
        _check_keys(cls, data, where)
        data = dict(data)
        if "traffic" in data:
            data["traffic"] = TrafficModel.from_dict(data["traffic"], f"{where}.traffic")
        endpoint = _build(cls, data, where)
        _choice(endpoint.cid_mode, CidMode.__members__, f"{where}.cid_mode")
        _choice(endpoint.verify_policy, VerifyPolicy.__members__, f"{where}.verify_policy")
        if endpoint.keepalive_interval is not None:
            if _non_negative(endpoint.keepalive_interval, f"{where}.keepalive_interval") == 0:
                raise ConfigError(f"{where}.keepalive_interval must be positive")
        _non_negative(endpoint.cid_rotation_gap, f"{where}.cid_rotation_gap")
        if endpoint.lb_key is not None:
            try:
                bytes.fromhex(endpoint.lb_key)
            except ValueError as e:
                raise ConfigError(f"{where}.lb_key is not hex: {e}") from e
        return endpoint

    @property
    def cid_mode_enum(self) -> CidMode:
        return CidMode[self.cid_mode]

    @property
    def verify_policy_enum(self) -> VerifyPolicy:
        return VerifyPolicy[self.verify_policy]

    @property
    def keepalive_us(self) -> Optional[int]:
        return None if self.keepalive_interval is None else seconds_to_us(self.keepalive_interval)


@dataclass(frozen=True)
class EndpointsConfig:
    client: EndpointConfig = field(default_factory=EndpointConfig)
    server: EndpointConfig = field(default_factory=EndpointConfig)

    @classmethod
    def from_dict(cls, data: dict, where: str = "endpoints") -> "EndpointsConfig":
        _check_keys(cls, data, where)
        return cls(
            client=EndpointConfig.from_dict(data.get("client", {}), f"{where}.client"),
            server=EndpointConfig.from_dict(data.get("server", {}), f"{where}.server"),
        )


@dataclass(frozen=True)
class DeviceConfig:
    type: str
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, where: str = "device") -> "DeviceConfig":
        _check_keys(cls, data, where)
        if "type" not in data:
            raise ConfigError(f"{where} needs a type")
        return cls(data["type"], dict(data.get("params", {})))


@dataclass(frozen=True)
class PathConfig:
    devices: tuple[DeviceConfig, ...] = ()
    link_delays: tuple[float, ...] = ()  # one per link; empty: DEFAULT_LINK_DELAY
    jitter: float = 0.0

    @classmethod
    def from_dict(cls, data: dict, where: str = "path") -> "PathConfig":
        _check_keys(cls, data, where)
        devices = tuple(
            DeviceConfig.from_dict(d, f"{where}.devices[{i}]")
            for i, d in enumerate(data.get("devices", ()))
        )
        delays = tuple(data.get("link_delays", ()))
        path = cls(devices, delays, data.get("jitter", 0.0))
        if delays and len(delays) != path.link_count:
            raise ConfigError(
                f"{where}.link_delays needs {path.link_count} entries, got {len(delays)}"
            )
        for i, d in enumerate(delays):
            _non_negative(d, f"{where}.link_delays[{i}]")
        _non_negative(path.jitter, f"{where}.jitter")
        return path

    @property
    def link_count(self) -> int:
        return len(self.devices) + 1

    def delays_us(self) -> list[int]:
        delays = self.link_delays or (DEFAULT_LINK_DELAY,) * self.link_count
        return [seconds_to_us(d) for d in delays]


@dataclass(frozen=True)
class AttackerConfig:
    type: str
    taps: tuple[int, ...] = ()
    params: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, where: str = "attacker") -> "AttackerConfig":
        _check_keys(cls, data, where)
        if "type" not in data:
            raise ConfigError(f"{where} needs a type")
        attacker = cls(data["type"], tuple(data.get("taps", ())), dict(data.get("params", {})))
        _choice(attacker.type, ATTACKER_TYPES, f"{where}.type")
        if not attacker.taps:
            raise ConfigError(f"{where} needs at least one tap")
        return attacker


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    duration: float = 10.0
    name: str = "scenario"
    flows: int = 1
    endpoints: EndpointsConfig = field(default_factory=EndpointsConfig)
    path: PathConfig = field(default_factory=PathConfig)
    observe_taps: tuple[int, ...] = ()
    attacker: Optional[AttackerConfig] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        if not 0 <= self.seed < 1 << 64:
            raise ConfigError("seed must fit in 64 bits")
        _non_negative(self.duration, "duration")
        if not isinstance(self.flows, int) or self.flows < 1:
            raise ConfigError(f"flows must be a positive integer, got {self.flows!r}")
        if self.endpoints.client.cid_mode != self.endpoints.server.cid_mode:
            raise ConfigError("client and server must use the same cid_mode")
        links = self.path.link_count
        taps = list(self.observe_taps) + list(self.attacker.taps if self.attacker else ())
        for tap in taps:
            if not isinstance(tap, int) or not 0 <= tap < links:
                raise ConfigError(f"Tap {tap!r} out of range: the path has links 0..{links - 1}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        _check_keys(cls, data, "scenario")
        data = dict(data)
        if "endpoints" in data:
            data["endpoints"] = EndpointsConfig.from_dict(data["endpoints"])
        if "path" in data:
            data["path"] = PathConfig.from_dict(data["path"])
        if data.get("attacker") is not None:
            data["attacker"] = AttackerConfig.from_dict(data["attacker"])
        data["observe_taps"] = tuple(data.get("observe_taps", ()))
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict[str, Any]:
        return _to_dict(self)

    def with_attacker(self, attacker: Optional[AttackerConfig]) -> "ScenarioConfig":
        return replace(self, attacker=attacker)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)

    def without_attacker_dict(self) -> dict[str, Any]:
        data = self.to_dict()
        data.pop("attacker")
        return data

    @property
    def duration_us(self) -> int:
        return seconds_to_us(self.duration)


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return ScenarioConfig.from_dict(data)
