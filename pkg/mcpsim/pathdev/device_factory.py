from typing import Any

from loguru import logger

from mcpsim.errors import ConfigError
from mcpsim.pathdev.device_base import PathDevice
from mcpsim.pathdev.flow_state import FlowTracker
from mcpsim.pathdev.load_balancer import LoadBalancer
from mcpsim.pathdev.lola import LolaRouter
from mcpsim.pathdev.mtu_writer import MtuWriter
from mcpsim.pathdev.nat import NatDevice

DEVICE_TYPES: dict[str, type[PathDevice]] = {
    cls.type_name: cls for cls in (FlowTracker, NatDevice, LoadBalancer, LolaRouter, MtuWriter)
}


class DeviceFactory:
    """Builds path devices from their per-type parameter blocks"""

    def __init__(self, seed: int):
        self.seed = seed

    def _validate_params(self, device_type: str, params: dict[str, Any]) -> None:
        if device_type not in DEVICE_TYPES:
            raise ConfigError(
                f"Unknown device type {device_type!r}; expected one of {sorted(DEVICE_TYPES)}"
            )
        allowed = DEVICE_TYPES[device_type].PARAMS
        unknown = set(params) - set(allowed)
        if unknown:
            raise ConfigError(f"Unknown parameters for {device_type}: {sorted(unknown)}")
        for name, value in params.items():
            default = allowed[name]
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(f"{device_type}.{name} must be a boolean")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{device_type}.{name} must be a number")
                if value < 0:
                    raise ConfigError(f"{device_type}.{name} must be non-negative")

    def create_device(self, device_type: str, index: int, params: dict[str, Any]) -> PathDevice:
        self._validate_params(device_type, params)
        device_id = f"{device_type}{index}"
        cls = DEVICE_TYPES[device_type]
        try:
            if cls is NatDevice:
                device = cls(device_id, seed=[self.seed, 7, index], **params)
            else:
                device = cls(device_id, **params)
        except ValueError as e:
            raise ConfigError(f"{device_id}: {e}") from e

        logger.debug("Created path device", device=device_id, params=params)
        return device
