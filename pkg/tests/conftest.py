import numpy as np
import pytest

from mcpsim.harness.config import ScenarioConfig
from mcpsim.pathdev.device_base import Direction, FiveTuple, PacketContext
from mcpsim.protocol import endpoint as ep
from mcpsim.protocol.endpoint import CidMode, Role, VerifyPolicy
from mcpsim.protocol.integrity import ConnectionKey
from mcpsim.protocol.wire import Flags, Packet

CLIENT_TUPLE = FiveTuple("10.0.0.1", 49152, "203.0.113.10", 443)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def key(rng):
    return ConnectionKey.generate(rng)


@pytest.fixture
def fwd_ctx():
    return PacketContext(CLIENT_TUPLE, Direction.FORWARD, 0)


@pytest.fixture
def rev_ctx():
    return PacketContext(CLIENT_TUPLE.reversed(), Direction.REVERSE, 0)


def make_packet(psn=100, pse=0, cid=0xABCDEF, **flags) -> Packet:
    return Packet(Flags(**flags), cid, psn, pse)


def connected_pair(
    cid_mode: CidMode = CidMode.RANDOM_STATIC,
    seed: int = 0,
    verify_policy: VerifyPolicy = VerifyPolicy.HARD_FAIL,
):
    client = ep.open_connection(Role.CLIENT, cid_mode, [seed, 0], verify_policy)
    server = ep.open_connection(Role.SERVER, cid_mode, [seed, 1], verify_policy, key=client.key)
    ep.bind_peers(client, server)
    return client, server


def scenario(**overrides) -> ScenarioConfig:
    """Small one-flow scenario; nested blocks are replaced wholesale"""
    data = {
        "seed": 1,
        "duration": 3.0,
        "endpoints": {
            "client": {"traffic": {"packet_rate": 10.0, "packet_count": 10}},
            "server": {"traffic": {"respond_every": 1}},
        },
    }
    data.update(overrides)
    return ScenarioConfig.from_dict(data)
