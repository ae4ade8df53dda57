import pytest

from conftest import scenario
from mcpsim.harness.catalog import catalog_scenario
from mcpsim.harness.config import AttackerConfig, ScenarioConfig
from mcpsim.harness.experiments import keepalive_scenario
from mcpsim.harness.report import trace_metrics
from mcpsim.harness.simulator import Simulator, client_address, run_scenario
from mcpsim.harness.trace import EventKind, TraceEvent, TraceRecorder, parse_detail
from mcpsim.observer.fingerprint import ProfileMatcher, fingerprint

NAT_PATH = {"devices": [{"type": "nat", "params": {"binding_timeout": 60}}]}


def test_same_seed_same_trace():
    config = scenario(path={"devices": [{"type": "flow_tracker"}]}, observe_taps=[0])
    assert run_scenario(config).to_jsonl() == run_scenario(config).to_jsonl()


def test_seed_changes_trace():
    config = scenario()
    assert run_scenario(config).to_jsonl() != run_scenario(config.with_seed(2)).to_jsonl()


def test_request_response_over_empty_path():
    result = run_scenario(scenario())
    assert len(result.of_kind(EventKind.SENT)) == 20
    assert len(result.of_kind(EventKind.DELIVERED)) == 20
    assert result.of_kind(EventKind.VERIFY_FAIL, EventKind.DROPPED) == []
    times = [e.time for e in result.trace]
    assert times == sorted(times)
    assert max(times) <= result.config.duration_us


def test_nothing_processed_after_duration():
    result = run_scenario(scenario(duration=0.5))
    assert len([e for e in result.of_kind(EventKind.SENT) if e.actor == "client"]) == 6


def test_nat_rebinds_once_after_idle_gap():
    config = scenario(
        duration=100.0,
        path=NAT_PATH,
        endpoints={
            "client": {
                "traffic": {
                    "packet_rate": 1.0,
                    "pauses": [{"start": 10.0, "duration": 70.0, "mode": "idle"}],
                }
            },
            "server": {"traffic": {"respond_every": 1}},
        },
    )
    result = run_scenario(config)
    assert len(result.ground_truth.rebinds) == 1
    assert result.ground_truth.devices["nat0"]["rebinds"] == 1
    assert result.of_kind(EventKind.VERIFY_FAIL) == []


def test_hotp_cid_rotates_and_server_reassociates():
    config = scenario(
        duration=60.0,
        endpoints={
            "client": {
                "cid_mode": "HOTP_ROTATING",
                "traffic": {
                    "packet_rate": 1.0,
                    "pauses": [{"start": 5.0, "duration": 30.0, "mode": "idle"}],
                },
            },
            "server": {"cid_mode": "HOTP_ROTATING", "traffic": {"respond_every": 1}},
        },
    )
    truth = run_scenario(config).ground_truth
    assert len(truth.rotations) == 1
    assert len(truth.reassociations) == 1
    assert truth.rotations[0]["new_cid"] == truth.reassociations[0]["new_cid"]


def test_observation_taps_record_ground_truth_flows():
    result = run_scenario(scenario(flows=3, observe_taps=[0]))
    assert len(result.observations) == len(result.ground_truth.observation_flows)
    assert set(result.ground_truth.observation_flows) == {0, 1, 2}
    assert {r.tap for r in result.observations} == {"link0"}


def test_keepalives_follow_idle_timer():
    config = scenario(
        duration=10.0,
        endpoints={
            "client": {"keepalive_interval": 2.0, "traffic": {"packet_rate": 1.0, "packet_count": 1}},
            "server": {},
        },
    )
    keepalives = run_scenario(config).of_kind(EventKind.KEEPALIVE)
    assert [e.time for e in keepalives] == [2_000_000, 4_000_000, 6_000_000, 8_000_000, 10_000_000]


def test_tamper_attack_is_seen_by_server():
    config = scenario(attacker={"type": "tamper", "taps": [0]})
    result = run_scenario(config)
    fails = [e for e in result.of_kind(EventKind.VERIFY_FAIL) if e.actor == "server"]
    assert fails


def test_truth_dict_is_serializable():
    truth = run_scenario(scenario(observe_taps=[0])).truth_dict()
    assert truth["config"]["seed"] == 1
    assert len(truth["observations"]) == len(truth["ground_truth"]["observation_flows"])


def test_client_addresses_unique():
    assert len({client_address(f) for f in range(1000)}) == 1000


def test_recorder_rejects_time_travel():
    recorder = TraceRecorder()
    recorder.emit(TraceEvent(10, "a", EventKind.SENT))
    with pytest.raises(ValueError):
        recorder.emit(TraceEvent(9, "a", EventKind.SENT))


def test_simulator_validates_config():
    sim = Simulator(scenario(path=NAT_PATH))
    assert sim.server_position == 2
    assert len(sim.link_delays) == 2


LB_KEY = "00112233445566778899aabbccddeeff"
COMPLIANT_CHAIN = {
    "devices": [
        {"type": "nat"},
        {"type": "flow_tracker"},
        {"type": "load_balancer", "params": {"lb_key": LB_KEY, "backend_count": 4}},
        {"type": "lola_router"},
        {"type": "mtu_writer", "params": {"mtu": 1280}},
    ]
}


def test_compliant_device_chain_is_transparent():
    config = scenario(
        path=COMPLIANT_CHAIN,
        endpoints={
            "client": {
                "cid_mode": "SERVER_ROUTED",
                "traffic": {
                    "packet_rate": 10.0,
                    "packet_count": 20,
                    "lola": {"mode": "always"},
                    "scratch": {},
                },
            },
            "server": {
                "cid_mode": "SERVER_ROUTED",
                "lb_key": LB_KEY,
                "backend_id": 3,
                "traffic": {"respond_every": 1},
            },
        },
    )
    sim = Simulator(config)
    result = sim.run()
    assert result.of_kind(EventKind.VERIFY_FAIL, EventKind.DROPPED) == []
    assert sim.clients[0].conn.learned_path_mtu == 1280
    balancer = sim.devices[2]
    assert balancer.routed == {3: 20}
    delivered = [e for e in result.of_kind(EventKind.DELIVERED) if e.actor == "server"]
    assert len(delivered) == 20
    assert {e.packet["scratch"]["value"] for e in delivered} == {"0500"}


def _stop_injection(sides: list[str]) -> list[tuple[int, str]]:
    data = catalog_scenario(seed=0).to_dict()
    data["duration"] = 10.0
    config = ScenarioConfig.from_dict(data).with_attacker(
        AttackerConfig("inject_stop", (0, 1), {"at": 2.5, "sides": sides})
    )
    trace = run_scenario(config).trace
    return [
        (e.time, parse_detail(e.detail)["transition"])
        for e in trace
        if e.kind is EventKind.STATE_TRANSITION and e.actor == "flow_tracker0"
    ]


def test_two_sided_stop_injection_reaches_stopping_and_expires():
    transitions = _stop_injection(["fwd", "rev"])
    names = [t for _, t in transitions]
    assert names[-3:] == ["ASSOCIATED->STOPWAIT", "STOPWAIT->STOPPING", "STOPPING->expired"]
    stopping_at, expired_at = transitions[-2][0], transitions[-1][0]
    assert 2_500_000 <= stopping_at < 3_000_000
    assert expired_at == 8_000_000


def test_one_sided_stop_injection_stays_in_stopwait():
    names = [t for _, t in _stop_injection(["fwd"])]
    assert names[-1] == "ASSOCIATED->STOPWAIT"
    assert "STOPWAIT->STOPPING" not in names


def _echo_fingerprint(echo: bool, seed: int):
    config = scenario(
        seed=seed,
        observe_taps=[0],
        endpoints={
            "client": {"traffic": {"packet_rate": 10.0, "packet_count": 10, "echo_psn": echo}},
            "server": {"traffic": {"respond_every": 1}},
        },
    )
    return fingerprint(run_scenario(config).observations)


def test_fingerprint_separates_psn_echo_from_simulated_flows():
    profiles = {
        name: [_echo_fingerprint(echo, seed) for seed in (1, 2, 3)]
        for name, echo in (("echo", True), ("no-echo", False))
    }
    assert all(fp.echo_rate > 0.5 for fp in profiles["echo"])
    assert all(fp.echo_rate == 0.0 for fp in profiles["no-echo"])
    matcher = ProfileMatcher().fit(profiles)
    held_out = [_echo_fingerprint(True, 7), _echo_fingerprint(False, 7)]
    assert matcher.match(held_out) == ["echo", "no-echo"]


def test_legacy_tracker_expires_flow_at_mcp_keepalive_interval():
    legacy = run_scenario(keepalive_scenario(False, interval=250.0)).trace
    assert sum(1 for e in legacy if e.kind is EventKind.KEEPALIVE) == 2
    assert trace_metrics(legacy)["state_expiries"] > 0
    aware = run_scenario(keepalive_scenario(True)).trace
    assert trace_metrics(aware)["state_expiries"] == 0
