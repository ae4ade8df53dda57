"""
Quantitative experiments run by `mcpsim acceptance`.

Every experiment returns an ExperimentResult: a flat metrics section for the
report and a verdict against the pinned expectations.
"""

from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np
from loguru import logger

from mcpsim.decorators import log_function_call, timeit
from mcpsim.errors import WireError
from mcpsim.harness.catalog import catalog_mismatches, catalog_scenario, run_catalog
from mcpsim.harness.classify import EndpointView, classify_dp
from mcpsim.harness.config import AttackerConfig, ScenarioConfig
from mcpsim.harness.report import Report, report_metrics, trace_metrics
from mcpsim.harness.simulator import run_scenario
from mcpsim.harness.trace import EventKind
from mcpsim.harness.trace_io import events_to_jsonl
from mcpsim.observer.attacks import Channel, ExfilTap, ObservedFlow, TapRole, inject_stop
from mcpsim.observer.classes import ManipulationClass
from mcpsim.observer.classifier import SEPARABLE_PROFILES, classify_lola, flow_features, generate_flow_packets
from mcpsim.observer.linkability import link_by_cid, link_by_psn, linkage_scores
from mcpsim.pathdev.device_base import Direction, FiveTuple
from mcpsim.pathdev.flow_state import FlowState, FlowTable
from mcpsim.pathdev.load_balancer import DROP, lb_route
from mcpsim.protocol.cid import AUTH_BITS, ROUTING_BITS, issue_routed_cid
from mcpsim.protocol.integrity import ConnectionKey, TrustClass, VerifyResult, seal, trust_regions, verify
from mcpsim.protocol.wire import (
    MAX_SCRATCH_LEN,
    TAG_LEN,
    Flags,
    IntegrityMode,
    Packet,
    PcfType,
    ScratchSpace,
    decode,
    encode,
    psn_advance,
)

STREAM_FUZZ = 5
STREAM_LB = 6


@dataclass
class ExperimentResult:
    name: str
    metrics: dict[str, Any] = field(default_factory=dict)
    passed: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {**self.metrics, "passed": self.passed}


def random_packet(
    rng: np.random.Generator,
    writable: Optional[bool] = None,
    scratch_len: Optional[int] = None,
    max_payload: int = 64,
) -> Packet:
    """Random well-formed packet; `writable` None also draws packets without scratch"""
    scratch = None
    if writable is not None or rng.random() < 0.5:
        if writable is None:
            writable = bool(rng.random() < 0.5)
        length = int(rng.integers(0, MAX_SCRATCH_LEN + 1)) if scratch_len is None else scratch_len
        mode = IntegrityMode.WRITABLE if writable else IntegrityMode.READ_ONLY
        pcf_type = PcfType.OPAQUE if length != 2 else PcfType(int(rng.integers(1, 3)))
        scratch = ScratchSpace(pcf_type, mode, rng.bytes(length))
    return Packet(
        flags=Flags(
            lola=bool(rng.random() < 0.5),
            stop=bool(rng.random() < 0.1),
            extended=scratch is not None,
        ),
        cid=int(rng.integers(0, 1 << 64, dtype=np.uint64)),
        psn=int(rng.integers(1, 1 << 32)),
        pse=int(rng.integers(0, 1 << 32)),
        scratch=scratch,
        payload=rng.bytes(int(rng.integers(0, max_payload + 1))),
        tag=rng.bytes(TAG_LEN),
    )


# --------------------------------------------------------------- scenarios


def keepalive_scenario(mcp_aware: bool, seed: int = 0, interval: Optional[float] = None) -> ScenarioConfig:
    """600 s of idleness behind one stateful device, 5 s round trip.

    The keepalive interval defaults to what keeps the tracker's flow alive.
    """
    if mcp_aware:
        tracker = {"mcp_aware": True, "associated": 300.0}
        default = 250.0
    else:
        tracker = {"mcp_aware": False, "idle": 30.0}
        default = 25.0
    if interval is None:
        interval = default
    return ScenarioConfig.from_dict(
        {
            "seed": seed,
            "duration": 610.0,
            "name": f"keepalive-{'mcp' if mcp_aware else 'legacy'}",
            "endpoints": {
                "client": {
                    "keepalive_interval": interval,
                    "traffic": {"packet_rate": 0.1, "packet_count": 2},
                },
                "server": {
                    "echo_keepalives": True,
                    "traffic": {"start_time": 0.5, "packet_count": 1},
                },
            },
            "path": {
                "devices": [{"type": "flow_tracker", "params": tracker}],
                "link_delays": [1.25, 1.25],
            },
        }
    )


def linkability_scenario(
    cid_mode: str = "RANDOM_STATIC", seed: int = 0, flows: int = 100, paused: int = 20
) -> ScenarioConfig:
    """Flows behind a NAT; `paused` of them go quiet for 40 s, half idle and half in outage"""
    half = paused // 2
    return ScenarioConfig.from_dict(
        {
            "seed": seed,
            "duration": 90.0,
            "name": f"linkability-{cid_mode.lower()}",
            "flows": flows,
            "endpoints": {
                "client": {
                    "cid_mode": cid_mode,
                    "cid_rotation_gap": 20.0,
                    "traffic": {
                        "packet_rate": 2.0,
                        "start_spread": 0.5,
                        "payload": {"dist": "uniform", "low": 40, "high": 400},
                        "pauses": [
                            {"start": 20.0, "duration": 40.0, "mode": "idle", "flows": list(range(half))},
                            {
                                "start": 20.0,
                                "duration": 40.0,
                                "mode": "outage",
                                "flows": list(range(half, paused)),
                            },
                        ],
                    },
                },
                "server": {
                    "cid_mode": cid_mode,
                    "traffic": {"respond_every": 1, "payload": {"dist": "uniform", "low": 40, "high": 1200}},
                },
            },
            "path": {"devices": [{"type": "nat", "params": {"binding_timeout": 30.0}}]},
            "observe_taps": [1],
        }
    )


def lola_queue_scenario(seed: int = 0, rate: float = 600.0, duration: float = 10.0) -> ScenarioConfig:
    """Half the packets marked latency-sensitive, 60 % load on a 1 ms server"""
    return ScenarioConfig.from_dict(
        {
            "seed": seed,
            "duration": duration,
            "name": "lola-queues",
            "endpoints": {
                "client": {
                    "traffic": {
                        "packet_rate": rate,
                        "arrival": "poisson",
                        "lola": {"mode": "random", "probability": 0.5},
                        "payload": {"dist": "normal", "mean": 500, "std": 150},
                    }
                }
            },
            "path": {
                "devices": [{"type": "lola_router", "params": {"capacity": 8, "service_time": 0.001}}]
            },
        }
    )


# -------------------------------------------------------------- experiments


@log_function_call()
def keepalive_experiment(seed: int = 0) -> ExperimentResult:
    """Keepalives needed per tracker, plus a legacy tracker fed the MCP-aware interval"""
    counts, expiries = {}, {}
    runs = {
        "legacy": keepalive_scenario(False, seed),
        "mcp_aware": keepalive_scenario(True, seed),
        "legacy_at_mcp_interval": keepalive_scenario(False, seed, interval=250.0),
    }
    for name, config in runs.items():
        trace = run_scenario(config).trace
        counts[name] = sum(1 for e in trace if e.kind is EventKind.KEEPALIVE)
        expiries[name] = trace_metrics(trace)["state_expiries"]
    reduction = 1 - counts["mcp_aware"] / counts["legacy"] if counts["legacy"] else 0.0
    metrics = {
        "legacy": counts["legacy"],
        "mcp_aware": counts["mcp_aware"],
        "reduction": round(reduction, 4),
        "expiries": expiries,
        "control_keepalives": counts["legacy_at_mcp_interval"],
    }
    passed = (
        counts["legacy"] == 20
        and counts["mcp_aware"] == 2
        and expiries["legacy"] == 0
        and expiries["mcp_aware"] == 0
        and expiries["legacy_at_mcp_interval"] > 0
    )
    return ExperimentResult("keepalive", metrics, passed)


@log_function_call()
def linkability_experiment(seed: int = 0, flows: int = 100, delta: int = 64) -> ExperimentResult:
    static = run_scenario(linkability_scenario("RANDOM_STATIC", seed, flows))
    records, truth = static.observations, static.ground_truth.observation_flows
    cid_score = linkage_scores(records, truth, link_by_cid(records))
    psn = link_by_psn(records, delta)
    psn_score = linkage_scores(records, truth, psn.labels)

    rotating = run_scenario(linkability_scenario("HOTP_ROTATING", seed, flows))
    hotp_score = linkage_scores(
        rotating.observations,
        rotating.ground_truth.observation_flows,
        link_by_cid(rotating.observations),
    )
    rotated = {r["flow"] for r in rotating.ground_truth.rotations}
    reassociated = {r["flow"] for r in rotating.ground_truth.reassociations}
    reassociation_rate = len(rotated & reassociated) / len(rotated) if rotated else 1.0

    rows = [
        {"linker": "cid (RANDOM_STATIC)", **cid_score.to_dict()},
        {"linker": "cid (HOTP_ROTATING)", **hotp_score.to_dict()},
        {"linker": f"psn delta={delta}", **psn_score.to_dict()},
    ]
    metrics = {
        "rebinds": len(static.ground_truth.rebinds),
        "migrations_inferred": len(psn.migrations),
        "hotp_rotated_flows": len(rotated),
        "server_reassociation_rate": reassociation_rate,
        "table": rows,
    }
    passed = (
        cid_score.precision == 1.0
        and cid_score.recall == 1.0
        and hotp_score.recall <= 0.05
        and reassociation_rate == 1.0
        and psn_score.f1 < cid_score.f1
    )
    return ExperimentResult("linkability", metrics, passed)


@log_function_call()
def lola_classifier_experiment(n_seeds: int = 20, n_flows: int = 200, base_seed: int = 7) -> ExperimentResult:
    rows = []
    for i in range(n_seeds):
        features = flow_features(generate_flow_packets(n_flows, seed=base_seed + i))
        with_lola = classify_lola(features, use_lola=True, seed=i).accuracy
        without = classify_lola(features, use_lola=False, seed=i).accuracy
        rows.append(
            {
                "generator_seed": base_seed + i,
                "with_lola": with_lola,
                "without_lola": without,
                "margin": with_lola - without,
            }
        )
    separable = flow_features(generate_flow_packets(n_flows, seed=base_seed, profiles=SEPARABLE_PROFILES))
    margins = [r["margin"] for r in rows]
    metrics = {
        "min_margin": min(margins),
        "mean_margin": float(np.mean(margins)),
        "separable_accuracy": classify_lola(separable, use_lola=False).accuracy,
        "table": rows,
    }
    return ExperimentResult("lola_classifier", metrics, min(margins) >= 0)


@log_function_call()
def lola_queue_experiment(seed: int = 0) -> ExperimentResult:
    result = run_scenario(lola_queue_scenario(seed))
    queues = trace_metrics(result.trace)["lola_queues"]
    latency, loss = queues.get("latency", {}), queues.get("loss", {})
    passed = bool(latency and loss) and latency["mean_delay_ms"] <= loss["mean_delay_ms"]
    return ExperimentResult("lola_queues", {"queues": queues}, passed)


@log_function_call()
def load_balancer_experiment(
    seed: int = 0, n_random: int = 10_000, n_issued: int = 1_000, backends: int = 4
) -> ExperimentResult:
    rng = np.random.default_rng([seed, STREAM_LB])
    lb_key = rng.bytes(16)
    cids = rng.integers(0, 1 << 64, size=n_random, dtype=np.uint64)
    drops = sum(lb_route(int(c), lb_key, backends) is DROP for c in cids)

    p = 1 - 2.0**-AUTH_BITS
    expected = n_random * p
    sigma = float(np.sqrt(n_random * p * (1 - p)))

    misrouted = 0
    for _ in range(n_issued):
        backend = int(rng.integers(0, backends))
        cid = issue_routed_cid(lb_key, backend, rng)
        misrouted += lb_route(cid, lb_key, backends) != backend

    metrics = {
        "random_cids": n_random,
        "drop_rate": drops / n_random,
        "expected_drop_rate": p,
        "sigma_deviation": abs(drops - expected) / sigma,
        "issued_cids": n_issued,
        "misrouted": misrouted,
        "routing_bits": ROUTING_BITS,
        "authenticator_bits": AUTH_BITS,
    }
    return ExperimentResult(
        "load_balancer", metrics, abs(drops - expected) <= 3 * sigma and misrouted == 0
    )


def exfil_trial_packets(
    rng: np.random.Generator, conn_key: ConnectionKey, size: int, count: int = 8
) -> list[Packet]:
    """Sealed packets of one flow with upstream gaps, reordering and scratch rewrites"""
    first = random_packet(rng, writable=True, scratch_len=size)
    psn, value = first.psn, first.scratch.value
    packets = []
    for _ in range(count):
        psn = psn_advance(psn)
        if rng.random() < 0.1:
            psn = psn_advance(psn)
        if rng.random() < 0.1:
            value = rng.bytes(size)
        packet = replace(first, psn=psn, scratch=first.scratch.with_value(value), payload=rng.bytes(16))
        packets.append(seal(conn_key, packet))
    if rng.random() < 0.2:
        i = int(rng.integers(0, count - 1))
        packets[i], packets[i + 1] = packets[i + 1], packets[i]
    return packets


@log_function_call()
def exfil_fidelity_experiment(seed: int = 0, trials: int = 1_000) -> ExperimentResult:
    rng = np.random.default_rng([seed, STREAM_FUZZ, 1])
    conn_key = ConnectionKey.generate(rng)
    covert_key = rng.bytes(32)
    recovered = restored = verified = in_flight = resyncs = 0
    for trial in range(trials):
        size = 1 + trial % MAX_SCRATCH_LEN
        packets = exfil_trial_packets(rng, conn_key, size)
        message = rng.bytes(size * len(packets))
        ingress = ExfilTap(TapRole.INGRESS, Channel.WRITABLE_SCRATCH, covert_key, message)
        egress = ExfilTap(TapRole.EGRESS, Channel.WRITABLE_SCRATCH, covert_key)
        delivered = []
        for packet in packets:
            carried = ingress.process(packet, Direction.FORWARD)
            if not carried.flags.resume:
                in_flight += 1
                verified += verify(conn_key, carried) is VerifyResult.OK
            delivered.append(egress.process(carried, Direction.FORWARD))
        received = b"".join(egress.chunks)
        recovered += egress.chunks == ingress.chunks and received == message[: len(received)]
        restored += [encode(p) for p in delivered] == [encode(p) for p in packets]
        resyncs += ingress.resyncs

    base = catalog_scenario(seed)
    baseline = run_scenario(base)
    attack_config = base.with_attacker(
        AttackerConfig("exfil", (0, 1), {"channel": "scratch", "restore": True, "key": covert_key.hex()})
    )
    attack = run_scenario(attack_config)
    observed = classify_dp(baseline.trace, attack.trace, baseline_config=base, attack_config=attack_config)
    identical = events_to_jsonl(EndpointView.from_trace(baseline.trace).events) == events_to_jsonl(
        EndpointView.from_trace(attack.trace).events
    )
    summary = attack.ground_truth.attacker

    metrics = {
        "trials": trials,
        "bit_recovery": recovered / trials,
        "restored": restored / trials,
        "verify_ok_in_flight": verified / in_flight if in_flight else 1.0,
        "resyncs": resyncs,
        "scenario_bits": summary["bits"],
        "scenario_bits_per_packet": summary["bits_per_packet"],
        "scenario_fidelity": summary["fidelity"],
        "endpoint_view_identical": identical,
        "class": str(observed),
    }
    passed = (
        recovered == trials
        and restored == trials
        and verified == in_flight
        and identical
        and observed == ManipulationClass(False, False)
    )
    return ExperimentResult("exfil_fidelity", metrics, passed)


def _protected_bits(packet: Packet) -> np.ndarray:
    return np.concatenate(
        [
            np.arange(start * 8, end * 8)
            for start, end, trust in trust_regions(packet)
            if trust is not TrustClass.PATH_WRITABLE
        ]
    )


def _rejected(key: ConnectionKey, data: bytes) -> bool:
    try:
        return verify(key, decode(data)) is VerifyResult.FAIL
    except WireError:
        return True


@log_function_call()
def tamper_fuzz_experiment(seed: int = 0, trials: int = 10_000) -> ExperimentResult:
    rng = np.random.default_rng([seed, STREAM_FUZZ, 2])
    key = ConnectionKey.generate(rng)
    flips_detected = untouched_failures = rewrite_failures = 0
    for _ in range(trials):
        packet = seal(key, random_packet(rng))
        data = bytearray(encode(packet))
        untouched_failures += _rejected(key, bytes(data))
        bit = int(rng.choice(_protected_bits(packet)))
        data[bit // 8] ^= 0x80 >> (bit % 8)
        flips_detected += _rejected(key, bytes(data))

        writable = seal(key, random_packet(rng, writable=True, scratch_len=int(rng.integers(1, 64))))
        rewritten = writable.with_scratch_value(rng.bytes(writable.scratch.length))
        rewrite_failures += verify(key, rewritten) is VerifyResult.FAIL

    metrics = {
        "trials": trials,
        "flip_detection_rate": flips_detected / trials,
        "untouched_failures": untouched_failures,
        "writable_rewrite_failures": rewrite_failures,
    }
    passed = flips_detected == trials and untouched_failures == 0 and rewrite_failures == 0
    return ExperimentResult("tamper_fuzz", metrics, passed)


def _stop_interleaving(rng: np.random.Generator, sides: tuple[Direction, ...]) -> FlowState:
    """One randomised association, legitimate traffic and forged stops; returns the final state"""
    table = FlowTable()
    cid = int(rng.integers(0, 1 << 64, dtype=np.uint64))
    tuple5 = FiveTuple("10.0.0.1", int(rng.integers(1024, 65536)), "203.0.113.10", 443)
    tuples = {Direction.FORWARD: tuple5, Direction.REVERSE: tuple5.reversed()}
    last_psn = {d: int(rng.integers(1, 1 << 32)) for d in (Direction.FORWARD, Direction.REVERSE)}
    observed = ObservedFlow(cid)
    now = 0

    def send(direction: Direction, echo: bool = True) -> None:
        nonlocal now
        last_psn[direction] = psn_advance(last_psn[direction])
        pse = last_psn[direction.opposite] if echo else 0
        packet = Packet(Flags(), cid, last_psn[direction], pse)
        table.observe(packet, direction, now, tuples[direction])
        observed.update(packet, direction, tuples[direction])
        now += int(rng.integers(1, 50_000))

    send(Direction.FORWARD, echo=False)
    send(Direction.REVERSE)
    send(Direction.FORWARD)

    schedule = [d for d in (Direction.FORWARD, Direction.REVERSE) for _ in range(int(rng.integers(0, 8)))]
    forged_at = {d: int(rng.integers(0, len(schedule) + 1)) for d in sides}
    order = rng.permutation(len(schedule))
    for step in range(len(schedule) + 1):
        for direction in sides:
            if forged_at[direction] == step:
                for d, t5, packet in inject_stop(observed, [direction], rng):
                    table.observe(packet, d, now, t5)
        if step < len(schedule):
            send(schedule[order[step]])

    entry = table.get((cid, tuple5.canonical()))
    return entry.state if entry is not None else FlowState.UNIFLOW


@log_function_call()
def stop_injection_experiment(seed: int = 0, trials: int = 1_000) -> ExperimentResult:
    rng = np.random.default_rng([seed, STREAM_FUZZ, 3])
    one_sided_stopping = two_sided_stopping = 0
    for _ in range(trials):
        side = Direction.FORWARD if rng.random() < 0.5 else Direction.REVERSE
        one_sided_stopping += _stop_interleaving(rng, (side,)) is FlowState.STOPPING
        two_sided_stopping += (
            _stop_interleaving(rng, (Direction.FORWARD, Direction.REVERSE)) is FlowState.STOPPING
        )
    metrics = {
        "trials": trials,
        "one_sided_reached_stopping": one_sided_stopping,
        "two_sided_reached_stopping": two_sided_stopping,
    }
    return ExperimentResult(
        "stop_injection", metrics, one_sided_stopping == 0 and two_sided_stopping == trials
    )


@log_function_call()
def determinism_experiment(seed: int = 0, packets: int = 10_000) -> ExperimentResult:
    config = catalog_scenario(seed).with_attacker(AttackerConfig("inject_stop", (0, 1), {"at": 2.5}))
    first, second = run_scenario(config).to_jsonl(), run_scenario(config).to_jsonl()

    rng = np.random.default_rng([seed, STREAM_FUZZ, 4])
    mismatches = 0
    for _ in range(packets):
        packet = random_packet(rng)
        mismatches += decode(encode(packet)) != packet

    metrics = {
        "trace_bytes": len(first),
        "identical_traces": first == second,
        "round_trip_packets": packets,
        "round_trip_mismatches": mismatches,
    }
    return ExperimentResult("determinism", metrics, first == second and mismatches == 0)


@timeit
def run_acceptance(seed: int = 0) -> tuple[Report, list[ExperimentResult]]:
    catalog = run_catalog(seed)
    results = [
        tamper_fuzz_experiment(seed),
        stop_injection_experiment(seed),
        keepalive_experiment(seed),
        linkability_experiment(seed),
        lola_classifier_experiment(),
        lola_queue_experiment(seed),
        load_balancer_experiment(seed),
        exfil_fidelity_experiment(seed),
        determinism_experiment(seed),
    ]
    catalog_rows = [r.to_dict() for r in catalog]
    results.insert(0, ExperimentResult("catalog", {"table": catalog_rows}, not catalog_mismatches(catalog)))
    for r in results:
        logger.info("Experiment finished", experiment=r.name, passed=r.passed)

    summary = [{"experiment": r.name, "passed": r.passed} for r in results]
    report = report_metrics({}, {"summary": summary, **{r.name: r.to_dict() for r in results}})
    return report, results
