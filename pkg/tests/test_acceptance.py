"""End-to-end experiments with pinned expectations. Run with `pytest -m slow`."""

import pytest

from mcpsim.harness import experiments
from mcpsim.harness.simulator import run_scenario
from mcpsim.harness.trace import EventKind

pytestmark = pytest.mark.slow


def test_tamper_fuzz_detects_every_protected_flip():
    result = experiments.tamper_fuzz_experiment(seed=0)
    assert result.metrics["flip_detection_rate"] == 1.0
    assert result.metrics["writable_rewrite_failures"] == 0
    assert result.passed


def test_stop_injection_needs_both_directions():
    result = experiments.stop_injection_experiment(seed=0)
    assert result.metrics["one_sided_reached_stopping"] == 0
    assert result.metrics["two_sided_reached_stopping"] == result.metrics["trials"]


def test_keepalive_reduction():
    result = experiments.keepalive_experiment(seed=0)
    assert (result.metrics["legacy"], result.metrics["mcp_aware"]) == (20, 2)
    assert result.metrics["reduction"] == 0.9
    assert result.metrics["expiries"] == {"legacy": 0, "mcp_aware": 0, "legacy_at_mcp_interval": 3}
    assert result.metrics["control_keepalives"] == 2
    assert result.passed


def test_keepalive_times_follow_tracker_timeouts():
    trace = run_scenario(experiments.keepalive_scenario(mcp_aware=True)).trace
    times = [e.time // 1_000_000 for e in trace if e.kind is EventKind.KEEPALIVE]
    assert times == [260, 515]


def test_linkability():
    result = experiments.linkability_experiment(seed=0)
    metrics = result.metrics
    assert metrics["rebinds"] == 20
    assert metrics["server_reassociation_rate"] == 1.0
    rows = {row["linker"]: row for row in metrics["table"]}
    assert rows["cid (RANDOM_STATIC)"]["precision"] == rows["cid (RANDOM_STATIC)"]["recall"] == 1.0
    assert rows["cid (HOTP_ROTATING)"]["recall"] <= 0.05
    assert rows["psn delta=64"]["f1"] < 1.0
    assert result.passed


def test_lola_marking_never_hurts_classifier():
    result = experiments.lola_classifier_experiment()
    assert result.metrics["min_margin"] >= 0
    assert result.metrics["separable_accuracy"] >= 0.95


def test_latency_queue_is_faster():
    result = experiments.lola_queue_experiment(seed=0)
    queues = result.metrics["queues"]
    assert queues["latency"]["mean_delay_ms"] <= queues["loss"]["mean_delay_ms"]


def test_load_balancer_drop_rate():
    result = experiments.load_balancer_experiment(seed=0)
    assert result.metrics["misrouted"] == 0
    assert result.metrics["sigma_deviation"] <= 3
    assert result.metrics["routing_bits"] + result.metrics["authenticator_bits"] == 64


def test_exfiltration_is_invisible_with_restore():
    result = experiments.exfil_fidelity_experiment(seed=0)
    assert result.metrics["bit_recovery"] == 1.0
    assert result.metrics["restored"] == 1.0
    assert result.metrics["verify_ok_in_flight"] == 1.0
    assert result.metrics["resyncs"] > 0
    assert result.metrics["endpoint_view_identical"]
    assert result.metrics["class"] == "(!D,!P)"


def test_determinism():
    result = experiments.determinism_experiment(seed=0)
    assert result.metrics["identical_traces"]
    assert result.metrics["round_trip_mismatches"] == 0


def test_full_acceptance_report():
    report, results = experiments.run_acceptance(seed=0)
    assert [r.name for r in results][0] == "catalog"
    assert all(r.passed for r in results), [r.name for r in results if not r.passed]
    assert "== summary ==" in report.to_text()
