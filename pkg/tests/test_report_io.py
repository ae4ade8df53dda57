import json

import pytest

from conftest import scenario
from mcpsim.harness.report import Report, render_section, report_metrics, trace_metrics
from mcpsim.harness.simulator import run_scenario
from mcpsim.harness.trace import EventKind, TraceEvent
from mcpsim.harness.trace_io import (
    FileType,
    LocalRepository,
    detect_file_type,
    events_to_jsonl,
    truth_path,
)


@pytest.fixture(scope="module")
def result():
    return run_scenario(scenario(path={"devices": [{"type": "flow_tracker", "params": {"idle": 0.5, "associated": 0.5}}]}))


class TestTraceIO:
    @pytest.mark.parametrize(
        "name, file_type",
        [("t.jsonl", FileType.TRACE), ("c.json", FileType.DICT), ("r.txt", FileType.TEXT)],
    )
    def test_detect_file_type(self, name, file_type):
        assert detect_file_type(name) is file_type

    def test_unknown_extension(self):
        with pytest.raises(ValueError):
            detect_file_type("trace.csv")

    def test_trace_file_reloads_identically(self, tmp_path, result):
        repo = LocalRepository()
        path = tmp_path / "nested" / "run.jsonl"
        repo.write(result.trace, path)
        assert repo.load(path) == result.trace
        assert path.read_text() == result.to_jsonl()

    def test_jsonl_is_canonical(self):
        line = events_to_jsonl([TraceEvent(1, "server", EventKind.DELIVERED, {"b": 1, "a": 2}, "x=1")])
        assert line == '{"actor":"server","detail":"x=1","kind":"DELIVERED","packet":{"a":2,"b":1},"time":1}\n'

    def test_truth_file_next_to_trace(self, tmp_path, result):
        path = truth_path(tmp_path / "out.jsonl")
        assert path.name == "out.truth.json"
        LocalRepository().write(result.truth_dict(), path)
        assert json.loads(path.read_text())["config"]["duration"] == 3.0


class TestReport:
    def test_trace_metrics(self, result):
        metrics = trace_metrics(result.trace)
        assert metrics["kinds"]["SENT"] == 20
        assert metrics["verify_fails"] == 0
        assert metrics["keepalives"] == 0
        assert metrics["state_expiries"] >= 1
        assert metrics["duration_s"] <= 3.0

    def test_queue_stats_from_trace(self):
        trace = [
            TraceEvent(0, "lola_router0", EventKind.FORWARDED, None, "queue=latency delay_us=1000"),
            TraceEvent(1, "lola_router0", EventKind.FORWARDED, None, "queue=loss delay_us=3000"),
            TraceEvent(2, "lola_router0", EventKind.DROPPED, None, "reason=queue-full queue=latency"),
        ]
        queues = trace_metrics(trace)["lola_queues"]
        assert queues["latency"] == {"packets": 1, "mean_delay_ms": 1.0, "p95_delay_ms": 1.0, "drops": 1}
        assert queues["loss"]["mean_delay_ms"] == 3.0

    def test_empty_trace(self):
        assert trace_metrics([])["events"] == 0

    def test_report_renders_text_and_json(self, result):
        report = report_metrics({"run": result.trace}, {"scores": [{"linker": "cid", "f1": 1.0}]})
        text = report.to_text()
        assert "== run ==" in text and "== scores ==" in text
        assert "linker" in text
        assert json.loads(report.to_json())["run"]["kinds"]["SENT"] == 20

    def test_render_section(self):
        assert "metric" in render_section({"a": 1, "b": 2})
        assert render_section("plain") == "plain"
        assert Report().to_text() == "\n"
