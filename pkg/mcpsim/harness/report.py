"""
Aggregate metrics over one or more traces and render them as text or JSON.

Trace-derived sections are computed here; experiment results (linkage scores,
classifier accuracies, exfiltration statistics, class tables) are handed in
as extra sections and rendered the same way.
"""

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np
import pandas as pd

from mcpsim.harness.trace import EventKind, TraceEvent, parse_detail


def _queue_stats(trace: list[TraceEvent]) -> dict[str, dict[str, float]]:
    delays: dict[str, list[int]] = {}
    drops: Counter = Counter()
    for e in trace:
        detail = parse_detail(e.detail)
        queue = detail.get("queue")
        if queue is None:
            continue
        if e.kind is EventKind.FORWARDED:
            delays.setdefault(queue, []).append(int(detail.get("delay_us", 0)))
        elif e.kind is EventKind.DROPPED:
            drops[queue] += 1
    stats = {}
    for queue in sorted(set(delays) | set(drops)):
        d = np.array(delays.get(queue, []), dtype=float)
        stats[queue] = {
            "packets": int(d.size),
            "mean_delay_ms": float(d.mean() / 1000) if d.size else 0.0,
            "p95_delay_ms": float(np.percentile(d, 95) / 1000) if d.size else 0.0,
            "drops": drops[queue],
        }
    return stats


def trace_metrics(trace: Iterable[TraceEvent]) -> dict[str, Any]:
    trace = list(trace)
    kinds = Counter(e.kind.value for e in trace)
    keepalives = Counter(e.actor for e in trace if e.kind is EventKind.KEEPALIVE)
    transitions = [parse_detail(e.detail) for e in trace if e.kind is EventKind.STATE_TRANSITION]
    drop_reasons = Counter(
        parse_detail(e.detail).get("reason", "unknown") for e in trace if e.kind is EventKind.DROPPED
    )
    return {
        "events": len(trace),
        "duration_s": trace[-1].time / 1e6 if trace else 0.0,
        "kinds": dict(sorted(kinds.items())),
        "keepalives": sum(keepalives.values()),
        "keepalives_by_actor": dict(sorted(keepalives.items())),
        "state_expiries": sum(1 for t in transitions if t.get("transition", "").endswith("expired")),
        "verify_fails": kinds.get(EventKind.VERIFY_FAIL.value, 0),
        "drop_reasons": dict(sorted(drop_reasons.items())),
        "lola_queues": _queue_stats(trace),
    }


@dataclass
class Report:
    sections: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.sections, indent=2, sort_keys=True, default=str) + "\n"

    def to_text(self) -> str:
        blocks = []
        for name, value in self.sections.items():
            blocks.append(f"== {name} ==\n{render_section(value)}")
        return "\n\n".join(blocks) + "\n"


def render_section(value: Any) -> str:
    """Lists of rows become tables, flat mappings become key/value tables"""
    if isinstance(value, list) and value and all(isinstance(v, Mapping) for v in value):
        return pd.DataFrame(value).to_string(index=False)
    if isinstance(value, Mapping):
        if all(not isinstance(v, (Mapping, list)) for v in value.values()):
            frame = pd.DataFrame({"metric": list(value), "value": list(value.values())})
            return frame.to_string(index=False)
        return "\n".join(
            f"-- {k} --\n{render_section(v)}" if isinstance(v, (Mapping, list)) else f"{k}: {v}"
            for k, v in value.items()
        )
    return str(value)


def report_metrics(
    traces: Mapping[str, Iterable[TraceEvent]],
    extra: Mapping[str, Any] | None = None,
) -> Report:
    report = Report()
    for name, trace in traces.items():
        report.sections[name] = trace_metrics(trace)
    for name, value in (extra or {}).items():
        report.sections[name] = value
    return report
