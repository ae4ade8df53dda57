"""
Built-in attack matrix: every attack runs against the same one-flow baseline
and is classified from the two traces.
"""

from dataclasses import dataclass
from typing import Any, Iterable, Optional

import pandas as pd
from loguru import logger

from mcpsim.decorators import timeit
from mcpsim.harness.classify import classify_dp
from mcpsim.harness.config import AttackerConfig, ScenarioConfig
from mcpsim.harness.simulator import run_scenario
from mcpsim.observer.classes import ClassPattern, ManipulationClass

CATALOG_SCRATCH = {"pcf_type": "OPAQUE", "integrity_mode": "WRITABLE", "length": 8, "value": "00" * 8}


def catalog_scenario(seed: int = 0) -> ScenarioConfig:
    """One flow through a flow tracker; both ends carry a writable scratch space"""
    return ScenarioConfig.from_dict(
        {
            "seed": seed,
            "duration": 5.0,
            "name": "catalog",
            "endpoints": {
                "client": {
                    "traffic": {
                        "packet_rate": 10.0,
                        "packet_count": 20,
                        "payload": {"dist": "constant", "mean": 200},
                        "scratch": CATALOG_SCRATCH,
                    }
                },
                "server": {
                    "traffic": {
                        "respond_every": 1,
                        "payload": {"dist": "constant", "mean": 400},
                        "scratch": CATALOG_SCRATCH,
                    }
                },
            },
            "path": {"devices": [{"type": "flow_tracker"}]},
        }
    )


@dataclass(frozen=True)
class CatalogRow:
    name: str
    attacker: AttackerConfig
    expected: ClassPattern


CATALOG: tuple[CatalogRow, ...] = (
    CatalogRow(
        "protected-field exfiltration",
        AttackerConfig("tamper", (0,)),
        ClassPattern.parse("(D,*)"),
    ),
    CatalogRow(
        "two-point header exfiltration with restore",
        AttackerConfig("exfil", (0, 1), {"channel": "psn", "restore": True}),
        ClassPattern.parse("(!D,!P)"),
    ),
    CatalogRow(
        "scratch exfiltration",
        AttackerConfig("exfil", (0, 1), {"channel": "scratch", "restore": False}),
        ClassPattern.parse("(!D,*)"),
    ),
    CatalogRow(
        "scratch coercion",
        AttackerConfig("coercion", (0,), {"required_pcf_type": "OPAQUE", "advertise": True}),
        ClassPattern.parse("(D,!P)"),
    ),
    CatalogRow(
        "state-signal injection",
        AttackerConfig("inject_stop", (0, 1), {"at": 2.5}),
        ClassPattern.parse("(D,*)"),
    ),
    CatalogRow(
        "linkability and LoLa inference",
        AttackerConfig("passive", (0, 1)),
        ClassPattern.parse("(!D,!P)"),
    ),
)


@dataclass(frozen=True)
class CatalogResult:
    row: CatalogRow
    observed: ManipulationClass

    @property
    def matches(self) -> bool:
        return self.row.expected.matches(self.observed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "attack": self.row.name,
            "attacker": self.row.attacker.type,
            "expected": str(self.row.expected),
            "observed": str(self.observed),
            "match": self.matches,
        }


@timeit
def run_catalog(
    seed: int = 0,
    rows: Iterable[CatalogRow] = CATALOG,
    base: Optional[ScenarioConfig] = None,
) -> list[CatalogResult]:
    base = base if base is not None else catalog_scenario(seed)
    baseline = run_scenario(base.with_attacker(None))
    results = []
    for row in rows:
        attack_config = base.with_attacker(row.attacker)
        attack = run_scenario(attack_config)
        observed = classify_dp(
            baseline.trace,
            attack.trace,
            baseline_config=baseline.config,
            attack_config=attack_config,
        )
        result = CatalogResult(row, observed)
        logger.info(
            "Catalog row classified",
            attack=row.name,
            expected=str(row.expected),
            observed=str(observed),
            match=result.matches,
        )
        results.append(result)
    return results


def catalog_table(results: Iterable[CatalogResult]) -> pd.DataFrame:
    return pd.DataFrame([r.to_dict() for r in results])


def catalog_mismatches(results: Iterable[CatalogResult]) -> list[CatalogResult]:
    return [r for r in results if not r.matches]
