import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from loguru import logger

from mcpsim.errors import ConfigError, MismatchedScenarios
from mcpsim.harness.catalog import catalog_mismatches, catalog_table, run_catalog
from mcpsim.harness.classify import classify_dp
from mcpsim.harness.config import ScenarioConfig, load_scenario
from mcpsim.harness.experiments import run_acceptance
from mcpsim.harness.report import Report, report_metrics
from mcpsim.harness.simulator import run_scenario
from mcpsim.harness.trace_io import LocalRepository, LocalText, truth_path
from mcpsim.log_conf import setup_logging_from_env

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISMATCH = 2


def _emit(report: Report, fmt: str, out: Optional[str]) -> None:
    text = report.to_json() if fmt == "json" else report.to_text()
    if out:
        LocalText().write(text, Path(out))
    else:
        sys.stdout.write(text)


def _truth_config(trace: str) -> Optional[ScenarioConfig]:
    path = truth_path(trace)
    if not path.exists():
        return None
    return ScenarioConfig.from_dict(LocalRepository().load(path)["config"])


def cmd_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    result = run_scenario(config)
    repo = LocalRepository()
    repo.write(result.trace, args.out)
    repo.write(result.truth_dict(), truth_path(args.out))
    logger.info("Trace written", path=args.out, events=len(result.trace))
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    repo = LocalRepository()
    observed = classify_dp(
        repo.load(args.baseline),
        repo.load(args.attack),
        tolerance_us=args.tolerance_us,
        baseline_config=_truth_config(args.baseline),
        attack_config=_truth_config(args.attack),
    )
    if args.format == "json":
        print(json.dumps(observed.to_dict(), sort_keys=True))
    else:
        print(observed)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    repo = LocalRepository()
    traces = {path: repo.load(path) for path in args.inputs}
    _emit(report_metrics(traces), args.format, args.out)
    return EXIT_OK


def cmd_catalog(args: argparse.Namespace) -> int:
    results = run_catalog(args.seed)
    if args.format == "json":
        print(json.dumps([r.to_dict() for r in results], indent=2))
    else:
        print(catalog_table(results).to_string(index=False))
    mismatches = catalog_mismatches(results)
    if args.check and mismatches:
        for r in mismatches:
            logger.error(
                "Class mismatch", attack=r.row.name, expected=str(r.row.expected), observed=str(r.observed)
            )
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_acceptance(args: argparse.Namespace) -> int:
    report, results = run_acceptance(args.seed)
    _emit(report, args.format, args.out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("Acceptance failed", experiments=failed)
        return EXIT_MISMATCH
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcpsim", description="Middlebox cooperation protocol simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    fmt = argparse.ArgumentParser(add_help=False)
    fmt.add_argument("--format", choices=["text", "json"], default="text")

    sp = sub.add_parser("run", help="Run one scenario and write its trace")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True, help="Trace file (.jsonl); ground truth goes next to it")
    sp.set_defaults(func=cmd_run)

    sc = sub.add_parser("classify", parents=[fmt], help="(D, P) class of an attack trace")
    sc.add_argument("--baseline", required=True)
    sc.add_argument("--attack", required=True)
    sc.add_argument("--tolerance-us", type=int, default=1000)
    sc.set_defaults(func=cmd_classify)

    sr = sub.add_parser("report", parents=[fmt], help="Metrics over one or more traces")
    sr.add_argument("--in", dest="inputs", nargs="+", required=True)
    sr.add_argument("--out", default=None)
    sr.set_defaults(func=cmd_report)

    sa = sub.add_parser("catalog", parents=[fmt], help="Run the built-in attack matrix")
    sa.add_argument("--seed", type=int, default=0)
    sa.add_argument("--check", action="store_true", help="Exit 2 when a class does not match")
    sa.set_defaults(func=cmd_catalog)

    se = sub.add_parser("acceptance", parents=[fmt], help="Run every quantitative experiment")
    se.add_argument("--seed", type=int, default=0)
    se.add_argument("--out", default=None)
    se.set_defaults(func=cmd_acceptance)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    setup_logging_from_env()
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args))
    except (ConfigError, MismatchedScenarios, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        logger.error(f"{args.cmd} failed: {e}", error_type=type(e).__name__)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
