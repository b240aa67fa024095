"""Command-line front end.

``run`` executes a named scenario for one or more seeds, optionally writes
each NDJSON trace plus a summary, and exits 0 only when every selected check
meets the scenario's declared expectation. ``check`` re-evaluates a saved
trace offline.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .checks import CHECKS, meets_expectation, run_checks
from .network import ConfigurationError
from .scenarios import SCENARIOS, build, with_finality
from .sim import run_scenario
from .trace import Trace

EXIT_OK, EXIT_UNMET, EXIT_USAGE = 0, 1, 2


def load_config(path: Optional[str]) -> dict:
    """Scenario parameters from a YAML or JSON file (JSON is valid YAML)."""
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping")
    return data


def _check_names(raw: Optional[str]) -> Optional[list]:
    if raw is None:
        return None
    names = [c.strip() for c in raw.split(",") if c.strip()]
    unknown = sorted(set(names) - set(CHECKS))
    if unknown:
        raise ConfigurationError(f"unknown checks {unknown}; choose from {sorted(CHECKS)}")
    return names


def format_verdicts(label: str, verdicts, expect: dict) -> list[str]:
    lines = []
    for v in verdicts:
        ok = meets_expectation(v, expect)
        wanted = expect.get(v.check, "pass")
        lines.append(f"{label} {v.check}: {v.result} (expected {wanted}) {'OK' if ok else 'UNMET'}"
                     + (f"  {v.note}" if v.note else ""))
        for ev in v.evidence:
            lines.append(f"    line {ev[0]}: {ev[1]}")
    return lines


def run_one(name: str, seed: int, params: dict, finality: str, baseline: bool,
            checks: Optional[list]):
    scenario = build(name, seed, **params)
    scenario = with_finality(scenario, finality)
    if baseline and not scenario.baseline:
        scenario = replace(scenario, baseline=True)
    result = run_scenario(scenario)
    names = checks if checks is not None else list(scenario.checks)
    verdicts = run_checks(result.trace, names)
    return result, verdicts


def cmd_run(args) -> int:
    params = load_config(args.config)
    checks = _check_names(args.checks)
    if args.scenario not in SCENARIOS:
        raise ConfigurationError(f"unknown scenario {args.scenario!r}; choose from {sorted(SCENARIOS)}")
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    seeds = range(args.seed, args.seed + args.seeds) if args.seeds else [args.seed]
    tally: dict[tuple, int] = {}
    summary = []
    unmet = 0
    for seed in seeds:
        result, verdicts = run_one(args.scenario, seed, params, args.finality, args.baseline, checks)
        expect = result.scenario.expect
        label = f"{args.scenario}[seed={seed}]"
        if out is not None:
            result.trace.dump(out / f"{args.scenario}-seed{seed}.ndjson")
        lines = format_verdicts(label, verdicts, expect)
        if not args.quiet or len(seeds) == 1:
            print("\n".join(lines))
        for v in verdicts:
            ok = meets_expectation(v, expect)
            unmet += not ok
            tally[(v.check, v.result)] = tally.get((v.check, v.result), 0) + 1
        summary.append({"seed": seed, "verdicts": [v.to_dict() for v in verdicts],
                        "met": all(meets_expectation(v, expect) for v in verdicts)})
    if len(seeds) > 1:
        print(f"{args.scenario}: {len(seeds)} runs")
        for (check, res), count in sorted(tally.items()):
            print(f"  {check} {res}: {count}")
    print(f"{'all expectations met' if not unmet else f'{unmet} unmet expectation(s)'}")
    if out is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if not unmet else EXIT_UNMET


def cmd_check(args) -> int:
    try:
        trace = Trace.load(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot load trace {args.trace}: {exc}") from None
    header = trace.header
    names = _check_names(args.checks) or header.get("checks") or list(CHECKS)
    verdicts = run_checks(trace, names)
    expect = header.get("expect", {})
    print("\n".join(format_verdicts(header.get("scenario", "trace"), verdicts, expect)))
    return EXIT_OK if all(meets_expectation(v, expect) for v in verdicts) else EXIT_UNMET


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="checkpointed-pos",
                                     description="Run checkpointed proof-of-stake scenarios and check their traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and check it")
    run.add_argument("--scenario", required=True, help=f"one of: {', '.join(sorted(SCENARIOS))}")
    run.add_argument("--config", help="YAML or JSON file of scenario parameters; a 'config' "
                                      "mapping inside overrides protocol settings")
    run.add_argument("--seed", type=int, default=0, help="seed (first seed of a batch)")
    run.add_argument("--seeds", type=int, default=0, help="run this many consecutive seeds")
    run.add_argument("--out", help="directory for NDJSON traces and summary.json")
    run.add_argument("--checks", help=f"comma-separated subset of: {', '.join(CHECKS)}")
    run.add_argument("--finality", choices=("fast", "slow", "both"), default="both",
                     help="force every client onto one finality rule")
    run.add_argument("--baseline", action="store_true", help="turn checkpointing off")
    run.add_argument("--quiet", action="store_true", help="batch runs print only the aggregate")
    run.set_defaults(func=cmd_run)

    chk = sub.add_parser("check", help="re-check a saved trace")
    chk.add_argument("trace", help="NDJSON trace file")
    chk.add_argument("--checks", help="comma-separated subset of checks")
    chk.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seeds", 0) < 0:
        parser.error("--seeds must be non-negative")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
