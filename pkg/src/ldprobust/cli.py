"""Command-line entry point: ``ldprobust run | audit | rates``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from ldprobust import audit, harness

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldprobust", description="Locally private robust estimation experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path, help="CSV of per-trial losses")
    run.add_argument("--summary", type=Path, help="JSON summary path (default: OUT with .json suffix)")
    run.add_argument("--seed", type=int, default=None, help="root seed (u64); overrides the config, default 0")
    run.add_argument("--jobs", type=int, default=None, help="worker processes (default $LDPROBUST_JOBS or 1)")
    run.add_argument("--check", action="store_true", help="exit 3 when the config's 'check' thresholds fail")

    aud = sub.add_parser("audit", help="exact privacy audit of a mechanism")
    aud.add_argument("--mechanism", required=True, choices=audit.MECHANISMS)
    aud.add_argument("--alpha", required=True, type=float)
    aud.add_argument("--gamma", type=float, default=None, help="audit Renyi privacy of order gamma (rr only)")

    rates = sub.add_parser("rates", help="fit log-log slopes from a run CSV")
    rates.add_argument("--input", required=True, type=Path)
    return ap


def _check(report: harness.ExperimentReport, check: dict) -> list[str]:
    failures = []
    if "slope" in check:
        lo, hi = check["slope"]
        if report.slope is None or not lo <= report.slope <= hi:
            failures.append(f"slope {report.slope} outside [{lo}, {hi}]")
    if "max_risk" in check:
        for d in report.per_n:
            if not d["risk"] <= check["max_risk"]:
                failures.append(f"risk {d['risk']} at n={d['n']} exceeds {check['max_risk']}")
    return failures


def _cmd_run(args) -> int:
    try:
        raw = json.loads(args.config.read_text())
        cfg = harness.ExperimentConfig.from_dict(raw, seed=args.seed if args.seed is not None else raw.get("seed", 0))
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    report = harness.run_experiment(cfg, jobs=args.jobs)
    args.out.write_text(report.to_csv())
    summary_path = args.summary or args.out.with_suffix(".json")
    summary_path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    print(f"wall-clock {report.runtime_s:.2f}s, slope {report.slope}, failed trials {report.failed}", file=sys.stderr)
    if args.check and cfg.check:
        failures = _check(report, cfg.check)
        for f in failures:
            print(f"check failed: {f}", file=sys.stderr)
        if failures:
            return EXIT_CHECK
    return EXIT_OK


def _cmd_audit(args) -> int:
    try:
        rep = audit.audit_mechanism(args.mechanism, args.alpha, gamma=args.gamma)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(rep.to_json_dict()))
    return EXIT_OK if rep.passed else EXIT_CHECK


def _cmd_rates(args) -> int:
    try:
        with args.input.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("task", "alpha", "eps", "slope", "intercept", "r2", "points"))
    for g in harness.rates_from_rows(rows):
        w.writerow((g["task"], g["alpha"], g["eps"], f"{g['slope']:.6g}", f"{g['intercept']:.6g}", f"{g['r2']:.6g}", g["points"]))
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    return {"run": _cmd_run, "audit": _cmd_audit, "rates": _cmd_rates}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
