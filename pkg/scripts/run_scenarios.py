#!/usr/bin/env python3
"""Run every shipped scenario, write its artifacts and check its EXPECT lines."""

import argparse
import sys
import time
from pathlib import Path

from dronesense.cli import resolve_scenario, shipped_scenarios
from dronesense.rules import default_ruleset
from dronesense.runner import check_expectations, run
from dronesense.scenario import load_scenario


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs", help="parent directory for per-scenario output")
    ap.add_argument("names", nargs="*", help="scenario names (default: all shipped)")
    args = ap.parse_args()

    rules = default_ruleset()
    failed = 0
    for name in args.names or shipped_scenarios():
        spec = load_scenario(resolve_scenario(name))
        t0 = time.perf_counter()
        result = run(spec, rules)
        elapsed = time.perf_counter() - t0
        result.write(Path(args.out) / name)
        checks = check_expectations(result, spec.expectations)
        bad = [c for c in checks if not c.passed]
        failed += bool(bad)
        print(f"{name:16s} {elapsed:5.2f}s  {len(checks) - len(bad)}/{len(checks)} expectations")
        for c in checks:
            print(f"    {'PASS' if c.passed else 'FAIL'} {c.expectation}  ({c.detail})")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
