"""Command line: run, generate, locate, replay."""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .analytics import AnalyticsConfig, AnalyticsEngine, format_alert, load_config
from .rules import default_ruleset, eval_event, load_rules
from .scenario import format_truth, load_scenario, write_generated
from .swarm import SPEED_OF_LIGHT, LocateError, NoConvergence, bearing_locate, read_obs, tdoa_locate
from .telemetry import TelemetryParseError, format_number, parse_event
from .runner import RunError, check_expectations, run


def shipped_scenarios() -> list[str]:
    root = resources.files("dronesense.data") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def resolve_scenario(name: str) -> Path:
    """A path, or the name of a shipped scenario (``gps_spoof``)."""
    path = Path(name)
    if path.exists():
        return path
    shipped = resources.files("dronesense.data") / "scenarios" / f"{name}.scn"
    if shipped.is_file():
        return Path(str(shipped))
    raise FileNotFoundError(f"no scenario file or shipped scenario named {name!r}")


def _rules(path):
    return load_rules(path) if path else default_ruleset()


def _config(path):
    return load_config(path) if path else AnalyticsConfig()


def cmd_run(args) -> int:
    spec = load_scenario(resolve_scenario(args.scenario))
    try:
        result = run(spec, _rules(args.rules), _config(args.config))
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    result.write(args.out)
    sys.stdout.write(result.report.to_text())
    if args.assert_file is None:
        return 0
    expectations = Path(args.assert_file).read_text(encoding="utf-8").splitlines()
    checks = check_expectations(result, expectations)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.expectation} ({c.detail})")
    return 0 if all(c.passed for c in checks) else 2


def cmd_generate(args) -> int:
    spec = load_scenario(resolve_scenario(args.scenario))
    generated = write_generated(spec, args.out)
    for drone, g in generated.items():
        n = sum(len(v) for v in g.streams.values())
        print(f"{drone} {n} records")
    sys.stdout.write(format_truth(spec))
    return 0


def cmd_locate(args) -> int:
    obs, speed = read_obs(Path(args.obs).read_text(encoding="utf-8"))
    try:
        if args.method == "tdoa":
            est = tdoa_locate(obs, speed or SPEED_OF_LIGHT)
        else:
            est = bearing_locate(obs)
    except NoConvergence as exc:
        print(f"warning: {exc}", file=sys.stderr)
        est = exc.estimate
    except LocateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{est.method} x={format_number(est.x)} y={format_number(est.y)} "
          f"residual={est.residual!r} converged={str(est.converged).lower()}")
    return 0


def cmd_replay(args) -> int:
    rules = _rules(args.rules)
    drone = args.drone or Path(args.log).stem
    engine = AnalyticsEngine(drone, _config(args.config))
    bad = 0
    with open(args.log, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                e = parse_event(line, no)
            except TelemetryParseError as exc:
                print(f"skip: {exc}", file=sys.stderr)
                bad += 1
                continue
            alerts = engine.process(e, eval_event(rules, e))
            for a in alerts:
                print(format_alert(a))
            trans = engine.step_mode(alerts, (), e.timestamp)
            if trans.changed and args.modes:
                print(f"{trans.time} MODE {drone} {trans.old.label} -> {trans.new.label} cause={trans.cause}")
    return 1 if bad and args.strict else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dronesense", description="Drone intrusion detection pipeline simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario end to end")
    r.add_argument("--scenario", required=True, help="scenario file or shipped name (%s)" % ", ".join(shipped_scenarios()))
    r.add_argument("--rules", help="rules file (default: shipped ruleset)")
    r.add_argument("--config", help="analytics config file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--assert", dest="assert_file", help="file of EXPECT lines; exit 2 if any fails")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("generate", help="write raw record streams and ground truth")
    g.add_argument("--scenario", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    loc = sub.add_parser("locate", help="locate an emitter from an observation file")
    loc.add_argument("--obs", required=True)
    loc.add_argument("--method", choices=("tdoa", "bearing"), default="tdoa")
    loc.set_defaults(func=cmd_locate)

    rp = sub.add_parser("replay", help="re-run detection over a recorded log")
    rp.add_argument("--log", required=True)
    rp.add_argument("--rules")
    rp.add_argument("--config")
    rp.add_argument("--drone", help="drone id for alerts (default: log file stem)")
    rp.add_argument("--modes", action="store_true", help="also print mode transitions")
    rp.add_argument("--strict", action="store_true", help="exit 1 if any line fails to parse")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
