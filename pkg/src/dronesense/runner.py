"""End-to-end run: generate, pre-process, detect, coordinate, respond, report.

The fleet advances in lock-step one-second rounds. Within a round every
live drone first runs its events through the rules and analytics engines,
then modes are stepped with the swarm messages due that round, then
countermeasures and broadcasts are applied, and finally log forwarding
ships the round's lines to the audit repository.
"""

from __future__ import annotations

import copy
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .analytics import (
    INTERVAL_RULE,
    Alert,
    AnalyticsConfig,
    AnalyticsEngine,
    Mode,
    ModeTransition,
    format_alert,
    format_transition,
)
from .countermeasures import DEFAULT_STATE, apply_policy, format_action
from .preprocess import IngestStats, run_pipeline
from .rules import ActionLevel, SignatureRule, eval_event
from .scenario import Lcg, ScenarioSpec, derive_seed, format_truth, generate, positions_at
from .swarm import (
    SPEED_OF_LIGHT,
    AuditRepository,
    EmitterEstimate,
    Fabric,
    LocateError,
    LogForwarder,
    MessageKind,
    SwarmMessage,
    TriangObs,
    bearing_locate,
    bearing_to,
    broadcast_group,
    format_message,
    tdoa_locate,
)
from .telemetry import TelemetryEvent, format_number

# which ground-truth attack kinds explain an alert from each rule
RULE_ATTACKS = {
    "gps_spoof": ("GPS_SPOOF", "GPS_JAM"),
    "sat_count_anomaly": ("GPS_SPOOF",),
    INTERVAL_RULE: ("GPS_SPOOF",),
    "lost_link": ("GPS_JAM",),
    "wifi_power_anomaly": ("WIFI_DEAUTH",),
    "wifi_deauth": ("WIFI_DEAUTH",),
    "ddos": ("DDOS",),
}


class RunError(RuntimeError):
    """A module failure during a run, tagged with the module it came from."""

    def __init__(self, module: str, cause: Exception):
        self.module = module
        self.cause = cause
        super().__init__(f"[{module}] {type(cause).__name__}: {cause}")


@dataclass
class AttackOutcome:
    kind: str
    target: str
    start_s: int
    end_s: int
    latency_s: Optional[int]
    rule: Optional[str]


@dataclass
class RunReport:
    scenario: str
    seed: int
    alert_counts: dict[str, int]
    level_counts: dict[str, int]
    attacks: list[AttackOutcome]
    false_positives: int
    final_modes: dict[str, str]
    peak_modes: dict[str, str]
    pre_deescalation_modes: dict[str, str]
    swarm_entries: dict[str, int]
    first_broadcast: Optional[int]
    triangulation: Optional[dict]
    audit_completeness: float
    logged_lines: dict[str, int]
    forwarded_lines: dict[str, int]
    ingest: dict[str, tuple[int, int, int]]
    rejected_events: int

    def detection_latency(self, rule: str) -> Optional[int]:
        values = [a.latency_s for a in self.attacks if a.rule == rule and a.latency_s is not None]
        return min(values) if values else None

    def to_text(self) -> str:
        out = [f"scenario {self.scenario}", f"seed {self.seed}"]
        for rule, n in sorted(self.alert_counts.items()):
            out.append(f"alerts {rule} {n}")
        for level in ActionLevel:
            out.append(f"alerts_level {level.label} {self.level_counts.get(level.label, 0)}")
        for a in self.attacks:
            lat = "none" if a.latency_s is None else str(a.latency_s)
            out.append(f"attack {a.kind} target={a.target} start={a.start_s} end={a.end_s} "
                       f"latency_s={lat} rule={a.rule or 'none'}")
        out.append(f"false_positives {self.false_positives}")
        for d, m in self.final_modes.items():
            out.append(f"final_mode {d} {m}")
        for d, m in self.peak_modes.items():
            out.append(f"peak_mode {d} {m}")
        for d, m in self.pre_deescalation_modes.items():
            out.append(f"pre_deescalation_mode {d} {m}")
        out.append(f"first_broadcast {self.first_broadcast if self.first_broadcast is not None else 'none'}")
        for d, t in sorted(self.swarm_entries.items()):
            out.append(f"swarm_entry {d} {t}")
        if self.triangulation:
            tri = self.triangulation
            out.append(
                f"triangulation method={tri['method']} x={format_number(round(tri['x'], 3))} "
                f"y={format_number(round(tri['y'], 3))} error_m={format_number(round(tri['error_m'], 3))} "
                f"receivers={tri['receivers']}"
            )
        out.append(f"audit_completeness {self.audit_completeness:.6f}")
        for d in self.logged_lines:
            out.append(f"audit {d} logged={self.logged_lines[d]} forwarded={self.forwarded_lines[d]}")
        for d, (read, norm, drop) in self.ingest.items():
            out.append(f"ingest {d} read={read} normalized={norm} dropped={drop}")
        out.append(f"rejected_events {self.rejected_events}")
        return "\n".join(out) + "\n"


@dataclass
class RunResult:
    spec: ScenarioSpec
    report: RunReport
    alerts: list[Alert] = field(default_factory=list)
    transitions: list[tuple[str, ModeTransition]] = field(default_factory=list)
    action_lines: list[str] = field(default_factory=list)
    message_lines: list[str] = field(default_factory=list)
    logs: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    repository: AuditRepository = field(default_factory=AuditRepository)
    mode_history: dict[str, list[Mode]] = field(default_factory=dict)

    def log_lines(self, drone: str, before_tick: Optional[int] = None) -> list[str]:
        return [line for t, line in self.logs[drone] if before_tick is None or t < before_tick]

    def files(self) -> dict[str, str]:
        """Relative path -> content of every artifact file."""
        out = {
            "report.txt": self.report.to_text(),
            "alerts.log": "".join(format_alert(a) + "\n" for a in self.alerts),
            "modes.log": "".join(format_transition(d, t) + "\n" for d, t in self.transitions),
            "actions.log": "".join(line + "\n" for line in self.action_lines),
            "swarm.log": "".join(line + "\n" for line in self.message_lines),
            "repository.log": self.repository.dump(),
            "truth.txt": format_truth(self.spec),
        }
        for d, lines in self.logs.items():
            out[f"logs/{d}.log"] = "".join(line + "\n" for _, line in lines)
        return out

    def write(self, out_dir) -> None:
        root = Path(out_dir)
        for rel, text in self.files().items():
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8", newline="\n")


class _Drone:
    def __init__(self, drone_id: str, config: AnalyticsConfig):
        self.id = drone_id
        self.engine = AnalyticsEngine(drone_id, config)
        self.cm = DEFAULT_STATE
        self.forwarder = LogForwarder(drone_id)
        self.peak = Mode.NORMAL
        self.settled: Optional[Mode] = None  # mode held just before the first quiet step-down
        self.history: list[Mode] = []


def _preprocess(spec: ScenarioSpec) -> tuple[dict, dict]:
    """Per-drone (tick -> [(event, line)]) buckets plus ingest stats."""
    buckets: dict[str, dict[int, list]] = {}
    stats: dict[str, IngestStats] = {}
    start = spec.start.epoch
    try:
        generated = generate(spec)
    except Exception as exc:
        raise RunError("scenario", exc) from exc
    for drone, g in generated.items():
        per_tick: dict[int, list] = defaultdict(list)
        pending: list[str] = []

        def log(line: str, _p=pending) -> None:
            _p.append(line)

        def sink(e: TelemetryEvent, _b=per_tick, _p=pending) -> None:
            _b[e.timestamp.epoch - start].append((e, _p[-1]))

        try:
            stats[drone] = run_pipeline(g.adapters(), sink, log)
        except Exception as exc:
            raise RunError("preprocess", exc) from exc
        buckets[drone] = per_tick
    return buckets, stats


def run(
    spec: ScenarioSpec,
    rules: Sequence[SignatureRule],
    config: Optional[AnalyticsConfig] = None,
) -> RunResult:
    config = config or AnalyticsConfig()
    buckets, ingest = _preprocess(spec)
    topo = copy.deepcopy(spec.topology)
    fabric = Fabric(topo)
    repo = AuditRepository()
    drones = {d: _Drone(d, config) for d in spec.drones}
    track = spec.track()
    noise = Lcg(derive_seed(spec.seed, 9999))

    result = RunResult(spec, report=None, repository=repo)  # type: ignore[arg-type]
    result.logs = {d: [] for d in spec.drones}
    swarm_entries: dict[str, int] = {}
    first_broadcast: Optional[int] = None
    triang_obs: dict[tuple[str, int], list[TriangObs]] = defaultdict(list)
    triangulation: Optional[dict] = None

    for t in range(spec.duration_s):
        now = spec.timestamp(t)
        topo.positions.update(positions_at(spec, track, t))
        for d, tick in spec.destroy.items():
            if tick == t:
                topo.destroyed.add(d)
                drones[d].forwarder.destroy()
        live = [d for d in spec.drones if spec.alive(d, t)]
        inbox = fabric.deliver(t)

        alerts: dict[str, list[Alert]] = {}
        for d in live:
            drone = drones[d]
            out: list[Alert] = []
            for e, line in buckets[d].get(t, ()):
                drone.forwarder.write(line)
                result.logs[d].append((t, line))
                try:
                    out.extend(drone.engine.process(e, eval_event(rules, e)))
                except Exception as exc:
                    raise RunError("analytics", exc) from exc
            alerts[d] = out
            result.alerts.extend(out)

        for d in live:
            drone = drones[d]
            received = inbox.get(d, [])
            trans = drone.engine.step_mode(alerts[d], received, now)
            if trans.changed:
                result.transitions.append((d, trans))
                if trans.new.is_swarm and d not in swarm_entries:
                    swarm_entries[d] = t
            if trans.changed and trans.cause == "quiet" and drone.settled is None:
                drone.settled = trans.old
            if trans.new.rank > drone.peak.rank:
                drone.peak = trans.new
            drone.history.append(trans.new)

            for a in alerts[d]:
                drone.cm, actions = apply_policy(drone.cm, a, trans.new)
                result.action_lines += [format_action(now, d, act) for act in actions]
            if trans.changed:
                drone.cm, actions = apply_policy(drone.cm, None, trans.new, trans.old)
                result.action_lines += [format_action(now, d, act) for act in actions]

            for a in alerts[d]:
                if a.level >= ActionLevel.GROUP:
                    report = broadcast_group(topo, d, a, t, fabric)
                    if report.deliveries and first_broadcast is None:
                        first_broadcast = t
            if trans.changed and trans.new is Mode.EVASIVE:
                cause = next((a for a in alerts[d] if a.level is ActionLevel.EMERGENCY), None)
                if cause is not None:
                    broadcast_group(topo, d, cause, t, fabric, kind=MessageKind.ASSIST_REQUEST)
                    own = _observe(spec, d, t, topo.positions[d], noise)
                    if own is not None:
                        triang_obs[(d, t)].append(own)

            # assistance: answer with an observation of the emitter at the request tick
            for msg in received:
                if msg.kind is MessageKind.ASSIST_REQUEST:
                    then = positions_at(spec, track, msg.sent_tick)[d]
                    obs = _observe(spec, msg.sender, msg.sent_tick, then, noise, sender=d)
                    if obs is not None:
                        fabric.unicast(SwarmMessage(MessageKind.TRIANG_OBS, d, t, obs, msg.sender), msg.sender)
                elif msg.kind is MessageKind.TRIANG_OBS and msg.recipient == d:
                    req = _open_request(triang_obs, d)
                    if req is not None:
                        triang_obs[req].append(msg.payload)
                        est = _solve(triang_obs[req])
                        if est is not None:
                            emitter = _emitter_for(spec, d, req[1])
                            triangulation = {
                                "method": est.method, "x": est.x, "y": est.y,
                                "error_m": est.error_to(*emitter), "receivers": len(triang_obs[req]),
                            }

        for d in live:
            drones[d].forwarder.forward(repo, topo.link_up(d, t), t)

    result.message_lines = [format_message(m) for m in fabric.sent]
    result.mode_history = {d: dr.history for d, dr in drones.items()}
    result.report = _build_report(spec, result, drones, ingest, swarm_entries, first_broadcast, triangulation)
    return result


def _emitter_for(spec: ScenarioSpec, drone: str, tick: int) -> Optional[tuple[float, float]]:
    for a in spec.attacks_on(drone, tick):
        if a.emitter is not None:
            return a.emitter
    return None


def _observe(spec, requester, tick, pos, noise: Lcg, sender: Optional[str] = None) -> Optional[TriangObs]:
    """What a receiver at ``pos`` measures of the emitter attacking ``requester``."""
    for a in spec.attacks_on(requester, tick):
        emitter = a.emitter
        if emitter is None:
            continue
        who = sender or requester
        if a.params.get("triang", "tdoa") == "bearing":
            err = a.param("bearing_noise_deg", 2.0)
            b = (bearing_to(pos, emitter) + noise.uniform(-err, err)) % 360.0
            return TriangObs(pos[0], pos[1], bearing_deg=b, sender=who)
        err = a.param("tdoa_noise_ns", 10.0) * 1e-9
        dist = math.hypot(pos[0] - emitter[0], pos[1] - emitter[1])
        return TriangObs(pos[0], pos[1], arrival_s=dist / SPEED_OF_LIGHT + noise.uniform(-err, err), sender=who)
    return None


def _open_request(triang_obs: dict, drone: str) -> Optional[tuple[str, int]]:
    keys = [k for k in triang_obs if k[0] == drone]
    return max(keys, key=lambda k: k[1]) if keys else None


def _solve(obs: list[TriangObs]) -> Optional[EmitterEstimate]:
    try:
        if sum(o.arrival_s is not None for o in obs) >= 3:
            return tdoa_locate(obs)
        if sum(o.bearing_deg is not None for o in obs) >= 2:
            return bearing_locate(obs)
    except LocateError:
        return None
    return None


def alert_explained(spec: ScenarioSpec, a: Alert) -> bool:
    """True if a ground-truth attack of a matching kind covers the alert."""
    kinds = RULE_ATTACKS.get(a.rule, ())
    t = a.last.epoch - spec.start.epoch
    return any(
        atk.kind in kinds and atk.target == a.drone_id and atk.start_s <= t <= atk.end_s
        for atk in spec.attacks
    )


def _build_report(spec, result: RunResult, drones, ingest, swarm_entries, first_broadcast, triangulation) -> RunReport:
    counts: dict[str, int] = defaultdict(int)
    levels: dict[str, int] = defaultdict(int)
    for a in result.alerts:
        counts[a.rule] += 1
        levels[a.level.label] += 1

    outcomes = []
    for atk in spec.attacks:
        if atk.kind == "NONE":
            continue
        best: Optional[tuple[int, str]] = None
        for a in result.alerts:
            t = a.last.epoch - spec.start.epoch
            if (a.drone_id == atk.target and atk.kind in RULE_ATTACKS.get(a.rule, ())
                    and atk.start_s <= t <= atk.end_s):
                cand = (t - atk.start_s, a.rule)
                if best is None or cand[0] < best[0]:
                    best = cand
        outcomes.append(AttackOutcome(atk.kind, atk.target, atk.start_s, atk.end_s,
                                      best[0] if best else None, best[1] if best else None))
        # per-rule latency for every rule that can explain this attack
        for rule in sorted(r for r, kinds in RULE_ATTACKS.items() if atk.kind in kinds):
            first = next((a for a in result.alerts if a.rule == rule and a.drone_id == atk.target
                          and atk.start_s <= a.last.epoch - spec.start.epoch <= atk.end_s), None)
            if first is not None and (best is None or rule != best[1]):
                outcomes.append(AttackOutcome(atk.kind, atk.target, atk.start_s, atk.end_s,
                                              first.last.epoch - spec.start.epoch - atk.start_s, rule))

    fp = sum(1 for a in result.alerts if not alert_explained(spec, a))
    logged = {d: len(lines) for d, lines in result.logs.items()}
    forwarded = {d: result.repository.high_water(d) for d in spec.drones}
    total = sum(logged.values())
    completeness = sum(forwarded.values()) / total if total else 1.0

    return RunReport(
        scenario=spec.name,
        seed=spec.seed,
        alert_counts=dict(counts),
        level_counts=dict(levels),
        attacks=outcomes,
        false_positives=fp,
        final_modes={d: dr.engine.mode.label for d, dr in drones.items()},
        peak_modes={d: dr.peak.label for d, dr in drones.items()},
        pre_deescalation_modes={d: (dr.settled or dr.engine.mode).label for d, dr in drones.items()},
        swarm_entries=swarm_entries,
        first_broadcast=first_broadcast,
        triangulation=triangulation,
        audit_completeness=completeness,
        logged_lines=logged,
        forwarded_lines=forwarded,
        ingest={d: (s.read, s.normalized, s.dropped) for d, s in ingest.items()},
        rejected_events=sum(dr.engine.rejected for dr in drones.values()),
    )


# --- expectations ----------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    expectation: str
    passed: bool
    detail: str


def check_expectations(result: RunResult, lines: Sequence[str]) -> list[Check]:
    """Evaluate ``EXPECT ...`` lines against a run."""
    checks = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line.startswith("EXPECT"):
            continue
        try:
            passed, detail = _check(result, line.split()[1:])
        except (IndexError, ValueError, KeyError) as exc:
            passed, detail = False, f"bad expectation: {exc}"
        checks.append(Check(line, passed, detail))
    return checks


def _check(result: RunResult, args: list[str]) -> tuple[bool, str]:
    rep = result.report
    what = args[0]
    if what == "latency":
        rule, limit = args[1], float(args[2])
        lat = rep.detection_latency(rule)
        return lat is not None and lat <= limit, f"latency={lat}"
    if what == "max_alerts":
        level, limit = ActionLevel.from_label(args[1]), int(args[2])
        n = sum(1 for a in result.alerts if a.level >= level)
        return n <= limit, f"alerts_at_or_above_{level.label}={n}"
    if what == "false_positives":
        return rep.false_positives <= int(args[1]), f"false_positives={rep.false_positives}"
    if what == "fires":
        n = rep.alert_counts.get(args[1], 0)
        return n > 0, f"{args[1]}={n}"
    if what in ("final_mode", "peak_mode", "pre_deescalation_mode"):
        modes = {"final_mode": rep.final_modes, "peak_mode": rep.peak_modes,
                 "pre_deescalation_mode": rep.pre_deescalation_modes}[what]
        targets = list(modes) if args[1] == "*" else [args[1]]
        got = {d: modes[d] for d in targets}
        return all(m == args[2] for m in got.values()), f"{what}={got}"
    if what == "swarm_within":
        rounds = int(args[1])
        if rep.first_broadcast is None:
            return False, "no broadcast"
        origin_msg = next(m for m in _sent(result) if m[0] == rep.first_broadcast)
        topo = result.spec.topology
        expected = [d for d in result.spec.drones
                    if d != origin_msg[1] and topo.distance(origin_msg[1], d) <= topo.radius_m
                    and topo.link_up(d, rep.first_broadcast)]
        late = {d: rep.swarm_entries.get(d) for d in expected
                if rep.swarm_entries.get(d) is None or rep.swarm_entries[d] - rep.first_broadcast > rounds}
        return not late and bool(expected), f"expected={expected} late={late}"
    if what == "audit_prefix":
        drone, ticks = args[1], int(args[2])
        stored = result.repository.lines_for(drone)
        want = result.log_lines(drone, before_tick=ticks)
        return stored == want, f"stored={len(stored)} expected={len(want)}"
    if what == "triangulation_error":
        tri = rep.triangulation
        if not tri:
            return False, "no estimate"
        return tri["error_m"] <= float(args[1]), f"error_m={tri['error_m']:.3f}"
    raise ValueError(f"unknown expectation {what!r}")


def _sent(result: RunResult) -> list[tuple[int, str]]:
    out = []
    for line in result.message_lines:
        parts = line.split()
        if parts[1] == MessageKind.GROUP_ALERT.value:
            out.append((int(parts[0]), parts[2]))
    return out
