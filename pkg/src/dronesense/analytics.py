"""Stateful analytics: metadata window, stateful signatures, trends, modes."""

from __future__ import annotations

import math
import statistics
from collections import deque
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Iterable, Optional, Sequence

from .rules import ActionLevel, Rate, Repeat, RuleMatch
from .telemetry import Selector, TelemetryEvent, Timestamp, format_number, format_token_value

INTERVAL_RULE = "gps_interval_constancy"
SWARM_TRIGGER_KINDS = ("GROUP_ALERT", "ASSIST_REQUEST")


@dataclass
class AnalyticsConfig:
    window_s: int = 3600
    quiet_period_s: int = 300
    cov_threshold: float = 0.01
    cov_min_samples: int = 10

    def __post_init__(self):
        if self.window_s <= 0 or self.quiet_period_s <= 0:
            raise ValueError("window_s and quiet_period_s must be positive")
        if self.cov_min_samples < 3:
            raise ValueError("cov_min_samples must be >= 3")


def parse_config(text: str) -> AnalyticsConfig:
    """Read ``key value`` lines; ``#`` comments and blank lines are skipped."""
    types = {f.name: f.type for f in fields(AnalyticsConfig)}
    values = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in types:
            raise ValueError(f"config line {no}: cannot read {raw.strip()!r}")
        key, value = parts
        values[key] = float(value) if types[key] == "float" else int(value)
    return AnalyticsConfig(**values)


def load_config(path) -> AnalyticsConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg: AnalyticsConfig) -> str:
    return "".join(f"{f.name} {getattr(cfg, f.name)}\n" for f in fields(cfg))


class Mode(Enum):
    NORMAL = ("Normal", 0)
    MONITOR = ("Monitor", 1)
    ELEVATED = ("Elevated", 2)
    EVASIVE = ("Evasive", 3)
    SWARM_MONITOR = ("SwarmMonitor", 1)
    SWARM_ELEVATED = ("SwarmElevated", 2)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def rank(self) -> int:
        return self.value[1]

    @property
    def is_swarm(self) -> bool:
        return self in (Mode.SWARM_MONITOR, Mode.SWARM_ELEVATED)

    @classmethod
    def from_label(cls, text: str) -> "Mode":
        for m in cls:
            if m.label == text:
                return m
        raise ValueError(f"unknown mode {text!r}")

    def __str__(self) -> str:
        return self.label


_STEP_DOWN = {
    Mode.EVASIVE: Mode.ELEVATED,
    Mode.ELEVATED: Mode.MONITOR,
    Mode.SWARM_ELEVATED: Mode.SWARM_MONITOR,
    Mode.MONITOR: Mode.NORMAL,
    Mode.SWARM_MONITOR: Mode.NORMAL,
}

_ALERT_TARGET = {
    ActionLevel.INFO: Mode.MONITOR,
    ActionLevel.ELEVATED: Mode.ELEVATED,
    # a local Group alert raises this drone to Elevated; peers get the broadcast
    ActionLevel.GROUP: Mode.ELEVATED,
    ActionLevel.EMERGENCY: Mode.EVASIVE,
}


@dataclass(frozen=True, slots=True)
class Alert:
    drone_id: str
    rule: str
    level: ActionLevel
    first: Timestamp
    last: Timestamp
    count: int = 1
    detail: tuple[str, ...] = ()

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("alert count must be >= 1")
        if self.last < self.first:
            raise ValueError("alert first must not be after last")

    @property
    def timestamp(self) -> Timestamp:
        return self.last


def format_alert(a: Alert) -> str:
    parts = [
        str(a.last), "ALERT", a.drone_id, a.level.label, a.rule,
        f"count={a.count}", f"first={a.first}", f"last={a.last}", *a.detail,
    ]
    return " ".join(parts)


def parse_alert(line: str) -> Alert:
    parts = line.split()
    if len(parts) < 8 or parts[1] != "ALERT":
        raise ValueError(f"not an alert line: {line!r}")
    kv = {}
    for tok in parts[5:8]:
        k, _, v = tok.partition("=")
        kv[k] = v
    return Alert(
        drone_id=parts[2],
        rule=parts[4],
        level=ActionLevel.from_label(parts[3]),
        first=Timestamp.parse(kv["first"]),
        last=Timestamp.parse(kv["last"]),
        count=int(kv["count"]),
        detail=tuple(parts[8:]),
    )


def _detail(e: TelemetryEvent) -> tuple[str, ...]:
    return tuple(f"{k}={format_token_value(v)}" for k, v in e.additional)


# --- sliding metadata window -------------------------------------------------


@dataclass(frozen=True, slots=True)
class MetadataRecord:
    """What the window keeps of an event: no free-text payload."""

    timestamp: Timestamp
    selector: Selector
    numeric: tuple[tuple[str, float], ...] = ()

    @classmethod
    def of(cls, e: TelemetryEvent) -> "MetadataRecord":
        return cls(e.timestamp, e.selector, e.numeric_tokens())

    def get(self, key: str) -> Optional[float]:
        for k, v in self.numeric:
            if k == key:
                return v
        return None


class MetadataWindow:
    """Time-bounded ring of metadata records.

    Every insert evicts records more than ``duration_s`` older than the
    newest one, so storage is bounded by the event rate times the window.
    """

    def __init__(self, duration_s: int = 3600):
        if duration_s <= 0:
            raise ValueError("duration must be positive")
        self.duration_s = duration_s
        self._records: deque[MetadataRecord] = deque()

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def newest(self) -> Optional[Timestamp]:
        return self._records[-1].timestamp if self._records else None

    def insert(self, record: MetadataRecord) -> None:
        if self._records and record.timestamp < self._records[-1].timestamp:
            raise ValueError("records must be inserted in timestamp order")
        self._records.append(record)
        horizon = record.timestamp.epoch - self.duration_s
        while self._records[0].timestamp.epoch < horizon:
            self._records.popleft()

    def query(self, start: Timestamp, end: Timestamp) -> list[MetadataRecord]:
        """Records with ``start <= ts <= end``, newest first."""
        out = []
        for r in reversed(self._records):
            if r.timestamp < start:
                break
            if r.timestamp <= end:
                out.append(r)
        return out

    def latest(self, n: int, key: str) -> list[MetadataRecord]:
        """Up to ``n`` newest records carrying numeric ``key``, newest first."""
        out = []
        for r in reversed(self._records):
            if r.get(key) is not None:
                out.append(r)
                if len(out) == n:
                    break
        return out


# --- trend detection ----------------------------------------------------------


class ZeroMeanInterval(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class ConstancyResult:
    indicator: bool
    cov: Optional[float]  # None when there were too few samples to judge


def interval_constancy(
    samples: Sequence[float], threshold: float = 0.01, min_samples: int = 10
) -> ConstancyResult:
    """Flag message timing that is too regular to come from real satellites.

    ``samples`` are message arrival times in seconds. The coefficient of
    variation of the inter-arrival intervals (population stddev over mean)
    below ``threshold`` is the spoofing indicator.
    """
    if len(samples) < min_samples:
        return ConstancyResult(False, None)
    intervals = [b - a for a, b in zip(samples, samples[1:])]
    mean = statistics.fmean(intervals)
    if mean == 0:
        raise ZeroMeanInterval("all samples share one timestamp")
    cov = statistics.pstdev(intervals, mu=mean) / abs(mean)
    return ConstancyResult(cov < threshold, cov)


# --- distance travelled -------------------------------------------------------


class NonMonotonicTimestamp(ValueError):
    pass


@dataclass
class Odometer:
    """Distance integrated from reported speed.

    Each reported speed is held until the next event, so an interval
    contributes the speed of the event that opened it.
    """

    meters: float = 0.0
    last_ts: Optional[Timestamp] = None
    last_speed_kmh: float = 0.0
    rejected: int = 0

    def advance(self, e: TelemetryEvent) -> float:
        if self.last_ts is not None:
            dt = e.timestamp - self.last_ts
            if dt < 0:
                self.rejected += 1
                raise NonMonotonicTimestamp(f"{e.timestamp} is before {self.last_ts}")
            self.meters += self.last_speed_kmh / 3.6 * dt
        self.last_ts = e.timestamp
        self.last_speed_kmh = e.speed_kmh
        return self.meters


def advance_odometer(state: Odometer, e: TelemetryEvent) -> float:
    return state.advance(e)


# --- stateful signature completion -----------------------------------------------


@dataclass
class _RepeatState:
    hits: deque = field(default_factory=deque)  # (Timestamp, odometer_m, event)


@dataclass
class _RateState:
    hits: deque = field(default_factory=deque)  # (Timestamp, weight, event)
    cooldown_until: Optional[int] = None


def _weight(e: TelemetryEvent) -> int:
    count = e.get("count")
    return count if isinstance(count, int) and count >= 1 else 1


class PendingState:
    """Per-rule accumulation for REPEAT and RATE signatures."""

    def __init__(self, drone_id: str, window_s: int = 3600):
        self.drone_id = drone_id
        self.window_s = window_s
        self._repeat: dict[str, _RepeatState] = {}
        self._rate: dict[str, _RateState] = {}

    def ingest_match(self, m: RuleMatch, now: Timestamp, odometer_m: float) -> list[Alert]:
        s = m.stateful
        if s is None:
            return [Alert(self.drone_id, m.name, m.level, now, now, 1, _detail(m.event))]
        if isinstance(s, Repeat):
            return self._ingest_repeat(m, s, now, odometer_m)
        return self._ingest_rate(m, s, now)

    def _ingest_repeat(self, m: RuleMatch, s: Repeat, now: Timestamp, odo: float) -> list[Alert]:
        st = self._repeat.setdefault(m.name, _RepeatState())
        st.hits.append((now, odo, m.event))
        while st.hits and now.epoch - st.hits[0][0].epoch > self.window_s:
            st.hits.popleft()
        if len(st.hits) < s.count:
            return []
        span = st.hits[-1][1] - st.hits[0][1]
        if span < s.min_distance_m:
            return []
        first = st.hits[0][0]
        count = len(st.hits)
        st.hits.clear()
        detail = _detail(m.event) + (f"span_m={format_number(span)}",)
        return [Alert(self.drone_id, m.name, m.level, first, now, count, detail)]

    def _ingest_rate(self, m: RuleMatch, s: Rate, now: Timestamp) -> list[Alert]:
        st = self._rate.setdefault(m.name, _RateState())
        if st.cooldown_until is not None and now.epoch < st.cooldown_until:
            return []
        st.hits.append((now, _weight(m.event), m.event))
        while st.hits and now.epoch - st.hits[0][0].epoch >= s.window_s:
            st.hits.popleft()
        total = sum(w for _, w, _ in st.hits)
        if total <= s.count:
            return []
        first = st.hits[0][0]
        count = len(st.hits)
        st.hits.clear()
        st.cooldown_until = now.epoch + math.ceil(s.window_s)
        detail = _detail(m.event) + (f"total={total}",)
        return [Alert(self.drone_id, m.name, m.level, first, now, count, detail)]

    def rate_timestamps(self, rule: str) -> list[Timestamp]:
        st = self._rate.get(rule)
        return [t for t, _, _ in st.hits] if st else []

    def repeat_hits(self, rule: str) -> list[tuple[Timestamp, float]]:
        st = self._repeat.get(rule)
        return [(t, o) for t, o, _ in st.hits] if st else []


# --- operating modes ------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ModeTransition:
    time: Timestamp
    old: Mode
    new: Mode
    cause: str

    @property
    def changed(self) -> bool:
        return self.old is not self.new


def format_transition(drone_id: str, t: ModeTransition) -> str:
    return f"{t.time} MODE {drone_id} {t.old.label} -> {t.new.label} cause={t.cause}"


def _kind_name(msg) -> str:
    kind = getattr(msg, "kind", None)
    return getattr(kind, "value", kind)


class ModeMachine:
    """Operating mode with escalation on inputs and stepwise quiet-period decay."""

    def __init__(self, quiet_period_s: int = 300):
        self.quiet_period_s = quiet_period_s
        self.mode = Mode.NORMAL
        self.quiet_since: Optional[int] = None

    def step_mode(
        self, alerts: Iterable[Alert], swarm_inputs: Iterable[object], now: Timestamp
    ) -> ModeTransition:
        old = self.mode
        targets: list[tuple[Mode, bool, str]] = []
        for a in alerts:
            targets.append((_ALERT_TARGET[a.level], False, a.rule))
        for msg in swarm_inputs:
            if _kind_name(msg) in SWARM_TRIGGER_KINDS:
                target = Mode.SWARM_MONITOR if old.rank <= 1 else Mode.SWARM_ELEVATED
                targets.append((target, True, f"swarm:{getattr(msg, 'sender', '?')}"))

        mode = old
        cause = "none"
        refreshed = any(t.rank >= old.rank for t, _, _ in targets)
        if (
            old is not Mode.NORMAL
            and not refreshed
            and self.quiet_since is not None
            and now.epoch - self.quiet_since >= self.quiet_period_s
        ):
            mode = _STEP_DOWN[old]
            cause = "quiet"
            self.quiet_since = now.epoch

        for target, swarm, why in targets:
            # a swarm input turns a solo mode into its swarm twin of equal rank
            if target.rank > mode.rank or (swarm and target.rank == mode.rank and target is not mode):
                mode = target
                cause = why
        if refreshed or mode.rank > old.rank:
            self.quiet_since = now.epoch

        self.mode = mode
        return ModeTransition(now, old, mode, cause)


def step_mode(machine: ModeMachine, alerts, swarm_inputs, now: Timestamp) -> ModeTransition:
    return machine.step_mode(alerts, swarm_inputs, now)


# --- per-drone engine -------------------------------------------------------------


class AnalyticsEngine:
    """The stateful stage for one drone: one consumer of its ordered stream."""

    def __init__(self, drone_id: str, config: Optional[AnalyticsConfig] = None):
        self.drone_id = drone_id
        self.config = config or AnalyticsConfig()
        self.window = MetadataWindow(self.config.window_s)
        self.odometer = Odometer()
        self.pending = PendingState(drone_id, self.config.window_s)
        self.modes = ModeMachine(self.config.quiet_period_s)
        self._constant = False

    @property
    def rejected(self) -> int:
        return self.odometer.rejected

    def process(self, e: TelemetryEvent, matches: Sequence[RuleMatch]) -> list[Alert]:
        try:
            odo = self.odometer.advance(e)
        except NonMonotonicTimestamp:
            return []
        self.window.insert(MetadataRecord.of(e))
        alerts: list[Alert] = []
        for m in matches:
            alerts.extend(self.pending.ingest_match(m, e.timestamp, odo))
        if e.get("interval_s") is not None:
            alerts.extend(self._check_interval_trend(e.timestamp))
        return alerts

    def _check_interval_trend(self, now: Timestamp) -> list[Alert]:
        cfg = self.config
        recent = self.window.latest(cfg.cov_min_samples - 1, "interval_s")
        recent.reverse()
        times = [0.0]
        for r in recent:
            times.append(times[-1] + r.get("interval_s"))
        try:
            result = interval_constancy(times, cfg.cov_threshold, cfg.cov_min_samples)
        except ZeroMeanInterval:
            return []
        rising = result.indicator and not self._constant
        self._constant = result.indicator
        if not rising:
            return []
        detail = (f"cov={result.cov:.6f}", f"samples={len(times)}")
        return [
            Alert(
                self.drone_id, INTERVAL_RULE, ActionLevel.EMERGENCY,
                recent[0].timestamp, now, len(recent), detail,
            )
        ]

    def step_mode(self, alerts, swarm_inputs, now: Timestamp) -> ModeTransition:
        return self.modes.step_mode(alerts, swarm_inputs, now)

    @property
    def mode(self) -> Mode:
        return self.modes.mode
