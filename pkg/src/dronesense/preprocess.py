"""Pre-process engine: adapters, normalization, merge and dual write.

Raw records come from per-source adapters. Each record is normalized into a
:class:`TelemetryEvent`, appended to the raw log, and only then handed to the
rules engine inlet, in one global order by ``(timestamp, adapter, sequence)``.

Adapter replay files hold one record per line::

    <source_kind> <capture_ts> key=value ...
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Mapping, Optional

from .telemetry import (
    GeoPoint,
    Selector,
    TelemetryEvent,
    Timestamp,
    format_event,
    parse_token_value,
)

logger = logging.getLogger(__name__)


class SourceKind(str, Enum):
    RF_SAMPLE = "RF_SAMPLE"
    GPS_STATUS = "GPS_STATUS"
    WIFI_FRAME = "WIFI_FRAME"
    NET_COUNTER = "NET_COUNTER"
    MFR_LOG = "MFR_LOG"


# manufacturer log severities, lowest first
SEVERITIES = ("DEBUG", "INFO", "WARN", "ERROR", "EMERGENCY")
KINEMATIC_KEYS = ("speed_kmh", "heading_deg", "lat", "lon", "alt")


class PreprocessError(Exception):
    pass


class UnknownSourceKind(PreprocessError, ValueError):
    pass


class MissingField(PreprocessError, KeyError):
    def __init__(self, kind: str, name: str):
        self.kind = kind
        self.name = name
        super().__init__(f"{kind} record missing field {name!r}")

    def __str__(self) -> str:
        return self.args[0]


class BadRecordLine(PreprocessError, ValueError):
    pass


class SinkUnavailable(PreprocessError):
    def __init__(self, message: str, stats: "IngestStats"):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True, slots=True)
class RawRecord:
    kind: SourceKind
    timestamp: Timestamp
    fields: Mapping[str, str]

    def require(self, name: str) -> str:
        try:
            return self.fields[name]
        except KeyError:
            raise MissingField(self.kind.value, name) from None


def parse_raw_record(line: str, line_no: Optional[int] = None) -> RawRecord:
    where = f"line {line_no}: " if line_no is not None else ""
    parts = line.split()
    if len(parts) < 2:
        raise BadRecordLine(f"{where}expected '<kind> <timestamp> key=value...'")
    try:
        kind = SourceKind(parts[0])
    except ValueError:
        raise UnknownSourceKind(f"{where}unknown source kind {parts[0]!r}") from None
    try:
        ts = Timestamp.parse(parts[1])
    except ValueError:
        raise BadRecordLine(f"{where}bad timestamp {parts[1]!r}") from None
    fields = {}
    for tok in parts[2:]:
        key, sep, value = tok.partition("=")
        if not sep or not key or not value:
            raise BadRecordLine(f"{where}bad token {tok!r}")
        fields[key] = value
    return RawRecord(kind, ts, fields)


def format_raw_record(r: RawRecord) -> str:
    tokens = " ".join(f"{k}={v}" for k, v in r.fields.items())
    head = f"{r.kind.value} {r.timestamp}"
    return f"{head} {tokens}" if tokens else head


def read_records(lines: Iterable[str]) -> Iterator[RawRecord]:
    for no, line in enumerate(lines, start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield parse_raw_record(line, no)


@dataclass(frozen=True, slots=True)
class Kinematics:
    speed_kmh: float = 0.0
    heading_deg: float = 0.0
    geo: GeoPoint = GeoPoint(0.0, 0.0, 0.0)

    @classmethod
    def from_record(cls, r: RawRecord) -> Optional["Kinematics"]:
        """Flight state carried by a record, or None if it has no kinematics."""
        if not all(k in r.fields for k in KINEMATIC_KEYS):
            return None
        f = r.fields
        speed = float(f["speed_kmh"])
        heading = float(f["heading_deg"])
        if not (math.isfinite(speed) and speed >= 0.0 and math.isfinite(heading)):
            raise ValueError(f"bad kinematics in {r.kind.value} record")
        return cls(
            speed,
            heading % 360.0,
            GeoPoint(float(f["lat"]), float(f["lon"]), float(f["alt"])),
        )


def _num(r: RawRecord, name: str) -> float:
    text = r.require(name)
    try:
        return float(text)
    except ValueError:
        raise MissingField(r.kind.value, name) from None


def _int(r: RawRecord, name: str) -> int:
    text = r.require(name)
    try:
        return int(text)
    except ValueError:
        raise MissingField(r.kind.value, name) from None


def _truthy(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "y")


def normalize(r: RawRecord, kin: Kinematics) -> TelemetryEvent:
    """Map a raw record to a telemetry event using the current kinematics.

    Raises MissingField when a mandatory field is absent or unreadable and
    UnknownSourceKind for kinds without a mapping.
    """
    kind = r.kind
    if kind is SourceKind.RF_SAMPLE:
        selector = Selector.FREQUENCY
        tokens = [("freq_mhz", _num(r, "freq_mhz")), ("power_db", _num(r, "power_db"))]
    elif kind is SourceKind.GPS_STATUS:
        if not _truthy(r.require("fix")):
            selector = Selector.SIGNAL_LOSS
            tokens = [("link", "GPS")]
        else:
            selector = Selector.GENERAL
            tokens = [("sat_count", _int(r, "sat_count")), ("interval_s", _num(r, "interval_s"))]
    elif kind is SourceKind.WIFI_FRAME:
        selector = Selector.GENERAL
        frame = r.require("frame").upper()
        tokens = [("event", frame)]
        if "src" in r.fields:
            tokens.append(("src", r.fields["src"]))
        tokens.append(("count", _int(r, "count") if "count" in r.fields else 1))
    elif kind is SourceKind.NET_COUNTER:
        selector = Selector.GENERAL
        tokens = [
            ("event", "NET_PKT"),
            ("bytes", _int(r, "bytes")),
            ("count", _int(r, "packets")),
        ]
    elif kind is SourceKind.MFR_LOG:
        severity = r.fields.get("severity", "INFO").upper()
        rank = SEVERITIES.index(severity) if severity in SEVERITIES else 1
        emergency = rank >= SEVERITIES.index("EMERGENCY")
        selector = Selector.EMERGENCY if emergency else Selector.DEBUG
        tokens = [("severity", severity)]
        if "msg" in r.fields:
            tokens.append(("msg", r.fields["msg"]))
    else:
        raise UnknownSourceKind(f"no mapping for {kind!r}")

    # string values that would read back as numbers are coerced so the
    # event survives a log round trip unchanged
    tokens = [
        (k, parse_token_value(v) if isinstance(v, str) else v) for k, v in tokens
    ]
    return TelemetryEvent(r.timestamp, kin.speed_kmh, kin.heading_deg, kin.geo, selector, tuple(tokens))


@dataclass
class AdapterStats:
    read: int = 0
    normalized: int = 0
    dropped: int = 0
    error: Optional[str] = None


@dataclass
class IngestStats:
    adapters: dict[str, AdapterStats] = field(default_factory=dict)

    @property
    def read(self) -> int:
        return sum(a.read for a in self.adapters.values())

    @property
    def normalized(self) -> int:
        return sum(a.normalized for a in self.adapters.values())

    @property
    def dropped(self) -> int:
        return sum(a.dropped for a in self.adapters.values())


@dataclass
class Adapter:
    """A named record source. Registration order breaks same-second ties."""

    name: str
    kind: SourceKind
    records: Iterable[RawRecord]


def _guarded(adapter: Adapter, stats: AdapterStats, index: int) -> Iterator[tuple]:
    """Yield merge keys for one adapter, stopping cleanly on adapter failure."""
    last: Optional[Timestamp] = None
    seq = 0
    it = iter(adapter.records)
    while True:
        try:
            r = next(it)
        except StopIteration:
            return
        except Exception as exc:  # adapter failure ends this source only
            stats.read += 1
            stats.dropped += 1
            stats.error = f"{type(exc).__name__}: {exc}"
            logger.warning("adapter %s failed: %s", adapter.name, stats.error)
            return
        if r.kind is not adapter.kind or (last is not None and r.timestamp < last):
            stats.read += 1
            stats.dropped += 1
            continue
        last = r.timestamp
        yield (r.timestamp, index, seq, r)
        seq += 1


def run_pipeline(
    adapters: list[Adapter],
    sink: Callable[[TelemetryEvent], None],
    log: Callable[[str], object],
) -> IngestStats:
    """Merge adapters, normalize, write each event to ``log`` then ``sink``.

    Kinematics for a record come from the latest flight-state record at or
    before its timestamp; zeros until the first one arrives.
    """
    stats = IngestStats({a.name: AdapterStats() for a in adapters})
    names = [a.name for a in adapters]
    streams = [_guarded(a, stats.adapters[a.name], i) for i, a in enumerate(adapters)]
    merged = heapq.merge(*streams, key=lambda item: item[:3])
    kin = Kinematics()

    for _, group in itertools.groupby(merged, key=lambda item: item[0]):
        batch = list(group)
        # flight state for this second is applied before any record in it
        for _, _, _, r in batch:
            sample = _kinematics_or_none(r)
            if sample is not None:
                kin = sample
        for _, index, _, r in batch:
            a = stats.adapters[names[index]]
            a.read += 1
            try:
                event = normalize(r, kin)
            except (MissingField, ValueError) as exc:
                a.dropped += 1
                logger.debug("dropped %s record: %s", r.kind.value, exc)
                continue
            line = format_event(event)
            try:
                log(line)
            except Exception as exc:
                a.dropped += 1
                raise SinkUnavailable(f"log write failed: {exc}", stats) from exc
            try:
                sink(event)
            except Exception as exc:
                a.normalized += 1
                raise SinkUnavailable(f"downstream sink failed: {exc}", stats) from exc
            a.normalized += 1
    return stats


def _kinematics_or_none(r: RawRecord) -> Optional[Kinematics]:
    try:
        return Kinematics.from_record(r)
    except ValueError:
        return None
