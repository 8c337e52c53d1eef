"""Normalized telemetry events and the whitespace-separated log line format.

A log line looks like::

    2020-03-01T19:40:08Z 12.5 90.0 39.1,-76.8,120.0 FREQUENCY freq_mhz=1575.42 power_db=-115.0

Fields are timestamp, speed (km/h), heading (degrees), ``lat,lon,alt``,
selector, then any number of ``key=value`` tokens.
"""

from __future__ import annotations

import calendar
import math
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Iterable, Iterator, Optional, Union

TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_TS_RE = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z", re.ASCII)
_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_INT_RE = re.compile(r"-?\d+", re.ASCII)
_FLOAT_RE = re.compile(r"-?\d+\.\d+", re.ASCII)

MIN_EPOCH = -30610224000  # 1000-01-01T00:00:00Z
MAX_EPOCH = 253402300799  # 9999-12-31T23:59:59Z

TokenValue = Union[int, float, str]


class TelemetryParseError(ValueError):
    """Base class for log line parse failures."""

    def __init__(self, message: str, field: str, line_no: Optional[int] = None):
        self.field = field
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{field}: {message}")


class MalformedTimestamp(TelemetryParseError):
    pass


class UnknownSelector(TelemetryParseError):
    pass


class BadFieldCount(TelemetryParseError):
    pass


class BadKeyValueToken(TelemetryParseError):
    pass


class BadNumericField(TelemetryParseError):
    pass


def format_number(x: float) -> str:
    """Shortest round-tripping positional rendering with at least one decimal."""
    if not math.isfinite(x):
        raise ValueError(f"non-finite value {x!r}")
    text = format(Decimal(repr(float(x))), "f")
    if "." not in text:
        text += ".0"
    return text


@dataclass(frozen=True, order=True, slots=True)
class Timestamp:
    """UTC instant at one-second resolution, stored as Unix epoch seconds."""

    epoch: int

    def __post_init__(self):
        # four-digit years only, so the text form stays fixed-width
        if not MIN_EPOCH <= self.epoch <= MAX_EPOCH:
            raise ValueError(f"epoch {self.epoch} outside years 1000-9999")

    @classmethod
    def parse(cls, text: str) -> "Timestamp":
        if not _TS_RE.fullmatch(text):
            raise ValueError(f"bad timestamp {text!r}")
        try:
            parsed = time.strptime(text, TS_FORMAT)
        except ValueError as exc:
            raise ValueError(f"bad timestamp {text!r}") from exc
        return cls(calendar.timegm(parsed))

    def __str__(self) -> str:
        return time.strftime(TS_FORMAT, time.gmtime(self.epoch))

    def shifted(self, seconds: int) -> "Timestamp":
        return Timestamp(self.epoch + seconds)

    def __sub__(self, other: "Timestamp") -> int:
        return self.epoch - other.epoch


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        for name in ("lat", "lon", "alt"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range")

    def __str__(self) -> str:
        return ",".join(format_number(v) for v in (self.lat, self.lon, self.alt))


class Selector(str, Enum):
    DEBUG = "DEBUG"
    EMERGENCY = "EMERGENCY"
    FREQUENCY = "FREQUENCY"
    GENERAL = "GENERAL"
    SIGNAL_LOSS = "SIGNAL_LOSS"

    def __str__(self) -> str:
        return self.value


def _looks_numeric(text: str) -> bool:
    return bool(_INT_RE.fullmatch(text) or _FLOAT_RE.fullmatch(text))


def format_token_value(value: TokenValue) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean token values are not supported")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_number(value)
    return value


def parse_token_value(text: str) -> TokenValue:
    if _INT_RE.fullmatch(text):
        return int(text)
    if _FLOAT_RE.fullmatch(text):
        return float(text)
    return text


def _check_token(key: str, value: TokenValue) -> None:
    if not isinstance(key, str) or not _KEY_RE.fullmatch(key):
        raise ValueError(f"bad token key {key!r}")
    if isinstance(value, bool):
        raise ValueError(f"{key}: boolean values are not supported")
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError(f"{key}: non-finite value")
    if isinstance(value, str):
        if not value or any(c.isspace() for c in value):
            raise ValueError(f"{key}: string value must be non-empty without whitespace")
        if _looks_numeric(value):
            raise ValueError(f"{key}: string value {value!r} would parse as a number")
    elif not isinstance(value, (int, float)):
        raise ValueError(f"{key}: unsupported value type {type(value).__name__}")


@dataclass(frozen=True, slots=True)
class TelemetryEvent:
    """One normalized observation; a single log line."""

    timestamp: Timestamp
    speed_kmh: float
    heading_deg: float
    geo: GeoPoint
    selector: Selector
    additional: tuple[tuple[str, TokenValue], ...] = field(default=())

    def __post_init__(self):
        speed = float(self.speed_kmh)
        heading = float(self.heading_deg)
        if not math.isfinite(speed) or speed < 0:
            raise ValueError(f"speed_kmh must be finite and >= 0, got {speed}")
        if not math.isfinite(heading) or not 0.0 <= heading < 360.0:
            raise ValueError(f"heading_deg must be in [0, 360), got {heading}")
        object.__setattr__(self, "speed_kmh", speed)
        object.__setattr__(self, "heading_deg", heading)
        object.__setattr__(self, "selector", Selector(self.selector))
        tokens = tuple((k, v) for k, v in self.additional)
        for k, v in tokens:
            _check_token(k, v)
        object.__setattr__(self, "additional", tokens)

    def get(self, key: str, default: Optional[TokenValue] = None) -> Optional[TokenValue]:
        """First value for ``key`` in the additional tokens."""
        for k, v in self.additional:
            if k == key:
                return v
        return default

    def numeric_tokens(self) -> tuple[tuple[str, float], ...]:
        return tuple(
            (k, float(v)) for k, v in self.additional if isinstance(v, (int, float))
        )


def format_event(e: TelemetryEvent) -> str:
    parts = [
        str(e.timestamp),
        format_number(e.speed_kmh),
        format_number(e.heading_deg),
        str(e.geo),
        e.selector.value,
    ]
    parts.extend(f"{k}={format_token_value(v)}" for k, v in e.additional)
    return " ".join(parts)


def _parse_float(text: str, name: str, line_no: Optional[int]) -> float:
    try:
        value = float(text)
    except ValueError:
        raise BadNumericField(f"not a number: {text!r}", name, line_no) from None
    if not math.isfinite(value):
        raise BadNumericField(f"non-finite: {text!r}", name, line_no)
    return value


def parse_event(line: str, line_no: Optional[int] = None) -> TelemetryEvent:
    """Parse one log line. Raises a :class:`TelemetryParseError` subclass on bad input."""
    if not isinstance(line, str):
        raise BadFieldCount("line is not text", "line", line_no)
    fields = line.split()
    if len(fields) < 5:
        raise BadFieldCount(f"expected at least 5 fields, got {len(fields)}", "line", line_no)
    ts_text, speed_text, heading_text, geo_text, sel_text, *rest = fields

    try:
        ts = Timestamp.parse(ts_text)
    except ValueError:
        raise MalformedTimestamp(f"bad timestamp {ts_text!r}", "timestamp", line_no) from None

    speed = _parse_float(speed_text, "speed_kmh", line_no)
    if speed < 0:
        raise BadNumericField(f"negative speed {speed_text!r}", "speed_kmh", line_no)
    heading = _parse_float(heading_text, "heading_deg", line_no)
    if not 0.0 <= heading < 360.0:
        raise BadNumericField(f"heading out of range {heading_text!r}", "heading_deg", line_no)

    geo_parts = geo_text.split(",")
    if len(geo_parts) != 3:
        raise BadFieldCount(f"geo needs lat,lon,alt, got {geo_text!r}", "geo", line_no)
    lat, lon, alt = (_parse_float(p, "geo", line_no) for p in geo_parts)
    try:
        geo = GeoPoint(lat, lon, alt)
    except ValueError as exc:
        raise BadNumericField(str(exc), "geo", line_no) from None

    try:
        selector = Selector(sel_text)
    except ValueError:
        raise UnknownSelector(f"unknown selector {sel_text!r}", "selector", line_no) from None

    tokens = []
    for tok in rest:
        key, sep, raw = tok.partition("=")
        if not sep or not _KEY_RE.fullmatch(key) or not raw:
            raise BadKeyValueToken(f"bad token {tok!r}", "additional", line_no)
        value = parse_token_value(raw)
        if isinstance(value, float) and not math.isfinite(value):
            raise BadKeyValueToken(f"non-finite value in {tok!r}", "additional", line_no)
        tokens.append((key, value))

    return TelemetryEvent(ts, speed, heading, geo, selector, tuple(tokens))


def parse_log(lines: Iterable[str]) -> Iterator[TelemetryEvent]:
    """Parse a log, skipping blank lines. Line numbers in errors are 1-based."""
    for no, line in enumerate(lines, start=1):
        if line.strip():
            yield parse_event(line, no)


def validate_drone_id(drone_id: str) -> str:
    if not drone_id or any(c.isspace() for c in drone_id):
        raise ValueError(f"bad drone id {drone_id!r}")
    return drone_id
