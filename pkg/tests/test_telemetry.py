import pytest
from hypothesis import given, strategies as st

from dronesense.telemetry import (
    BadFieldCount,
    BadKeyValueToken,
    BadNumericField,
    GeoPoint,
    MalformedTimestamp,
    Selector,
    TelemetryEvent,
    TelemetryParseError,
    Timestamp,
    UnknownSelector,
    format_event,
    format_number,
    parse_event,
    parse_log,
)

LINE = "2020-03-01T19:40:08Z 36.0 90.0 39.1,-76.8,120.0 FREQUENCY freq_mhz=1575.42 power_db=-110.5"


def test_parse_known_line():
    e = parse_event(LINE)
    assert str(e.timestamp) == "2020-03-01T19:40:08Z"
    assert e.speed_kmh == 36.0 and e.heading_deg == 90.0
    assert e.geo == GeoPoint(39.1, -76.8, 120.0)
    assert e.selector is Selector.FREQUENCY
    assert e.get("freq_mhz") == 1575.42
    assert format_event(e) == LINE


def test_token_types():
    e = parse_event("2020-03-01T19:40:08Z 0.0 0.0 0.0,0.0,0.0 GENERAL count=5 event=DEAUTH x=1.5")
    assert e.get("count") == 5 and isinstance(e.get("count"), int)
    assert e.get("event") == "DEAUTH"
    assert e.numeric_tokens() == (("count", 5.0), ("x", 1.5))


@pytest.mark.parametrize("line,err,field", [
    ("2020-13-01T00:00:00Z 0.0 0.0 0,0,0 DEBUG", MalformedTimestamp, "timestamp"),
    ("2020-03-01 0.0 0.0 0,0,0 DEBUG", MalformedTimestamp, "timestamp"),
    ("2020-03-01T00:00:00Z 0.0 0.0 0,0,0 BOGUS", UnknownSelector, "selector"),
    ("2020-03-01T00:00:00Z 0.0 0.0 0,0,0", BadFieldCount, "line"),
    ("2020-03-01T00:00:00Z 0.0 0.0 0,0 DEBUG", BadFieldCount, "geo"),
    ("2020-03-01T00:00:00Z 0.0 0.0 0,0,0 DEBUG novalue", BadKeyValueToken, "additional"),
    ("2020-03-01T00:00:00Z 0.0 0.0 0,0,0 DEBUG 1x=2", BadKeyValueToken, "additional"),
    ("2020-03-01T00:00:00Z -1.0 0.0 0,0,0 DEBUG", BadNumericField, "speed_kmh"),
    ("2020-03-01T00:00:00Z 1.0 360.0 0,0,0 DEBUG", BadNumericField, "heading_deg"),
    ("2020-03-01T00:00:00Z nan 0.0 0,0,0 DEBUG", BadNumericField, "speed_kmh"),
    ("2020-03-01T00:00:00Z 1.0 0.0 91,0,0 DEBUG", BadNumericField, "geo"),
])
def test_parse_errors_name_the_field(line, err, field):
    with pytest.raises(err) as info:
        parse_event(line, line_no=7)
    assert info.value.field == field
    assert info.value.line_no == 7
    assert "line 7" in str(info.value)


def test_parse_log_skips_blank_lines_and_numbers_errors():
    events = list(parse_log([LINE, "", "  ", LINE]))
    assert len(events) == 2
    with pytest.raises(TelemetryParseError) as info:
        list(parse_log([LINE, "", "garbage"]))
    assert info.value.line_no == 3


def test_event_rejects_numeric_looking_strings():
    with pytest.raises(ValueError):
        TelemetryEvent(Timestamp(0), 0.0, 0.0, GeoPoint(0, 0), Selector.DEBUG, (("k", "12"),))


def test_timestamp_bounds():
    assert str(Timestamp.parse("1000-01-01T00:00:00Z")) == "1000-01-01T00:00:00Z"
    assert str(Timestamp.parse("9999-12-31T23:59:59Z")) == "9999-12-31T23:59:59Z"
    with pytest.raises(ValueError):
        Timestamp(253402300800)
    assert Timestamp(10) - Timestamp(4) == 6


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_number_round_trips(x):
    text = format_number(x)
    assert "e" not in text.lower() and "." in text
    assert float(text) == x


epochs = st.integers(-30610224000, 253402300799)
keys = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)
strings = st.from_regex(r"[A-Za-z_:\-./][A-Za-z0-9_:\-./]{0,8}", fullmatch=True).filter(
    lambda s: not s.lstrip("-").replace(".", "", 1).isdigit()
)
values = st.one_of(st.integers(-10**12, 10**12), st.floats(allow_nan=False, allow_infinity=False, width=64), strings)


@st.composite
def events(draw):
    return TelemetryEvent(
        Timestamp(draw(epochs)),
        draw(st.floats(0, 1e4)),
        draw(st.floats(0, 360, exclude_max=True)),
        GeoPoint(draw(st.floats(-90, 90)), draw(st.floats(-180, 180)), draw(st.floats(-1e5, 1e5))),
        draw(st.sampled_from(list(Selector))),
        tuple(draw(st.lists(st.tuples(keys, values), max_size=5))),
    )


@given(events())
def test_round_trip_property(e):
    assert parse_event(format_event(e)) == e


@given(st.text(max_size=120))
def test_parse_is_total(line):
    try:
        e = parse_event(line)
    except TelemetryParseError:
        return
    assert isinstance(e, TelemetryEvent)


def test_huge_token_is_a_parse_error():
    with pytest.raises(BadKeyValueToken):
        parse_event("2020-03-01T00:00:00Z 0.0 0.0 0,0,0 DEBUG x=" + "9" * 400 + ".0")
