import pytest
from hypothesis import given, strategies as st

from dronesense.preprocess import (
    Adapter,
    BadRecordLine,
    Kinematics,
    MissingField,
    RawRecord,
    SinkUnavailable,
    SourceKind,
    UnknownSourceKind,
    format_raw_record,
    normalize,
    parse_raw_record,
    run_pipeline,
)
from dronesense.telemetry import GeoPoint, Selector, Timestamp, parse_event

T0 = Timestamp.parse("2020-03-01T19:40:08Z")
KIN = Kinematics(36.0, 90.0, GeoPoint(39.1, -76.8, 120.0))


def rec(kind, t, **fields):
    return RawRecord(kind, T0.shifted(t), {k: str(v) for k, v in fields.items()})


def flight(t, speed=36.0):
    return rec(SourceKind.MFR_LOG, t, severity="INFO", msg="FLIGHT_STATE", speed_kmh=speed,
               heading_deg=90.0, lat=39.1, lon=-76.8, alt=120.0)


def test_normalize_rf():
    e = normalize(rec(SourceKind.RF_SAMPLE, 0, freq_mhz=1575.42, power_db=-110.0), KIN)
    assert e.selector is Selector.FREQUENCY
    assert e.additional == (("freq_mhz", 1575.42), ("power_db", -110.0))
    assert e.speed_kmh == 36.0


def test_normalize_gps_fix_lost_is_signal_loss():
    e = normalize(rec(SourceKind.GPS_STATUS, 0, fix="false"), KIN)
    assert e.selector is Selector.SIGNAL_LOSS and e.get("link") == "GPS"
    e = normalize(rec(SourceKind.GPS_STATUS, 0, fix="true", sat_count=6, interval_s=1.02), KIN)
    assert e.selector is Selector.GENERAL and e.get("sat_count") == 6


def test_normalize_wifi_net_mfr():
    e = normalize(rec(SourceKind.WIFI_FRAME, 0, frame="deauth", src="AP", count=7), KIN)
    assert (e.get("event"), e.get("count")) == ("DEAUTH", 7)
    e = normalize(rec(SourceKind.NET_COUNTER, 0, packets=10, bytes=9000), KIN)
    assert (e.get("event"), e.get("count"), e.get("bytes")) == ("NET_PKT", 10, 9000)
    assert normalize(rec(SourceKind.MFR_LOG, 0, severity="EMERGENCY"), KIN).selector is Selector.EMERGENCY
    assert normalize(rec(SourceKind.MFR_LOG, 0, severity="WARN"), KIN).selector is Selector.DEBUG


def test_missing_field():
    with pytest.raises(MissingField) as info:
        normalize(rec(SourceKind.RF_SAMPLE, 0, freq_mhz=1.0), KIN)
    assert "power_db" in str(info.value)


def test_raw_record_lines():
    r = parse_raw_record("RF_SAMPLE 2020-03-01T19:40:08Z freq_mhz=1575.42 power_db=-110.0")
    assert r.kind is SourceKind.RF_SAMPLE and r.fields["power_db"] == "-110.0"
    assert parse_raw_record(format_raw_record(r)) == r
    with pytest.raises(UnknownSourceKind):
        parse_raw_record("RADAR 2020-03-01T19:40:08Z x=1")
    with pytest.raises(BadRecordLine):
        parse_raw_record("RF_SAMPLE 2020-03-01T19:40:08Z broken")


def _collect(adapters):
    events, lines = [], []
    stats = run_pipeline(adapters, events.append, lines.append)
    return events, lines, stats


def test_merge_order_and_kinematics():
    adapters = [
        Adapter("mfr", SourceKind.MFR_LOG, [flight(0, 10.0), flight(1, 20.0)]),
        Adapter("rf", SourceKind.RF_SAMPLE, [rec(SourceKind.RF_SAMPLE, t, freq_mhz=1.0, power_db=-1.0) for t in (0, 1)]),
    ]
    # the RF adapter is registered first so it wins ties; kinematics still apply
    events, lines, stats = _collect(adapters[::-1])
    assert [e.selector for e in events] == [Selector.FREQUENCY, Selector.DEBUG] * 2
    assert [e.speed_kmh for e in events] == [10.0, 10.0, 20.0, 20.0]
    assert [parse_event(line) for line in lines] == events
    assert (stats.read, stats.normalized, stats.dropped) == (4, 4, 0)


def test_bad_records_are_dropped_and_counted():
    rf = [
        rec(SourceKind.RF_SAMPLE, 0, freq_mhz=1.0, power_db=-1.0),
        rec(SourceKind.RF_SAMPLE, 1, freq_mhz=1.0),  # missing power
        rec(SourceKind.GPS_STATUS, 2, fix="true"),  # wrong kind for this adapter
        rec(SourceKind.RF_SAMPLE, 3, freq_mhz=1.0, power_db=-1.0),
        rec(SourceKind.RF_SAMPLE, 2, freq_mhz=1.0, power_db=-1.0),  # out of order
    ]
    events, _, stats = _collect([Adapter("rf", SourceKind.RF_SAMPLE, rf)])
    assert len(events) == 2
    assert (stats.read, stats.normalized, stats.dropped) == (5, 2, 3)


def test_failing_adapter_stops_only_itself():
    def broken():
        yield rec(SourceKind.NET_COUNTER, 0, packets=1, bytes=1)
        raise OSError("device gone")

    rf = [rec(SourceKind.RF_SAMPLE, t, freq_mhz=1.0, power_db=-1.0) for t in range(3)]
    events, _, stats = _collect([
        Adapter("net", SourceKind.NET_COUNTER, broken()),
        Adapter("rf", SourceKind.RF_SAMPLE, rf),
    ])
    assert len(events) == 4
    assert stats.adapters["net"].error.startswith("OSError")
    assert stats.read == stats.normalized + stats.dropped


def test_log_failure_raises_sink_unavailable_with_stats():
    def bad_log(line):
        raise OSError("disk full")

    rf = [rec(SourceKind.RF_SAMPLE, 0, freq_mhz=1.0, power_db=-1.0)]
    seen = []
    with pytest.raises(SinkUnavailable) as info:
        run_pipeline([Adapter("rf", SourceKind.RF_SAMPLE, rf)], seen.append, bad_log)
    assert seen == []  # never forwarded without a log write
    assert info.value.stats.dropped == 1


@given(st.lists(st.tuples(st.integers(0, 30), st.sampled_from(["rf", "net", "bad"])), max_size=40))
def test_stats_conservation(items):
    items.sort()
    streams = {"rf": [], "net": []}
    for t, kind in items:
        if kind == "rf":
            streams["rf"].append(rec(SourceKind.RF_SAMPLE, t, freq_mhz=1.0, power_db=-1.0))
        elif kind == "net":
            streams["net"].append(rec(SourceKind.NET_COUNTER, t, packets=2, bytes=3))
        else:
            streams["net"].append(rec(SourceKind.NET_COUNTER, t, packets="x", bytes=3))
    events, lines, stats = _collect([
        Adapter("rf", SourceKind.RF_SAMPLE, streams["rf"]),
        Adapter("net", SourceKind.NET_COUNTER, streams["net"]),
    ])
    assert stats.read == len(items) == stats.normalized + stats.dropped
    assert len(events) == len(lines) == stats.normalized
    assert [e.timestamp for e in events] == sorted(e.timestamp for e in events)
