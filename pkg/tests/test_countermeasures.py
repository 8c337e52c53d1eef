import pytest
from hypothesis import given, strategies as st

from dronesense.analytics import Alert, Mode
from dronesense.countermeasures import (
    DEFAULT_STATE,
    GNSS_ORDER,
    CountermeasureState,
    Policy,
    UnknownBand,
    apply_policy,
    format_action,
    gnss_band_lookup,
)
from dronesense.rules import ActionLevel
from dronesense.telemetry import Timestamp


def alert(rule, level, detail=()):
    return Alert("A", rule, level, Timestamp(0), Timestamp(0), 1, detail)


def test_spoof_rotates_gnss_and_goes_emergency():
    state, actions = apply_policy(DEFAULT_STATE, alert("gps_spoof", ActionLevel.EMERGENCY), Mode.EVASIVE)
    assert state.active_gnss == "GALILEO" and state.agc_enabled
    assert state.comm_channel == "3G" and state.capture_mode == "STREAMING"
    assert {a.field for a in actions} == {"active_gnss", "agc_enabled", "comm_channel", "capture_mode"}
    line = format_action(Timestamp(0), "A", actions[0])
    assert line == "1970-01-01T00:00:00Z CM A active_gnss GPS -> GALILEO cause=gps_spoof"


def test_rotation_wraps_through_all_constellations():
    state = DEFAULT_STATE
    seen = []
    for _ in range(len(GNSS_ORDER)):
        state, _ = apply_policy(state, alert("sat_count_anomaly", ActionLevel.EMERGENCY), Mode.EVASIVE)
        seen.append(state.active_gnss)
    assert seen == ["GALILEO", "BEIDOU", "IRNSS", "GLONASS", "GPS"]


def test_lost_gps_link_rotates_only_when_elevated():
    lost = alert("lost_link", ActionLevel.INFO, ("link=GPS",))
    state, _ = apply_policy(DEFAULT_STATE, lost, Mode.MONITOR)
    assert state.active_gnss == "GPS" and state.capture_mode == "ELEVATED_CAPTURE"
    state, _ = apply_policy(DEFAULT_STATE, lost, Mode.ELEVATED)
    assert state.active_gnss == "GALILEO"


def test_return_to_normal_restores_defaults():
    state, _ = apply_policy(DEFAULT_STATE, alert("gps_spoof", ActionLevel.EMERGENCY), Mode.EVASIVE)
    state, actions = apply_policy(state, None, Mode.NORMAL, previous_mode=Mode.MONITOR)
    assert state == DEFAULT_STATE and all(a.cause == "mode:Normal" for a in actions)


def test_alternate_policy():
    policy = Policy(gnss_order=("GPS", "GLONASS"), emergency_channel="SMS")
    state, _ = apply_policy(DEFAULT_STATE, alert("gps_spoof", ActionLevel.EMERGENCY), Mode.EVASIVE, policy=policy)
    assert (state.active_gnss, state.comm_channel) == ("GLONASS", "SMS")


def test_band_lookup():
    assert gnss_band_lookup("GPS", "L1") == 1575.42
    with pytest.raises(UnknownBand):
        gnss_band_lookup("GALILEO", "E6")


def test_state_validation():
    with pytest.raises(ValueError):
        CountermeasureState(comm_channel="CARRIER_PIGEON")


@given(st.lists(st.tuples(st.sampled_from(["gps_spoof", "lost_link", "ddos", "wifi_deauth", None]),
                          st.sampled_from(list(ActionLevel)), st.sampled_from(list(Mode))), max_size=30))
def test_policy_is_pure_and_keeps_forwarding(steps):
    state = DEFAULT_STATE
    prev = Mode.NORMAL
    for rule, level, mode in steps:
        a = alert(rule, level, ("link=GPS",)) if rule else None
        first = apply_policy(state, a, mode, prev)
        assert apply_policy(state, a, mode, prev) == first
        new, actions = first
        for act in actions:
            assert getattr(state, act.field) == act.old and getattr(new, act.field) == act.new
        assert new.log_forwarding
        state, prev = new, mode
