import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dronesense.analytics import Alert
from dronesense.rules import ActionLevel
from dronesense.swarm import (
    AuditRepository,
    CollinearReceivers,
    Fabric,
    LogForwarder,
    MessageKind,
    ParallelBearings,
    SwarmMessage,
    TriangObs,
    bearing_locate,
    bearing_to,
    broadcast_group,
    format_obs,
    format_topology,
    parse_obs,
    parse_topology,
    read_obs,
    tdoa_arrivals,
    tdoa_locate,
)
from dronesense.telemetry import Timestamp

TOPO = """
RADIUS 500
DRONE A 0 0
DRONE B 150 0
DRONE C 75 130
DRONE Z 5000 0
"""


def group_alert(level=ActionLevel.GROUP):
    return Alert("A", "ddos", level, Timestamp(0), Timestamp(0))


def test_topology_parse_and_format():
    topo = parse_topology(TOPO + "LINK C DOWN_AT 40\nLINK B LATENCY 2\n")
    assert topo.drones == ["A", "B", "C", "Z"]
    assert topo.neighbors("A") == ["B", "C"]
    assert topo.link_up("C", 39) and not topo.link_up("C", 40)
    assert parse_topology(format_topology(topo)) == topo


def test_broadcast_reaches_in_radius_peers_next_round():
    topo = parse_topology(TOPO)
    fabric = Fabric(topo)
    report = broadcast_group(topo, "A", group_alert(), tick=5, fabric=fabric)
    assert report.receivers == ["B", "C"] and report.rounds == 1
    assert fabric.deliver(5) == {}
    inbox = fabric.deliver(6)
    assert sorted(inbox) == ["B", "C"]
    assert inbox["B"][0].kind is MessageKind.GROUP_ALERT


def test_broadcast_respects_links_and_latency():
    topo = parse_topology(TOPO + "LINK C DOWN_AT 3\nLINK B LATENCY 3\n")
    report = broadcast_group(topo, "A", group_alert(ActionLevel.EMERGENCY), tick=3)
    assert report.deliveries == (("B", 6),)
    topo.destroyed.add("A")
    assert broadcast_group(topo, "A", group_alert(), tick=0).deliveries == ()


@pytest.mark.parametrize("level", [ActionLevel.INFO, ActionLevel.ELEVATED])
def test_only_group_or_emergency_broadcast(level):
    with pytest.raises(ValueError):
        broadcast_group(parse_topology(TOPO), "A", group_alert(level))


def test_unicast_and_destroyed_receiver():
    topo = parse_topology(TOPO)
    fabric = Fabric(topo)
    obs = TriangObs(1.0, 2.0, arrival_s=0.5, sender="B")
    assert fabric.unicast(SwarmMessage(MessageKind.TRIANG_OBS, "B", 0, obs, "A"), "A") == 1
    topo.destroyed.add("A")
    assert fabric.deliver(1) == {}


def test_log_forwarding_keeps_prefix_when_link_drops():
    repo = AuditRepository()
    fwd = LogForwarder("C")
    for tick in range(6):
        fwd.write(f"line{tick}")
        fwd.forward(repo, link_up=tick < 3, tick=tick)
    assert repo.lines_for("C") == ["line0", "line1", "line2"]
    assert repo.high_water("C") == 3
    fwd.destroy()
    fwd.write("late")
    assert fwd.forward(repo, link_up=True, tick=7) == 3  # high-water mark is unchanged
    assert len(repo) == 3
    assert repo.dump().splitlines()[0] == "C line0"


def test_observation_lines():
    o = parse_obs("TRIANG_OBS B 10.5 -3.0 arrival_s=0.000001")
    assert (o.x, o.y, o.arrival_s, o.sender) == (10.5, -3.0, 1e-06, "B")
    assert parse_obs(format_obs(o)) == o
    obs, speed = read_obs("SPEED 340\nTRIANG_OBS A 0 0 bearing_deg=45\n# note\n")
    assert speed == 340.0 and obs[0].bearing_deg == 45.0
    with pytest.raises(ValueError):
        parse_obs("TRIANG_OBS A 0 0 range=4")
    with pytest.raises(ValueError):
        TriangObs(0, 0)


# --- localization --------------------------------------------------------------

SQUARE = [(-100.0, -100.0), (100.0, -100.0), (100.0, 100.0), (-100.0, 100.0)]


def obs_for(emitter, receivers=SQUARE, c=299_792_458.0, t0=0.0):
    return [TriangObs(x, y, arrival_s=t) for (x, y), t in zip(receivers, tdoa_arrivals(emitter, receivers, c, t0))]


def test_tdoa_symmetric_centre():
    est = tdoa_locate(obs_for((0.0, 0.0)))
    assert math.hypot(est.x, est.y) < 1e-6 and est.converged


def test_tdoa_unknown_emission_time_cancels():
    a = tdoa_locate(obs_for((30.0, -40.0), t0=0.0))
    b = tdoa_locate(obs_for((30.0, -40.0), t0=123.456))
    assert math.hypot(a.x - b.x, a.y - b.y) < 1e-3


def test_tdoa_acoustic_speed():
    est = tdoa_locate(obs_for((12.0, 55.0), c=343.0), c=343.0)
    assert est.error_to(12.0, 55.0) < 1e-6


def test_tdoa_degenerate_geometry():
    with pytest.raises(CollinearReceivers):
        tdoa_locate(obs_for((5.0, 5.0), receivers=[(0, 0), (10, 0), (20, 0), (30, 0)]))
    with pytest.raises(CollinearReceivers):
        tdoa_locate(obs_for((5.0, 5.0))[:2])


@given(st.floats(-90, 90), st.floats(-90, 90))
def test_tdoa_inside_hull_property(x, y):
    est = tdoa_locate(obs_for((x, y)))
    assert est.error_to(x, y) < 1e-3


def test_bearing_analytic_case():
    est = bearing_locate([TriangObs(0, 0, bearing_deg=90), TriangObs(100, 100, bearing_deg=180)])
    assert est.x == pytest.approx(100.0, abs=1e-9) and est.y == pytest.approx(0.0, abs=1e-9)


def test_bearing_parallel():
    with pytest.raises(ParallelBearings):
        bearing_locate([TriangObs(0, 0, bearing_deg=0), TriangObs(10, 0, bearing_deg=180)])
    with pytest.raises(ParallelBearings):
        bearing_locate([TriangObs(0, 0, bearing_deg=0)])


def test_bearing_to_convention():
    assert bearing_to((0, 0), (0, 10)) == 0.0
    assert bearing_to((0, 0), (10, 0)) == 90.0
    assert bearing_to((0, 0), (0, -10)) == 180.0
    assert bearing_to((0, 0), (-10, 0)) == 270.0


@given(st.lists(st.tuples(st.floats(-400, 400), st.floats(-400, 400)), min_size=3, max_size=5),
       st.tuples(st.floats(-400, 400), st.floats(-400, 400)),
       st.tuples(st.floats(-2000, 2000), st.floats(-2000, 2000)))
def test_bearing_translation_invariance(receivers, emitter, shift):
    pts = np.array(receivers)
    if min(np.hypot(*(pts - emitter).T)) < 1.0:
        return
    obs = [TriangObs(x, y, bearing_deg=bearing_to((x, y), emitter)) for x, y in receivers]
    try:
        base = bearing_locate(obs)
    except ParallelBearings:
        return
    moved = bearing_locate([TriangObs(o.x + shift[0], o.y + shift[1], bearing_deg=o.bearing_deg) for o in obs])
    assert moved.x - shift[0] == pytest.approx(base.x, abs=1e-6)
    assert moved.y - shift[1] == pytest.approx(base.y, abs=1e-6)
