"""Deterministic attack scenarios: spec files, seeded noise, raw record streams.

Scenario file: ``key value`` lines plus structured lines::

    name gps_spoof
    seed 7
    duration_s 600
    start 2020-03-01T19:40:08Z
    origin 39.1 -76.8 120.0
    RADIUS 500
    DRONE A 0 0
    LINK C DOWN_AT 40
    DESTROY C 60
    LEG 0 36 90                 # from t=0 s: 36 km/h heading 90 deg
    ATTACK GPS_SPOOF 120 180 target=A emitter_x=1080 emitter_y=120
    EXPECT latency gps_spoof 5

All randomness comes from a Lehmer generator (modulus 2^31-1, multiplier
48271) so other implementations can reproduce the streams exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .preprocess import Adapter, RawRecord, SourceKind, format_raw_record
from .swarm import FleetTopology, apply_topology_line, format_topology
from .telemetry import Timestamp, format_number, validate_drone_id

LCG_MODULUS = 2**31 - 1
LCG_MULTIPLIER = 48271
EARTH_RADIUS_M = 6_371_000.0

ATTACK_KINDS = ("GPS_JAM", "GPS_SPOOF", "WIFI_DEAUTH", "DDOS", "NONE")

GPS_L1_MHZ = 1575.42
GPS_L2_MHZ = 1227.6
WIFI_MHZ = 2437.0

# adapter registration order; flight state first
ADAPTERS = (
    ("mfr", SourceKind.MFR_LOG),
    ("rf", SourceKind.RF_SAMPLE),
    ("gps", SourceKind.GPS_STATUS),
    ("wifi", SourceKind.WIFI_FRAME),
    ("net", SourceKind.NET_COUNTER),
)


class InvalidSpec(ValueError):
    pass


class Lcg:
    """Park-Miller minimal standard generator."""

    def __init__(self, seed: int):
        state = seed % LCG_MODULUS
        self.state = state if state else 1

    def next(self) -> int:
        self.state = (self.state * LCG_MULTIPLIER) % LCG_MODULUS
        return self.state

    def random(self) -> float:
        """Uniform in (0, 1)."""
        return self.next() / LCG_MODULUS

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return lo + min(int(self.random() * (hi - lo + 1)), hi - lo)


def derive_seed(seed: int, *salt: int) -> int:
    """Mix a scenario seed with stream indices into a fresh LCG seed."""
    value = seed % LCG_MODULUS
    for s in salt:
        value = (value * 1_000_003 + s * 7919 + 1) % LCG_MODULUS
    return value


@dataclass
class Attack:
    kind: str
    start_s: int
    end_s: int
    target: str
    params: dict = field(default_factory=dict)

    def active(self, t: int) -> bool:
        return self.start_s <= t < self.end_s

    def param(self, key: str, default: float) -> float:
        return float(self.params.get(key, default))

    @property
    def emitter(self) -> Optional[tuple[float, float]]:
        if "emitter_x" in self.params and "emitter_y" in self.params:
            return float(self.params["emitter_x"]), float(self.params["emitter_y"])
        return None


@dataclass(frozen=True)
class Leg:
    start_s: int
    speed_kmh: float
    heading_deg: float


@dataclass
class ScenarioSpec:
    name: str = "scenario"
    seed: int = 1
    duration_s: int = 600
    start: Timestamp = field(default_factory=lambda: Timestamp.parse("2020-03-01T19:40:08Z"))
    origin: tuple[float, float, float] = (39.1, -76.8, 120.0)
    topology: FleetTopology = field(default_factory=FleetTopology)
    legs: list[Leg] = field(default_factory=list)
    attacks: list[Attack] = field(default_factory=list)
    destroy: dict[str, int] = field(default_factory=dict)
    expectations: list[str] = field(default_factory=list)

    @property
    def drones(self) -> list[str]:
        return self.topology.drones

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise InvalidSpec("duration_s must be positive")
        if not self.drones:
            raise InvalidSpec("scenario needs at least one DRONE")
        for a in self.attacks:
            if a.kind not in ATTACK_KINDS:
                raise InvalidSpec(f"unknown attack kind {a.kind!r}")
            if not 0 <= a.start_s <= a.end_s <= self.duration_s:
                raise InvalidSpec(f"attack {a.kind} interval outside [0, {self.duration_s}]")
            if a.kind != "NONE" and a.target not in self.drones:
                raise InvalidSpec(f"attack target {a.target!r} is not a drone")
        for d in list(self.destroy) + list(self.topology.down_at):
            if d not in self.drones:
                raise InvalidSpec(f"unknown drone {d!r}")
        starts = [leg.start_s for leg in self.legs]
        if starts != sorted(starts):
            raise InvalidSpec("LEG lines must be in start order")
        for leg in self.legs:
            if leg.speed_kmh < 0:
                raise InvalidSpec("LEG speed must be >= 0")

    def timestamp(self, t: int) -> Timestamp:
        return self.start.shifted(t)

    def alive(self, drone: str, t: int) -> bool:
        d = self.destroy.get(drone)
        return d is None or t < d

    def leg_at(self, t: int) -> Leg:
        current = Leg(0, 0.0, 0.0)
        for leg in self.legs:
            if leg.start_s <= t:
                current = leg
        return current

    def track(self) -> list[tuple[float, float]]:
        """Formation displacement for every tick; each second moves at that second's leg."""
        x = y = 0.0
        out = []
        for t in range(self.duration_s + 1):
            out.append((x, y))
            leg = self.leg_at(t)
            v = leg.speed_kmh / 3.6
            h = math.radians(leg.heading_deg)
            x += v * math.sin(h)
            y += v * math.cos(h)
        return out

    def attacks_on(self, drone: str, t: int) -> list[Attack]:
        return [a for a in self.attacks if a.target == drone and a.active(t)]


def _kv(tokens: list[str], where: str) -> dict:
    out = {}
    for tok in tokens:
        k, sep, v = tok.partition("=")
        if not sep or not k or not v:
            raise InvalidSpec(f"{where}: bad parameter {tok!r}")
        out[k] = v
    return out


def parse_scenario(text: str) -> ScenarioSpec:
    spec = ScenarioSpec()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"scenario line {no}"
        parts = line.split()
        head = parts[0]
        try:
            if head == "name":
                spec.name = parts[1]
            elif head == "seed":
                spec.seed = int(parts[1])
            elif head == "duration_s":
                spec.duration_s = int(parts[1])
            elif head == "start":
                spec.start = Timestamp.parse(parts[1])
            elif head == "origin":
                spec.origin = (float(parts[1]), float(parts[2]), float(parts[3]))
            elif head == "LEG":
                spec.legs.append(Leg(int(parts[1]), float(parts[2]), float(parts[3]) % 360.0))
            elif head == "DESTROY":
                spec.destroy[validate_drone_id(parts[1])] = int(parts[2])
            elif head == "ATTACK":
                params = _kv(parts[4:], where)
                target = params.pop("target", None)
                spec.attacks.append(Attack(parts[1], int(parts[2]), int(parts[3]), target or "", params))
            elif head == "EXPECT":
                spec.expectations.append(line)
            elif not apply_topology_line(spec.topology, line):
                raise InvalidSpec(f"{where}: cannot read {raw.strip()!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"{where}: {exc or 'missing value'}") from None
    for a in spec.attacks:
        if not a.target and a.kind != "NONE" and spec.drones:
            a.target = spec.drones[0]
    spec.validate()
    return spec


def load_scenario(path) -> ScenarioSpec:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def _geo(spec: ScenarioSpec, x: float, y: float) -> tuple[float, float, float]:
    lat0, lon0, alt0 = spec.origin
    lat = lat0 + math.degrees(y / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return round(lat, 7), round(lon, 7), round(alt0, 1)


def _f(x: float, digits: int) -> str:
    return format_number(round(x, digits))


def positions_at(spec: ScenarioSpec, track: list[tuple[float, float]], t: int) -> dict[str, tuple[float, float]]:
    dx, dy = track[t]
    return {d: (x + dx, y + dy) for d, (x, y) in spec.topology.positions.items()}


@dataclass
class GeneratedDrone:
    drone: str
    streams: dict[str, list[RawRecord]]

    def adapters(self) -> list[Adapter]:
        return [Adapter(name, kind, self.streams[name]) for name, kind in ADAPTERS]


def generate(spec: ScenarioSpec) -> dict[str, GeneratedDrone]:
    """Raw record streams per drone. Identical spec gives identical streams.

    Baseline draws come from one stream per drone and attack draws from a
    second, so adding an attack never perturbs the baseline values.
    """
    spec.validate()
    track = spec.track()
    out = {}
    for index, drone in enumerate(spec.drones):
        base = Lcg(derive_seed(spec.seed, index, 1))
        atk = Lcg(derive_seed(spec.seed, index, 2))
        streams: dict[str, list[RawRecord]] = {name: [] for name, _ in ADAPTERS}
        ox, oy = spec.topology.positions[drone]
        for t in range(spec.duration_s):
            if not spec.alive(drone, t):
                break
            ts = spec.timestamp(t)
            leg = spec.leg_at(t)
            dx, dy = track[t]
            lat, lon, alt = _geo(spec, ox + dx, oy + dy)

            # baseline draws, always in this order
            l1 = base.uniform(-127.0, -123.0)
            l2 = base.uniform(-127.0, -123.0)
            wifi = base.uniform(-70.0, -55.0)
            sats = base.randint(4, 8)
            interval = 1.0 + base.uniform(-0.1, 0.1)
            beacons = base.randint(8, 12)
            packets = base.randint(50, 150)
            size = base.randint(60, 1500)

            active = {a.kind: a for a in spec.attacks_on(drone, t)}
            fix = True
            deauth = None
            if "GPS_SPOOF" in active:
                a = active["GPS_SPOOF"]
                l1 = atk.uniform(-112.0, -106.0)
                sats = int(a.param("sat_count", 10))
                interval = 1.0
            if "GPS_JAM" in active:
                l1 = atk.uniform(-95.0, -90.0)
                l2 = atk.uniform(-95.0, -90.0)
                fix = False
            if "WIFI_DEAUTH" in active:
                a = active["WIFI_DEAUTH"]
                wifi = atk.uniform(-35.0, -30.0)
                rate = int(a.param("rate", 20))
                deauth = (rate + atk.randint(-2, 2), a.params.get("src", "ROGUE"))
            if "DDOS" in active:
                a = active["DDOS"]
                rate = int(a.param("rate", 5000))
                packets = rate + atk.randint(-500, 500)

            streams["mfr"].append(RawRecord(SourceKind.MFR_LOG, ts, {
                "severity": "INFO",
                "msg": "FLIGHT_STATE",
                "speed_kmh": _f(leg.speed_kmh, 2),
                "heading_deg": _f(leg.heading_deg, 2),
                "lat": format_number(lat),
                "lon": format_number(lon),
                "alt": format_number(alt),
            }))
            for freq, power in ((GPS_L1_MHZ, l1), (GPS_L2_MHZ, l2), (WIFI_MHZ, wifi)):
                streams["rf"].append(RawRecord(SourceKind.RF_SAMPLE, ts, {
                    "freq_mhz": format_number(freq), "power_db": _f(power, 2),
                }))
            if fix:
                gps = {"fix": "true", "sat_count": str(sats), "interval_s": _f(interval, 4)}
            else:
                gps = {"fix": "false"}
            streams["gps"].append(RawRecord(SourceKind.GPS_STATUS, ts, gps))
            streams["wifi"].append(RawRecord(SourceKind.WIFI_FRAME, ts, {
                "frame": "BEACON", "src": "HOME_AP", "count": str(beacons),
            }))
            if deauth is not None:
                streams["wifi"].append(RawRecord(SourceKind.WIFI_FRAME, ts, {
                    "frame": "DEAUTH", "src": deauth[1], "count": str(deauth[0]),
                }))
            streams["net"].append(RawRecord(SourceKind.NET_COUNTER, ts, {
                "packets": str(packets), "bytes": str(packets * size),
            }))
        out[drone] = GeneratedDrone(drone, streams)
    return out


def format_truth(spec: ScenarioSpec) -> str:
    lines = [f"# ground truth for {spec.name} seed={spec.seed}"]
    for a in spec.attacks:
        params = " ".join(f"{k}={v}" for k, v in sorted(a.params.items()))
        lines.append(f"ATTACK {a.kind} {a.start_s} {a.end_s} target={a.target} {params}".rstrip())
        if a.emitter is not None:
            lines.append(f"EMITTER {format_number(a.emitter[0])} {format_number(a.emitter[1])}")
    for d, tick in spec.destroy.items():
        lines.append(f"DESTROY {d} {tick}")
    lines.append(format_topology(spec.topology).rstrip("\n"))
    return "\n".join(lines) + "\n"


def write_generated(spec: ScenarioSpec, out_dir) -> dict[str, GeneratedDrone]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    generated = generate(spec)
    for drone, g in generated.items():
        ddir = out / drone
        ddir.mkdir(exist_ok=True)
        for name, records in g.streams.items():
            text = "".join(format_raw_record(r) + "\n" for r in records)
            (ddir / f"{name}.raw").write_text(text, encoding="utf-8", newline="\n")
    (out / "truth.txt").write_text(format_truth(spec), encoding="utf-8", newline="\n")
    return generated
