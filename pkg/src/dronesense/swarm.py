"""Simulated fleet fabric: group alerts, audit forwarding, emitter location.

The fleet advances in integer rounds (one round per simulation tick).
Positions are planar metres in a local tangent plane.

Topology file lines::

    DRONE <id> <x_m> <y_m>
    RADIUS <m>
    LINK <id> DOWN_AT <tick>
    LINK <id> LATENCY <rounds>
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .analytics import Alert
from .rules import ActionLevel
from .telemetry import format_number, validate_drone_id

SPEED_OF_LIGHT = 299_792_458.0


class MessageKind(str, Enum):
    GROUP_ALERT = "GROUP_ALERT"
    LOG_BATCH = "LOG_BATCH"
    TRIANG_OBS = "TRIANG_OBS"
    ASSIST_REQUEST = "ASSIST_REQUEST"


@dataclass(frozen=True, slots=True)
class TriangObs:
    """One receiver's view of an emitter: an arrival time or a bearing."""

    x: float
    y: float
    arrival_s: Optional[float] = None
    bearing_deg: Optional[float] = None
    sender: str = "-"

    def __post_init__(self):
        if (self.arrival_s is None) == (self.bearing_deg is None):
            raise ValueError("observation needs exactly one of arrival_s, bearing_deg")


@dataclass(frozen=True, slots=True)
class SwarmMessage:
    kind: MessageKind
    sender: str
    sent_tick: int
    payload: Union[Alert, TriangObs, tuple, None] = None
    recipient: Optional[str] = None  # None means broadcast

    def __post_init__(self):
        if self.kind is MessageKind.LOG_BATCH and not isinstance(self.payload, tuple):
            raise ValueError("LOG_BATCH payload must be a tuple of log lines")
        if self.kind is MessageKind.TRIANG_OBS and not isinstance(self.payload, TriangObs):
            raise ValueError("TRIANG_OBS payload must be a TriangObs")


def format_message(msg: SwarmMessage) -> str:
    head = f"{msg.sent_tick} {msg.kind.value} {msg.sender} to={msg.recipient or '*'}"
    p = msg.payload
    if isinstance(p, Alert):
        return f"{head} level={p.level.label} rule={p.rule} first={p.first} last={p.last}"
    if isinstance(p, TriangObs):
        return f"{head} {format_obs(p)}"
    if isinstance(p, tuple):
        return f"{head} lines={len(p)}"
    return head


def format_obs(o: TriangObs) -> str:
    if o.arrival_s is not None:
        value = f"arrival_s={o.arrival_s!r}"
    else:
        value = f"bearing_deg={o.bearing_deg!r}"
    return f"TRIANG_OBS {o.sender} {o.x!r} {o.y!r} {value}"


def parse_obs(line: str, line_no: Optional[int] = None) -> TriangObs:
    """Parse ``TRIANG_OBS <sender> <x_m> <y_m> arrival_s=<t>|bearing_deg=<b>``."""
    where = f"line {line_no}: " if line_no is not None else ""
    parts = line.split()
    if len(parts) != 5 or parts[0] != "TRIANG_OBS":
        raise ValueError(f"{where}expected 'TRIANG_OBS <sender> <x> <y> key=value'")
    key, _, value = parts[4].partition("=")
    try:
        x, y, v = float(parts[2]), float(parts[3]), float(value)
    except ValueError:
        raise ValueError(f"{where}bad number in {line.strip()!r}") from None
    if key == "arrival_s":
        return TriangObs(x, y, arrival_s=v, sender=parts[1])
    if key == "bearing_deg":
        return TriangObs(x, y, bearing_deg=v, sender=parts[1])
    raise ValueError(f"{where}unknown observation key {key!r}")


def read_obs(text: str) -> tuple[list[TriangObs], Optional[float]]:
    """Observation file: TRIANG_OBS lines plus an optional ``SPEED <m/s>`` line."""
    obs, speed = [], None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("SPEED"):
            speed = float(line.split()[1])
        else:
            obs.append(parse_obs(line, no))
    return obs, speed


# --- topology and delivery ---------------------------------------------------------


@dataclass
class FleetTopology:
    positions: dict[str, tuple[float, float]] = field(default_factory=dict)
    radius_m: float = 500.0
    down_at: dict[str, int] = field(default_factory=dict)
    latency: dict[str, int] = field(default_factory=dict)
    destroyed: set[str] = field(default_factory=set)

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError("radius_m must be positive")

    @property
    def drones(self) -> list[str]:
        return list(self.positions)

    def add_drone(self, drone_id: str, x: float, y: float) -> None:
        self.positions[validate_drone_id(drone_id)] = (float(x), float(y))

    def distance(self, a: str, b: str) -> float:
        (ax, ay), (bx, by) = self.positions[a], self.positions[b]
        return math.hypot(ax - bx, ay - by)

    def link_up(self, drone_id: str, tick: int) -> bool:
        if drone_id in self.destroyed:
            return False
        down = self.down_at.get(drone_id)
        return down is None or tick < down

    def set_link(self, drone_id: str, up: bool, tick: int = 0) -> None:
        if up:
            self.down_at.pop(drone_id, None)
        else:
            self.down_at[drone_id] = tick

    def latency_of(self, drone_id: str) -> int:
        return self.latency.get(drone_id, 1)

    def neighbors(self, origin: str) -> list[str]:
        return [
            d for d in self.positions
            if d != origin and self.distance(origin, d) <= self.radius_m
        ]


def parse_topology(text: str) -> FleetTopology:
    topo = FleetTopology()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not apply_topology_line(topo, line):
            raise ValueError(f"topology line {no}: cannot read {raw.strip()!r}")
    return topo


def apply_topology_line(topo: FleetTopology, line: str) -> bool:
    """Apply one DRONE/RADIUS/LINK line. False if the line is not a topology line."""
    parts = line.split()
    if parts[0] == "DRONE" and len(parts) == 4:
        topo.add_drone(parts[1], float(parts[2]), float(parts[3]))
    elif parts[0] == "RADIUS" and len(parts) == 2:
        radius = float(parts[1])
        if not radius > 0:
            raise ValueError("RADIUS must be positive")
        topo.radius_m = radius
    elif parts[0] == "LINK" and len(parts) == 4 and parts[2] == "DOWN_AT":
        topo.down_at[parts[1]] = int(parts[3])
    elif parts[0] == "LINK" and len(parts) == 4 and parts[2] == "LATENCY":
        topo.latency[parts[1]] = int(parts[3])
    else:
        return False
    return True


def format_topology(topo: FleetTopology) -> str:
    lines = [f"RADIUS {format_number(topo.radius_m)}"]
    lines += [f"DRONE {d} {format_number(x)} {format_number(y)}" for d, (x, y) in topo.positions.items()]
    lines += [f"LINK {d} DOWN_AT {t}" for d, t in topo.down_at.items()]
    lines += [f"LINK {d} LATENCY {r}" for d, r in topo.latency.items()]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, slots=True)
class DeliveryReport:
    origin: str
    sent_tick: int
    deliveries: tuple[tuple[str, int], ...]  # (receiver, delivery round)

    @property
    def receivers(self) -> list[str]:
        return [r for r, _ in self.deliveries]

    @property
    def rounds(self) -> int:
        return max((t - self.sent_tick for _, t in self.deliveries), default=0)


class Fabric:
    """Lock-step message scheduler: a message sent in round t lands in t + latency."""

    def __init__(self, topology: FleetTopology):
        self.topology = topology
        self._queue: dict[int, list[tuple[str, SwarmMessage]]] = defaultdict(list)
        self.sent: list[SwarmMessage] = []

    def send(self, msg: SwarmMessage, to: str, deliver_round: int) -> None:
        self._queue[deliver_round].append((to, msg))

    def unicast(self, msg: SwarmMessage, to: str) -> Optional[int]:
        topo = self.topology
        tick = msg.sent_tick
        if not (topo.link_up(msg.sender, tick) and topo.link_up(to, tick)):
            return None
        rnd = tick + topo.latency_of(to)
        self.sent.append(msg)
        self.send(msg, to, rnd)
        return rnd

    def deliver(self, rnd: int) -> dict[str, list[SwarmMessage]]:
        """Pop every message due in round ``rnd``, grouped by receiver."""
        out: dict[str, list[SwarmMessage]] = defaultdict(list)
        for to, msg in self._queue.pop(rnd, []):
            if to not in self.topology.destroyed:
                out[to].append(msg)
        return out

    def pending(self) -> int:
        return sum(len(v) for v in self._queue.values())


def broadcast_group(
    topology: FleetTopology,
    origin: str,
    alert: Alert,
    tick: int = 0,
    fabric: Optional[Fabric] = None,
    kind: MessageKind = MessageKind.GROUP_ALERT,
) -> DeliveryReport:
    """Send a Group/Emergency alert to every in-radius drone whose link is up."""
    if alert.level not in (ActionLevel.GROUP, ActionLevel.EMERGENCY):
        raise ValueError(f"only Group or Emergency alerts are broadcast, got {alert.level.label}")
    msg = SwarmMessage(kind, origin, tick, alert)
    deliveries = []
    if topology.link_up(origin, tick):
        for d in topology.neighbors(origin):
            if not topology.link_up(d, tick):
                continue
            rnd = tick + topology.latency_of(d)
            deliveries.append((d, rnd))
            if fabric is not None:
                fabric.send(msg, d, rnd)
        if fabric is not None and deliveries:
            fabric.sent.append(msg)
    return DeliveryReport(origin, tick, tuple(deliveries))


# --- audit forwarding ---------------------------------------------------------------


class AuditRepository:
    """Append-only store of (drone id, log line) in arrival order."""

    def __init__(self):
        self._entries: list[tuple[str, str]] = []
        self._per_drone: dict[str, int] = defaultdict(int)

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, msg: SwarmMessage) -> None:
        if msg.kind is not MessageKind.LOG_BATCH:
            raise ValueError("repository only accepts LOG_BATCH messages")
        for line in msg.payload:
            self._entries.append((msg.sender, line))
        self._per_drone[msg.sender] += len(msg.payload)

    def high_water(self, drone_id: str) -> int:
        return self._per_drone[drone_id]

    def lines_for(self, drone_id: str) -> list[str]:
        return [line for d, line in self._entries if d == drone_id]

    def entries(self) -> list[tuple[str, str]]:
        return list(self._entries)

    def dump(self) -> str:
        return "".join(f"{d} {line}\n" for d, line in self._entries)


class LogForwarder:
    """Drone-side log buffer that ships new lines while the link is up."""

    def __init__(self, drone_id: str):
        self.drone_id = drone_id
        self.lines: list[str] = []
        self.high_water = 0
        self.destroyed = False

    def write(self, line: str) -> None:
        if not self.destroyed:
            self.lines.append(line)

    @property
    def buffered(self) -> int:
        return len(self.lines) - self.high_water

    def forward(self, repository: AuditRepository, link_up: bool, tick: int = 0) -> int:
        if self.destroyed or not link_up or self.buffered == 0:
            return self.high_water
        batch = tuple(self.lines[self.high_water:])
        repository.append(SwarmMessage(MessageKind.LOG_BATCH, self.drone_id, tick, batch))
        self.high_water = len(self.lines)
        return self.high_water

    def destroy(self) -> None:
        self.destroyed = True


def forward_logs(forwarder: LogForwarder, repository: AuditRepository, link_up: bool, tick: int = 0) -> int:
    return forwarder.forward(repository, link_up, tick)


# --- emitter location -----------------------------------------------------------------


class LocateError(ValueError):
    pass


class CollinearReceivers(LocateError):
    pass


class ParallelBearings(LocateError):
    pass


class NoConvergence(LocateError):
    def __init__(self, message: str, estimate: "EmitterEstimate"):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True, slots=True)
class EmitterEstimate:
    x: float
    y: float
    residual: float
    method: str
    converged: bool = True
    iterations: int = 0

    def error_to(self, x: float, y: float) -> float:
        return math.hypot(self.x - x, self.y - y)


def _points(observations: Sequence[TriangObs]) -> np.ndarray:
    return np.array([[o.x, o.y] for o in observations], dtype=float)


def tdoa_locate(
    observations: Sequence[TriangObs],
    c: float = SPEED_OF_LIGHT,
    max_iter: int = 100,
    strict: bool = False,
) -> EmitterEstimate:
    """Locate an emitter from arrival times at synchronized receivers.

    Minimizes, over all receiver pairs (i, j), the squared mismatch between
    the measured range difference ``c * (t_i - t_j)`` and the modelled one
    ``|p - r_i| - |p - r_j|``. Damped Gauss-Newton iterations start from the
    receiver centroid. ``residual`` is the norm of the pairwise mismatch.
    """
    obs = [o for o in observations if o.arrival_s is not None]
    if len(obs) < 3:
        raise CollinearReceivers(f"need at least 3 receivers, got {len(obs)}")
    r = _points(obs)
    centered = r - r.mean(axis=0)
    scale = max(float(np.abs(centered).max()), 1.0)
    if np.linalg.matrix_rank(centered / scale, tol=1e-9) < 2:
        raise CollinearReceivers("receivers are collinear")

    t = np.array([o.arrival_s for o in obs], dtype=float)
    i_idx, j_idx = (np.array(ix) for ix in zip(*combinations(range(len(obs)), 2)))
    measured = c * (t[i_idx] - t[j_idx])

    def residuals(p):
        d = np.hypot(*(p - r).T)
        return measured - (d[i_idx] - d[j_idx])

    def jacobian(p):
        diff = p - r
        d = np.maximum(np.hypot(*diff.T), 1e-12)
        u = diff / d[:, None]
        return -(u[i_idx] - u[j_idx])

    p = r.mean(axis=0)
    res = residuals(p)
    cost = float(res @ res)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = jacobian(p)
        a = jac.T @ jac
        g = jac.T @ res
        if cost == 0.0 or float(np.abs(g).max()) <= 1e-14 * max(scale, 1.0):
            converged = True
            break
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(a + lam * np.diag(np.diag(a) + 1e-12), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = p + step
            trial_res = residuals(trial)
            trial_cost = float(trial_res @ trial_res)
            if trial_cost <= cost:
                improved = True
                small = float(np.linalg.norm(step)) <= 1e-12 * (1.0 + float(np.linalg.norm(p)))
                p, res, cost = trial, trial_res, trial_cost
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        if not improved or small:
            # no descent direction left: we sit at a minimum
            converged = True
            break

    est = EmitterEstimate(float(p[0]), float(p[1]), math.sqrt(cost), "TDOA", converged, it)
    if not converged and strict:
        raise NoConvergence(f"no convergence after {max_iter} iterations", est)
    return est


def bearing_locate(observations: Sequence[TriangObs]) -> EmitterEstimate:
    """Least-squares intersection of bearing lines.

    Bearings are degrees clockwise from north (+y). Each observation gives
    one equation: the emitter's signed perpendicular distance to the line
    through the receiver along its bearing is zero.
    """
    obs = [o for o in observations if o.bearing_deg is not None]
    if len(obs) < 2:
        raise ParallelBearings(f"need at least 2 bearings, got {len(obs)}")
    theta = np.radians([o.bearing_deg for o in obs])
    normals = np.column_stack([np.cos(theta), -np.sin(theta)])
    r = _points(obs)
    # solve in coordinates relative to the first receiver so large offsets cancel
    origin = r[0]
    rhs = np.einsum("ij,ij->i", normals, r - origin)
    a = normals.T @ normals
    eig = np.linalg.eigvalsh(a)
    if eig[0] <= 1e-12 * eig[-1]:
        raise ParallelBearings("bearings are parallel")
    rel = np.linalg.solve(a, normals.T @ rhs)
    residual = float(np.linalg.norm(normals @ rel - rhs))
    p = rel + origin
    return EmitterEstimate(float(p[0]), float(p[1]), residual, "BEARING", True, 1)


def tdoa_arrivals(
    emitter: tuple[float, float],
    receivers: Iterable[tuple[float, float]],
    c: float = SPEED_OF_LIGHT,
    t0: float = 0.0,
) -> list[float]:
    """Noiseless forward model: arrival time at each receiver."""
    ex, ey = emitter
    return [t0 + math.hypot(x - ex, y - ey) / c for x, y in receivers]


def bearing_to(receiver: tuple[float, float], emitter: tuple[float, float]) -> float:
    """Bearing in degrees clockwise from north, in [0, 360)."""
    dx, dy = emitter[0] - receiver[0], emitter[1] - receiver[1]
    return math.degrees(math.atan2(dx, dy)) % 360.0
