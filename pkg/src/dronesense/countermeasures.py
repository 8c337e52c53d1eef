"""Countermeasure state on the drone and the policy that drives it.

Every countermeasure is a configuration value; nothing here touches real
radios. The policy is one pure function over (state, alert, mode) with its
trigger sets held in :class:`Policy` so alternates can be swapped in.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional

from .analytics import Alert, Mode
from .rules import ActionLevel
from .telemetry import Timestamp

GNSS_ORDER = ("GPS", "GALILEO", "BEIDOU", "IRNSS", "GLONASS")
COMM_CHANNELS = ("PRIMARY", "3G", "SMS", "WIMAX")
CAPTURE_MODES = ("TIME_LAPSE", "ELEVATED_CAPTURE", "STREAMING")

GNSS_BANDS = {
    ("GPS", "L1"): 1575.42,
    ("GPS", "L2"): 1227.6,
    ("GLONASS", "L1"): 1602.0,
    ("GLONASS", "L2"): 1246.0,
}


class UnknownBand(KeyError):
    pass


def gnss_band_lookup(constellation: str, band: str) -> float:
    try:
        return GNSS_BANDS[(constellation, band)]
    except KeyError:
        raise UnknownBand(f"{constellation} {band}") from None


@dataclass(frozen=True, slots=True)
class CountermeasureState:
    active_gnss: str = "GPS"
    comm_channel: str = "PRIMARY"
    agc_enabled: bool = False
    capture_mode: str = "TIME_LAPSE"
    log_forwarding: bool = True

    def __post_init__(self):
        if self.active_gnss not in GNSS_ORDER:
            raise ValueError(f"unknown constellation {self.active_gnss!r}")
        if self.comm_channel not in COMM_CHANNELS:
            raise ValueError(f"unknown channel {self.comm_channel!r}")
        if self.capture_mode not in CAPTURE_MODES:
            raise ValueError(f"unknown capture mode {self.capture_mode!r}")


DEFAULT_STATE = CountermeasureState()


@dataclass(frozen=True)
class Policy:
    gnss_order: tuple[str, ...] = GNSS_ORDER
    rotate_rules: frozenset = frozenset({"gps_spoof", "sat_count_anomaly"})
    link_loss_rules: frozenset = frozenset({"lost_link"})
    emergency_channel: str = "3G"


DEFAULT_POLICY = Policy()


@dataclass(frozen=True, slots=True)
class Action:
    field: str
    old: object
    new: object
    cause: str


def _render(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def format_action(ts: Timestamp, drone_id: str, a: Action) -> str:
    return f"{ts} CM {drone_id} {a.field} {_render(a.old)} -> {_render(a.new)} cause={a.cause}"


def _next_gnss(current: str, order: tuple[str, ...]) -> str:
    return order[(order.index(current) + 1) % len(order)]


def apply_policy(
    state: CountermeasureState,
    alert: Optional[Alert],
    mode: Mode,
    previous_mode: Optional[Mode] = None,
    policy: Policy = DEFAULT_POLICY,
) -> tuple[CountermeasureState, list[Action]]:
    """Next countermeasure state plus the field changes that produced it.

    ``previous_mode`` marks a mode transition; a transition down to Normal
    restores the defaults, keeping log forwarding on.
    """
    new = state
    cause = alert.rule if alert is not None else f"mode:{mode.label}"

    if alert is not None:
        rotate = alert.rule in policy.rotate_rules
        if alert.rule in policy.link_loss_rules and mode.rank >= Mode.ELEVATED.rank:
            rotate = rotate or "link=GPS" in alert.detail
        if rotate:
            new = replace(new, active_gnss=_next_gnss(new.active_gnss, policy.gnss_order), agc_enabled=True)
        if alert.level is ActionLevel.EMERGENCY:
            new = replace(new, comm_channel=policy.emergency_channel, capture_mode="STREAMING")

    if mode in (Mode.MONITOR, Mode.SWARM_MONITOR):
        new = replace(new, capture_mode="ELEVATED_CAPTURE")
    if mode is Mode.NORMAL and previous_mode is not None and previous_mode is not Mode.NORMAL:
        new = replace(DEFAULT_STATE, log_forwarding=True)

    actions = [
        Action(f.name, getattr(state, f.name), getattr(new, f.name), cause)
        for f in fields(CountermeasureState)
        if getattr(state, f.name) != getattr(new, f.name)
    ]
    return new, actions
