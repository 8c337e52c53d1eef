"""Signature rules: grammar, parser, formatter and stateless evaluation.

One rule per line::

    RULE <name> LEVEL <level> WHEN <atom> (AND <atom>)* [REPEAT n MINDIST m | RATE c/w]

An atom is ``<FIELD> <op> <constant>``. ``#`` starts a comment.
Stateful modifiers are carried on the match; the analytics engine owns
their state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum
from importlib import resources
from typing import Iterable, Optional, Union

from .telemetry import Selector, TelemetryEvent, Timestamp, format_number

FREQ_TOLERANCE = 0.005  # numeric equality slack, same unit as the field

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?(\d+(\.\d*)?|\.\d+)", re.ASCII)
_TOKEN_RE = re.compile(r"\S+")

OPS = ("=", "!=", "<", "<=", ">", ">=")

# rule field -> event attribute; None means the selector column
FIELDS = {
    "SELECTOR": None,
    "FREQ_MHZ": "freq_mhz",
    "POWER_DB": "power_db",
    "SAT_COUNT": "sat_count",
    "INTERVAL_S": "interval_s",
    "EVENT": "event",
    "LINK": "link",
    "SRC": "src",
    "BYTES": "bytes",
    "COUNT": "count",
    "SEVERITY": "severity",
}


class ActionLevel(IntEnum):
    INFO = 0
    ELEVATED = 1
    GROUP = 2
    EMERGENCY = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, text: str) -> "ActionLevel":
        for level in cls:
            if level.label == text:
                return level
        raise ValueError(text)

    def __str__(self) -> str:
        return self.label


class RuleParseError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class RuleSyntaxError(RuleParseError):
    pass


class DuplicateRuleName(RuleParseError):
    pass


class UnknownField(RuleParseError):
    pass


class UnknownLevel(RuleParseError):
    pass


Constant = Union[float, str]


@dataclass(frozen=True, slots=True)
class Atom:
    field: str
    op: str
    value: Constant

    def holds(self, e: TelemetryEvent) -> bool:
        key = FIELDS[self.field]
        actual = e.selector.value if key is None else e.get(key)
        if actual is None:
            return False
        if isinstance(self.value, str):
            if not isinstance(actual, str):
                return False
            return (actual == self.value) == (self.op == "=")
        if isinstance(actual, str):
            return False
        return _compare(float(actual), self.op, self.value)


def _compare(a: float, op: str, b: float) -> bool:
    if op == "=":
        return abs(a - b) <= FREQ_TOLERANCE
    if op == "!=":
        return abs(a - b) > FREQ_TOLERANCE
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


@dataclass(frozen=True, slots=True)
class Repeat:
    count: int
    min_distance_m: float

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("REPEAT count must be >= 2")
        if not self.min_distance_m >= 0:
            raise ValueError("MINDIST must be >= 0")


@dataclass(frozen=True, slots=True)
class Rate:
    count: int
    window_s: float

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("RATE count must be >= 0")
        if not self.window_s > 0:
            raise ValueError("RATE window must be > 0")


Stateful = Union[Repeat, Rate]


@dataclass(frozen=True, slots=True)
class SignatureRule:
    name: str
    level: ActionLevel
    atoms: tuple[Atom, ...]
    stateful: Optional[Stateful] = None

    def matches(self, e: TelemetryEvent) -> bool:
        return all(atom.holds(e) for atom in self.atoms)


@dataclass(frozen=True, slots=True)
class RuleMatch:
    rule: SignatureRule
    event: TelemetryEvent

    @property
    def name(self) -> str:
        return self.rule.name

    @property
    def level(self) -> ActionLevel:
        return self.rule.level

    @property
    def timestamp(self) -> Timestamp:
        return self.event.timestamp

    @property
    def stateful(self) -> Optional[Stateful]:
        return self.rule.stateful


def eval_event(rules: Iterable[SignatureRule], e: TelemetryEvent) -> list[RuleMatch]:
    """Every rule whose stateless atoms all hold on ``e``, in rule order."""
    return [RuleMatch(rule, e) for rule in rules if rule.matches(e)]


class _Tokens:
    def __init__(self, text: str, line_no: int):
        self.items = [(m.group(), m.start() + 1) for m in _TOKEN_RE.finditer(text)]
        self.pos = 0
        self.line_no = line_no
        self.end_col = len(text) + 1

    def peek(self) -> Optional[str]:
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    def col(self) -> int:
        return self.items[self.pos][1] if self.pos < len(self.items) else self.end_col

    def next(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.items):
            raise RuleSyntaxError(f"expected {what}, got end of line", self.line_no, self.end_col)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def expect(self, keyword: str) -> None:
        tok, col = self.next(keyword)
        if tok != keyword:
            raise RuleSyntaxError(f"expected {keyword}, got {tok!r}", self.line_no, col)


def _number(tok: str, line_no: int, col: int) -> float:
    if not _NUMBER_RE.fullmatch(tok):
        raise RuleSyntaxError(f"expected a number, got {tok!r}", line_no, col)
    return float(tok)


def _integer(tok: str, line_no: int, col: int) -> int:
    if not tok.isdigit() or not tok.isascii():
        raise RuleSyntaxError(f"expected an integer, got {tok!r}", line_no, col)
    return int(tok)


def _parse_atom(toks: _Tokens) -> Atom:
    field_tok, col = toks.next("field")
    if field_tok not in FIELDS:
        raise UnknownField(f"unknown field {field_tok!r}", toks.line_no, col)
    op, op_col = toks.next("comparator")
    if op not in OPS:
        raise RuleSyntaxError(f"unknown comparator {op!r}", toks.line_no, op_col)
    value_tok, v_col = toks.next("constant")
    if _NUMBER_RE.fullmatch(value_tok):
        return Atom(field_tok, op, float(value_tok))
    if not _NAME_RE.fullmatch(value_tok):
        raise RuleSyntaxError(f"bad constant {value_tok!r}", toks.line_no, v_col)
    if op not in ("=", "!="):
        raise RuleSyntaxError(f"{op} needs a numeric constant", toks.line_no, op_col)
    if field_tok == "SELECTOR" and value_tok not in Selector.__members__:
        raise RuleSyntaxError(f"unknown selector {value_tok!r}", toks.line_no, v_col)
    return Atom(field_tok, op, value_tok)


def _parse_line(text: str, line_no: int) -> SignatureRule:
    toks = _Tokens(text, line_no)
    toks.expect("RULE")
    name, name_col = toks.next("rule name")
    if not _NAME_RE.fullmatch(name) or name in ("LEVEL", "WHEN", "AND"):
        raise RuleSyntaxError(f"bad rule name {name!r}", line_no, name_col)
    toks.expect("LEVEL")
    level_tok, level_col = toks.next("level")
    try:
        level = ActionLevel.from_label(level_tok)
    except ValueError:
        raise UnknownLevel(f"unknown level {level_tok!r}", line_no, level_col) from None
    toks.expect("WHEN")
    atoms = [_parse_atom(toks)]
    while toks.peek() == "AND":
        toks.next("AND")
        atoms.append(_parse_atom(toks))

    stateful: Optional[Stateful] = None
    tok = toks.peek()
    if tok == "REPEAT":
        col = toks.col()
        toks.next("REPEAT")
        n_tok, n_col = toks.next("repeat count")
        n = _integer(n_tok, line_no, n_col)
        toks.expect("MINDIST")
        m_tok, m_col = toks.next("distance")
        m = _number(m_tok, line_no, m_col)
        try:
            stateful = Repeat(n, m)
        except ValueError as exc:
            raise RuleSyntaxError(str(exc), line_no, col) from None
    elif tok == "RATE":
        col = toks.col()
        toks.next("RATE")
        r_tok, r_col = toks.next("count/window")
        count_text, slash, window_text = r_tok.partition("/")
        if not slash:
            raise RuleSyntaxError(f"expected c/w, got {r_tok!r}", line_no, r_col)
        c = _integer(count_text, line_no, r_col)
        w = _number(window_text, line_no, r_col + len(count_text) + 1)
        try:
            stateful = Rate(c, w)
        except ValueError as exc:
            raise RuleSyntaxError(str(exc), line_no, col) from None

    if toks.peek() is not None:
        raise RuleSyntaxError(f"unexpected {toks.peek()!r}", line_no, toks.col())
    return SignatureRule(name, level, tuple(atoms), stateful)


def parse_rules(text: str) -> list[SignatureRule]:
    rules: list[SignatureRule] = []
    seen: set[str] = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        rule = _parse_line(line, line_no)
        if rule.name in seen:
            col = line.index(rule.name, line.index("RULE") + 4) + 1
            raise DuplicateRuleName(f"duplicate rule {rule.name!r}", line_no, col)
        seen.add(rule.name)
        rules.append(rule)
    return rules


def _fmt_const(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return format_number(x)


def format_rule(rule: SignatureRule) -> str:
    atoms = " AND ".join(
        f"{a.field} {a.op} {a.value if isinstance(a.value, str) else _fmt_const(a.value)}"
        for a in rule.atoms
    )
    text = f"RULE {rule.name} LEVEL {rule.level.label} WHEN {atoms}"
    s = rule.stateful
    if isinstance(s, Repeat):
        text += f" REPEAT {s.count} MINDIST {_fmt_const(s.min_distance_m)}"
    elif isinstance(s, Rate):
        text += f" RATE {s.count}/{_fmt_const(s.window_s)}"
    return text


def format_rules(rules: Iterable[SignatureRule]) -> str:
    return "".join(format_rule(r) + "\n" for r in rules)


def default_rules_text() -> str:
    return resources.files("dronesense.data").joinpath("default.rules").read_text()


def default_ruleset() -> list[SignatureRule]:
    return parse_rules(default_rules_text())


def load_rules(path) -> list[SignatureRule]:
    with open(path, encoding="utf-8") as fh:
        return parse_rules(fh.read())
