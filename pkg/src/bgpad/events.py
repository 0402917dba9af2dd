"""BGP update events and the canonical event-log CSV.

One line per event, ten columns::

    timestamp,peer_ip,peer_as,kind,prefix,as_path,next_hop,attr_digest,old_state,new_state

``kind`` is ``A`` (announce), ``W`` (withdraw) or ``S`` (peer state change).
Columns that do not apply to a kind are left empty.  Lines starting with
``#`` are comments.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

HEADER = "# timestamp,peer_ip,peer_as,kind,prefix,as_path,next_hop,attr_digest,old_state,new_state"
N_COLUMNS = 10
ESTABLISHED = 6


class Kind(str, enum.Enum):
    ANNOUNCE = "A"
    WITHDRAW = "W"
    STATE = "S"


class InvalidEvent(ValueError):
    pass


class LineError(ValueError):
    """A malformed event-log line; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class UpdateEvent:
    timestamp: int
    peer_ip: str
    peer_as: int
    kind: Kind
    prefix: str = ""
    as_path: tuple[int, ...] = ()
    next_hop: str = ""
    attr_digest: str = ""
    old_state: int | None = None
    new_state: int | None = None

    @property
    def peer(self) -> tuple[str, int]:
        return (self.peer_ip, self.peer_as)

    @property
    def path_key(self) -> tuple[tuple[int, ...], str]:
        return (self.as_path, self.next_hop)


def announce(ts, peer_ip, peer_as, prefix, as_path=(), next_hop="", attr_digest="0" * 16):
    return UpdateEvent(int(ts), peer_ip, int(peer_as), Kind.ANNOUNCE, prefix,
                       tuple(int(a) for a in as_path), next_hop, attr_digest)


def withdraw(ts, peer_ip, peer_as, prefix):
    return UpdateEvent(int(ts), peer_ip, int(peer_as), Kind.WITHDRAW, prefix)


def state_change(ts, peer_ip, peer_as, old_state, new_state):
    return UpdateEvent(int(ts), peer_ip, int(peer_as), Kind.STATE,
                       old_state=int(old_state), new_state=int(new_state))


def _is_digest(text: str) -> bool:
    if len(text) != 16:
        return False
    try:
        int(text, 16)
    except ValueError:
        return False
    return text == text.lower()


def validate_event(ev: UpdateEvent) -> None:
    """Raise :class:`InvalidEvent` unless ``ev`` satisfies the per-kind invariants."""
    if not isinstance(ev.timestamp, int) or ev.timestamp < 0:
        raise InvalidEvent(f"bad timestamp {ev.timestamp!r}")
    if not isinstance(ev.peer_as, int) or ev.peer_as < 0:
        raise InvalidEvent(f"bad peer AS {ev.peer_as!r}")
    try:
        ipaddress.ip_address(ev.peer_ip)
    except ValueError:
        raise InvalidEvent(f"bad peer address {ev.peer_ip!r}") from None
    kind = Kind(ev.kind)
    if kind is Kind.STATE:
        if ev.prefix or ev.as_path or ev.next_hop or ev.attr_digest:
            raise InvalidEvent("state change carries route fields")
        if ev.old_state not in range(1, 7) or ev.new_state not in range(1, 7):
            raise InvalidEvent(f"state codes outside 1..6: {ev.old_state}->{ev.new_state}")
        if ev.old_state == ev.new_state:
            raise InvalidEvent("state change without a change")
        return
    if ev.old_state is not None or ev.new_state is not None:
        raise InvalidEvent("route event carries state codes")
    if not ev.prefix:
        raise InvalidEvent("route event without prefix")
    try:
        ipaddress.ip_network(ev.prefix, strict=False)
    except ValueError:
        raise InvalidEvent(f"bad prefix {ev.prefix!r}") from None
    if kind is Kind.WITHDRAW:
        if ev.as_path or ev.next_hop or ev.attr_digest:
            raise InvalidEvent("withdrawal carries path attributes")
        return
    if not _is_digest(ev.attr_digest):
        raise InvalidEvent(f"announcement needs a 16-hex-digit digest, got {ev.attr_digest!r}")
    if any((not isinstance(a, int)) or a < 0 for a in ev.as_path):
        raise InvalidEvent("negative AS in path")
    if ev.next_hop:
        try:
            ipaddress.ip_address(ev.next_hop)
        except ValueError:
            raise InvalidEvent(f"bad next hop {ev.next_hop!r}") from None


def sort_events(events: Iterable[UpdateEvent]) -> list[UpdateEvent]:
    """Stable timestamp sort; ties keep input order."""
    return sorted(events, key=lambda e: e.timestamp)


def is_sorted(events: Sequence[UpdateEvent]) -> bool:
    return all(a.timestamp <= b.timestamp for a, b in zip(events, events[1:]))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_event(ev: UpdateEvent) -> str:
    cols = [str(ev.timestamp), ev.peer_ip, str(ev.peer_as), Kind(ev.kind).value, ev.prefix,
            " ".join(str(a) for a in ev.as_path), ev.next_hop, ev.attr_digest,
            "" if ev.old_state is None else str(ev.old_state),
            "" if ev.new_state is None else str(ev.new_state)]
    return ",".join(cols)


def write_event_log(events: Iterable[UpdateEvent]) -> str:
    lines = [HEADER]
    for idx, ev in enumerate(events):
        try:
            validate_event(ev)
        except InvalidEvent as exc:
            raise InvalidEvent(f"event {idx}: {exc}") from None
        lines.append(format_event(ev))
    return "\n".join(lines) + "\n"


def _int(text: str, what: str, lineno: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise LineError(lineno, f"unparsable {what} {text!r}") from None
    if value < 0 or not text.isdigit():
        raise LineError(lineno, f"unparsable {what} {text!r}")
    return value


def parse_line(line: str, lineno: int = 1) -> UpdateEvent:
    cols = line.split(",")
    if len(cols) != N_COLUMNS:
        raise LineError(lineno, f"expected {N_COLUMNS} columns, got {len(cols)}")
    ts, peer_ip, peer_as, kind, prefix, path, nh, digest, old, new = cols
    try:
        kind = Kind(kind)
    except ValueError:
        raise LineError(lineno, f"unknown kind {kind!r}") from None
    as_path = tuple(_int(a, "AS number", lineno) for a in path.split(" ")) if path else ()
    ev = UpdateEvent(
        timestamp=_int(ts, "timestamp", lineno),
        peer_ip=peer_ip,
        peer_as=_int(peer_as, "peer AS", lineno),
        kind=kind,
        prefix=prefix,
        as_path=as_path,
        next_hop=nh,
        attr_digest=digest,
        old_state=_int(old, "state", lineno) if old else None,
        new_state=_int(new, "state", lineno) if new else None,
    )
    try:
        validate_event(ev)
    except InvalidEvent as exc:
        raise LineError(lineno, str(exc)) from None
    return ev


def iter_event_log(lines: Iterable[str]) -> Iterator[UpdateEvent]:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line or line.startswith("#"):
            continue
        yield parse_line(line, lineno)


def parse_event_log(text: str | Iterable[str]) -> list[UpdateEvent]:
    if isinstance(text, str):
        text = text.split("\n")
    return list(iter_event_log(text))


def read_event_log(path) -> list[UpdateEvent]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_event_log(fh))


def save_event_log(path, events: Iterable[UpdateEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_event_log(events))


@dataclass
class ParseStats:
    records_read: int = 0
    records_parsed: int = 0
    records_skipped: int = 0
    records_malformed: int = 0
    events: int = 0
    errors: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "records_read": self.records_read,
            "records_parsed": self.records_parsed,
            "records_skipped": self.records_skipped,
            "records_malformed": self.records_malformed,
            "events": self.events,
        }
