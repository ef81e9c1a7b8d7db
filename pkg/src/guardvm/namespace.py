"""Symbolic names for segments, and the append-only event log.

Trace lines look like::

    EV 3 LINK owner=0x1000 slot=0x2 sym=foo suid=0x1003 length=0x10 S=r-- U=rw- K=--- gate=- handler=0x0

Integer values are always rendered as lowercase ``0x`` hex.  Each event kind
has a fixed leading key order (``EVENT_KEYS``); some kinds append optional
trailing keys after those.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Tuple, Union

from .core import DuplicateName, UnknownName

EVENT_KINDS = ("STEP", "TRAP", "LINK", "GATE", "FAULT", "ALARM", "IO", "HALT")

EVENT_KEYS: Dict[str, Tuple[str, ...]] = {
    "STEP": ("layer", "seg", "suid", "off", "op", "arg", "acc", "x"),
    "TRAP": ("kind", "suid", "offset", "layer", "handler"),
    "LINK": ("owner", "slot", "sym", "suid", "length", "S", "U", "K", "gate", "handler"),
    "GATE": ("op", "from", "to", "seg"),
    "FAULT": ("kind", "suid", "offset", "layer"),
    "ALARM": ("kind", "suid", "offset", "layer"),
    "IO": ("ch", "value"),
    "HALT": ("code",),
}

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
_TOKEN_RE = re.compile(r"^[^\s=]+$")


def valid_name(name: str) -> bool:
    return bool(_NAME_RE.match(name))


class NameTable:
    """Flat file system: symbol text -> SUID."""

    def __init__(self) -> None:
        self._names: Dict[str, int] = {}

    def lookup(self, name: str) -> int:
        try:
            return self._names[name]
        except KeyError:
            raise UnknownName(f"no segment named {name!r}") from None

    def bind(self, name: str, suid: int) -> None:
        if not valid_name(name):
            raise ValueError(f"illegal segment name {name!r}")
        if name in self._names:
            raise DuplicateName(f"name {name!r} is already bound")
        self._names[name] = suid

    def unbind(self, name: str) -> int:
        try:
            return self._names.pop(name)
        except KeyError:
            raise UnknownName(f"no segment named {name!r}") from None

    def rename(self, old: str, new: str) -> None:
        if old not in self._names:
            raise UnknownName(f"no segment named {old!r}")
        if new in self._names:
            raise DuplicateName(f"name {new!r} is already bound")
        if not valid_name(new):
            raise ValueError(f"illegal segment name {new!r}")
        self._names[new] = self._names.pop(old)

    def names_for(self, suid: int) -> List[str]:
        return sorted(n for n, s in self._names.items() if s == suid)

    def items(self) -> List[Tuple[str, int]]:
        return sorted(self._names.items())

    def copy(self) -> "NameTable":
        new = NameTable()
        new._names = dict(self._names)
        return new

    def __contains__(self, name: str) -> bool:
        return name in self._names

    def __len__(self) -> int:
        return len(self._names)


def render_value(value: Union[int, str, bool]) -> str:
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, int):
        return f"{value:#x}"
    return value


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    fields: Tuple[Tuple[str, str], ...]

    def get(self, key: str, default: str = None) -> str:
        for k, v in self.fields:
            if k == key:
                return v
        return default

    def __getitem__(self, key: str) -> str:
        v = self.get(key)
        if v is None:
            raise KeyError(key)
        return v

    def as_dict(self) -> Dict[str, str]:
        return dict(self.fields)

    def format(self) -> str:
        body = " ".join(f"{k}={v}" for k, v in self.fields)
        return f"EV {self.step} {self.kind} {body}".rstrip()


def make_event(step: int, kind: str, /, **values) -> Event:
    """Build an event; keyword order is the rendered key order."""
    fields = []
    for k, v in values.items():
        k = k.rstrip("_")  # allows from_= and similar
        text = render_value(v)
        if not _TOKEN_RE.match(text):
            raise ValueError(f"event value {text!r} for {k} is not a single token")
        fields.append((k, text))
    ev = Event(step, kind, tuple(fields))
    check_event(ev)
    return ev


def check_event(ev: Event) -> None:
    if ev.kind not in EVENT_KEYS:
        raise ValueError(f"unknown event kind {ev.kind}")
    want = EVENT_KEYS[ev.kind]
    have = tuple(k for k, _ in ev.fields[: len(want)])
    if have != want:
        raise ValueError(f"{ev.kind} event keys {have} do not start with {want}")


def parse_event(line: str) -> Event:
    parts = line.rstrip("\n").split(" ")
    if len(parts) < 3 or parts[0] != "EV":
        raise ValueError(f"not an event line: {line!r}")
    step = int(parts[1])
    if str(step) != parts[1] or step < 0:
        raise ValueError(f"bad step number in {line!r}")
    fields = []
    for tok in parts[3:]:
        k, sep, v = tok.partition("=")
        if not sep or not k or not v:
            raise ValueError(f"bad field {tok!r} in {line!r}")
        fields.append((k, v))
    ev = Event(step, parts[2], tuple(fields))
    check_event(ev)
    return ev


def parse_trace(text: str) -> List[Event]:
    return [parse_event(line) for line in text.splitlines() if line.strip()]


class EventLog:
    """Append-only recorder.  Events are immutable once appended."""

    def __init__(self) -> None:
        self._events: List[Event] = []

    def log_event(self, event: Event) -> None:
        if self._events and event.step < self._events[-1].step:
            raise ValueError("event step numbers must not decrease")
        self._events.append(event)

    def emit(self, step: int, kind: str, /, **values) -> Event:
        ev = make_event(step, kind, **values)
        self.log_event(ev)
        return ev

    @property
    def events(self) -> Tuple[Event, ...]:
        return tuple(self._events)

    def since(self, index: int) -> List[Event]:
        return self._events[index:]

    def serialize(self) -> str:
        return "".join(ev.format() + "\n" for ev in self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[Event]:
        return iter(tuple(self._events))


def log_event(recorder: EventLog, event: Event) -> None:
    recorder.log_event(event)


def lookup(table: NameTable, name: str) -> int:
    return table.lookup(name)


def events_of(events: Iterable[Event], kind: str) -> List[Event]:
    return [e for e in events if e.kind == kind]
