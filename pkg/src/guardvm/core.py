"""SUIDs, layers, permissions, descriptors, and the two tables they come from.

Descriptors are never edited by hand.  They are always assembled from a
Global Segment Table entry (identity, length, type) and the Type Table entry
for that type (per-layer permissions, gate and handler attributes).
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Dict, Iterator, Optional

FIRST_SUID = 0x1000
SUID_MASK = (1 << 64) - 1


class GuardError(Exception):
    """Base class for every error raised by the toolchain and the VM."""


class UnknownSuid(GuardError):
    pass


class DuplicateSuid(GuardError):
    pass


class UnknownType(GuardError):
    pass


class UnknownName(GuardError):
    pass


class DuplicateName(GuardError):
    pass


class AppendGranted(GuardError):
    pass


class NotKernel(GuardError):
    pass


class Layer(enum.IntEnum):
    """Software layers.  Larger value = further from the machine."""

    KERNEL = 0
    UTILITIES = 1
    SERVICES = 2

    @property
    def letter(self) -> str:
        return "KUS"[self.value]

    @classmethod
    def from_letter(cls, letter: str) -> "Layer":
        try:
            return cls("KUS".index(letter.upper()))
        except ValueError:
            raise ValueError(f"not a layer letter: {letter!r}") from None

    def below(self) -> Optional["Layer"]:
        return Layer(self.value - 1) if self.value > 0 else None


# Fixed rendering order for per-layer fields: S, U, K.
LAYER_ORDER = (Layer.SERVICES, Layer.UTILITIES, Layer.KERNEL)


_PERM_RE = re.compile(r"^([r-])([w-])([x-])([a-])?$")


@dataclass(frozen=True)
class PermSet:
    read: bool = False
    write: bool = False
    execute: bool = False
    append: bool = False

    @classmethod
    def parse(cls, text: str) -> "PermSet":
        m = _PERM_RE.match(text)
        if not m:
            raise ValueError(f"bad permission string {text!r}")
        r, w, x, a = m.groups()
        return cls(r == "r", w == "w", x == "x", a == "a")

    def render(self) -> str:
        s = ("r" if self.read else "-") + ("w" if self.write else "-") + ("x" if self.execute else "-")
        return s + "a" if self.append else s

    def __str__(self) -> str:
        return self.render()


NO_ACCESS = PermSet()


@dataclass(frozen=True)
class LayerPerms:
    services: PermSet = NO_ACCESS
    utilities: PermSet = NO_ACCESS
    kernel: PermSet = NO_ACCESS

    def for_layer(self, layer: Layer) -> PermSet:
        if layer is Layer.SERVICES:
            return self.services
        if layer is Layer.UTILITIES:
            return self.utilities
        return self.kernel

    def executable_layers(self) -> tuple:
        return tuple(l for l in LAYER_ORDER if self.for_layer(l).execute)

    @classmethod
    def parse(cls, text: str) -> "LayerPerms":
        """Parse ``S:r-- U:rw- K:---``; all three layers must be present."""
        found: Dict[Layer, PermSet] = {}
        for tok in text.split():
            letter, sep, perms = tok.partition(":")
            if not sep:
                raise ValueError(f"bad layer permission field {tok!r}")
            layer = Layer.from_letter(letter)
            if layer in found:
                raise ValueError(f"layer {letter} given twice")
            found[layer] = PermSet.parse(perms)
        if len(found) != 3:
            raise ValueError(f"need S, U and K permissions in {text!r}")
        return cls(found[Layer.SERVICES], found[Layer.UTILITIES], found[Layer.KERNEL])

    def render(self) -> str:
        return " ".join(f"{l.letter}:{self.for_layer(l).render()}" for l in LAYER_ORDER)

    def grants_append(self) -> bool:
        return any(self.for_layer(l).append for l in LAYER_ORDER)


@dataclass(frozen=True)
class Descriptor:
    suid: int
    length: int
    perms: LayerPerms
    gate_to: Optional[Layer] = None
    handler: bool = False

    def __str__(self) -> str:
        return f"Des[{self.suid:#x} len={self.length:#x} {self.perms.render()}]"


@dataclass(frozen=True)
class TypeEntry:
    type_id: int
    name: str
    perms: LayerPerms
    gate_to: Optional[Layer] = None
    handler: bool = False


@dataclass(frozen=True)
class GstEntry:
    suid: int
    length: int
    type_id: int


def check_type_entry(entry: TypeEntry) -> None:
    """Raise ValueError/AppendGranted if the type is not a legal table entry."""
    if entry.perms.grants_append():
        raise AppendGranted(f"type {entry.name}: append may not be granted")
    if entry.gate_to is not None:
        if entry.gate_to is Layer.SERVICES:
            raise ValueError(f"type {entry.name}: gate_to must be U or K")
        above = Layer(entry.gate_to + 1)
        if not entry.perms.for_layer(above).execute:
            raise ValueError(
                f"type {entry.name}: a gate to {entry.gate_to.letter} must be "
                f"executable from {above.letter}"
            )


class TypeTable:
    """type id -> TypeEntry, with a unique-name index."""

    def __init__(self) -> None:
        self._by_id: Dict[int, TypeEntry] = {}
        self._by_name: Dict[str, int] = {}

    def add(self, entry: TypeEntry) -> TypeEntry:
        check_type_entry(entry)
        if entry.name in self._by_name:
            raise DuplicateName(f"type {entry.name} declared twice")
        if entry.type_id in self._by_id:
            raise DuplicateName(f"type id {entry.type_id} used twice")
        self._by_id[entry.type_id] = entry
        self._by_name[entry.name] = entry.type_id
        return entry

    def get(self, type_id: int) -> TypeEntry:
        try:
            return self._by_id[type_id]
        except KeyError:
            raise UnknownType(f"no type with id {type_id}") from None

    def by_name(self, name: str) -> TypeEntry:
        try:
            return self._by_id[self._by_name[name]]
        except KeyError:
            raise UnknownType(f"no type named {name!r}") from None

    def next_id(self) -> int:
        return max(self._by_id, default=0) + 1

    def __iter__(self) -> Iterator[TypeEntry]:
        return iter(sorted(self._by_id.values(), key=lambda e: e.type_id))

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, type_id: int) -> bool:
        return type_id in self._by_id


class GlobalSegmentTable:
    """Authoritative SUID -> (length, type) map.

    SUIDs come from a monotonically increasing counter and are never handed
    out twice, even after the segment is deleted.
    """

    def __init__(self, next_suid: int = FIRST_SUID) -> None:
        self._entries: Dict[int, GstEntry] = {}
        self.next_suid = next_suid

    def allocate(self, length: int, type_id: int) -> GstEntry:
        suid = self.next_suid
        self.next_suid = (suid + 1) & SUID_MASK
        return self.insert(GstEntry(suid, length, type_id))

    def insert(self, entry: GstEntry) -> GstEntry:
        if entry.suid in self._entries:
            raise DuplicateSuid(f"SUID {entry.suid:#x} already in the GST")
        self._entries[entry.suid] = entry
        if entry.suid >= self.next_suid:
            self.next_suid = entry.suid + 1
        return entry

    def set_length(self, suid: int, length: int) -> None:
        old = gst_lookup(self, suid)
        self._entries[suid] = GstEntry(suid, length, old.type_id)

    def delete(self, suid: int) -> None:
        if suid not in self._entries:
            raise UnknownSuid(f"SUID {suid:#x} not in the GST")
        del self._entries[suid]

    def __iter__(self) -> Iterator[GstEntry]:
        return iter(sorted(self._entries.values(), key=lambda e: e.suid))

    def __contains__(self, suid: int) -> bool:
        return suid in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def gst_lookup(gst: GlobalSegmentTable, suid: int) -> GstEntry:
    try:
        return gst._entries[suid]
    except KeyError:
        raise UnknownSuid(f"SUID {suid:#x} not in the GST") from None


def type_permissions(tt: TypeTable, type_id: int, layer: Layer) -> PermSet:
    return tt.get(type_id).perms.for_layer(layer)


def build_descriptor(suid: int, gst: GlobalSegmentTable, tt: TypeTable) -> Descriptor:
    entry = gst_lookup(gst, suid)
    t = tt.get(entry.type_id)
    return Descriptor(suid=suid, length=entry.length, perms=t.perms, gate_to=t.gate_to, handler=t.handler)

