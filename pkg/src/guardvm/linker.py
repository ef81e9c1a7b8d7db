"""Linkage templates, per-process linkage instances, and link-fault resolution.

A slot is either ``Unresolved(symbol)`` or a resolved ``Descriptor``.  Slot 0
always holds the instance's private scratch segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Tuple, Union

from .core import (
    Descriptor,
    GlobalSegmentTable,
    GuardError,
    Layer,
    LayerPerms,
    PermSet,
    TypeTable,
    build_descriptor,
    gst_lookup,
)
from .mmu import SegmentStore, bind_segment

if TYPE_CHECKING:  # pragma: no cover
    from .machine import Machine

DEFAULT_SCRATCH = 256
SCRATCH_PREFIX = "scratch."


@dataclass(frozen=True)
class ScratchDecl:
    size: int = DEFAULT_SCRATCH


@dataclass(frozen=True)
class Unresolved:
    symbol: str


@dataclass(frozen=True)
class LinkageTemplate:
    scratch: int = DEFAULT_SCRATCH
    externs: Tuple[str, ...] = ()

    @property
    def slot_count(self) -> int:
        return 1 + len(self.externs)

    def slots(self) -> Tuple[Union[ScratchDecl, Unresolved], ...]:
        return (ScratchDecl(self.scratch),) + tuple(Unresolved(s) for s in self.externs)

    def slot_of(self, symbol: str) -> int:
        return 1 + self.externs.index(symbol)


EMPTY_TEMPLATE = LinkageTemplate()


class BadSlot(GuardError):
    pass


class LinkFault(GuardError):
    """Fetching a slot that still holds a symbolic name."""

    def __init__(self, slot: int, symbol: str) -> None:
        super().__init__(f"slot {slot} is unresolved ({symbol})")
        self.slot = slot
        self.symbol = symbol


Slot = Union[Unresolved, Descriptor]


class LinkageInstance:
    def __init__(self, owner: Tuple[int, int], slots: List[Slot]) -> None:
        self.owner = owner
        self._slots = slots

    @property
    def code_suid(self) -> int:
        return self.owner[1]

    @property
    def slots(self) -> Tuple[Slot, ...]:
        return tuple(self._slots)

    def __len__(self) -> int:
        return len(self._slots)

    def resolve(self, index: int, d: Descriptor) -> None:
        if not isinstance(self._slots[index], Unresolved):
            raise GuardError(f"slot {index} is already resolved")
        self._slots[index] = d


def scratch_type_name(layers) -> str:
    return SCRATCH_PREFIX + "".join(l.letter for l in layers)


def scratch_perms(layers) -> LayerPerms:
    rw = PermSet(read=True, write=True)
    none = PermSet()
    return LayerPerms(
        services=rw if Layer.SERVICES in layers else none,
        utilities=rw if Layer.UTILITIES in layers else none,
        kernel=rw if Layer.KERNEL in layers else none,
    )


def instantiate_linkage(
    process: int,
    code_suid: int,
    template: LinkageTemplate,
    gst: GlobalSegmentTable,
    tt: TypeTable,
    store: SegmentStore,
) -> LinkageInstance:
    code_type = tt.get(gst_lookup(gst, code_suid).type_id)
    scratch_type = tt.by_name(scratch_type_name(code_type.perms.executable_layers()))
    entry = gst.allocate(template.scratch, scratch_type.type_id)
    bind_segment(store, entry.suid, bytes(template.scratch))
    slots: List[Slot] = [build_descriptor(entry.suid, gst, tt)]
    slots.extend(Unresolved(s) for s in template.externs)
    return LinkageInstance((process, code_suid), slots)


def fetch_slot(instance: LinkageInstance, index: int) -> Descriptor:
    if not 0 <= index < len(instance):
        raise BadSlot(f"slot {index} out of range (instance has {len(instance)})")
    slot = instance._slots[index]
    if isinstance(slot, Unresolved):
        raise LinkFault(index, slot.symbol)
    return slot


def link_event_fields(instance: LinkageInstance, slot: int, symbol: str, d: Descriptor) -> dict:
    return {
        "owner": instance.code_suid,
        "slot": slot,
        "sym": symbol,
        "suid": d.suid,
        "length": d.length,
        "S": d.perms.services.render(),
        "U": d.perms.utilities.render(),
        "K": d.perms.kernel.render(),
        "gate": d.gate_to.letter if d.gate_to is not None else "-",
        "handler": int(d.handler),
    }


def resolve_slot(machine: "Machine", instance: LinkageInstance, slot: int, native: bool = True) -> Descriptor:
    """name -> SUID -> GST -> Type Table -> Descriptor, written into ``slot``.

    The native path records its Utilities and Kernel phases as GATE events
    so the trace shows where each lookup ran.
    """
    pending = instance._slots[slot]
    if not isinstance(pending, Unresolved):
        return pending
    st = machine.state
    if native:
        machine.emit("GATE", op="LINKER", from_=st.layer.letter, to=Layer.UTILITIES.letter, seg=instance.code_suid)
    suid = machine.names.lookup(pending.symbol)
    if native:
        machine.emit("GATE", op="LINKER", from_=Layer.UTILITIES.letter, to=Layer.KERNEL.letter,
                     seg=instance.code_suid)
    d = build_descriptor(suid, machine.gst, machine.types)
    instance.resolve(slot, d)
    machine.emit("LINK", **link_event_fields(instance, slot, pending.symbol, d))
    return d
