"""Byte-level mediation: bounds check, then per-layer permission check.

The segment store is a flat SUID -> bytearray map; nothing here models
paging or caches.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .core import (
    Descriptor,
    DuplicateSuid,
    GlobalSegmentTable,
    Layer,
    NotKernel,
    UnknownSuid,
    gst_lookup,
)


class AccessKind(enum.Enum):
    READ = "R"
    WRITE = "W"
    EXECUTE_FETCH = "X"


class FaultKind(enum.Enum):
    BOUNDS = "Bounds"
    PERMISSION = "Permission"


@dataclass(eq=True)
class MemFault(Exception):
    kind: FaultKind
    suid: int
    offset: int
    access: AccessKind
    layer: Layer

    def __str__(self) -> str:
        return (
            f"{self.kind.value} fault: suid={self.suid:#x} offset={self.offset:#x} "
            f"access={self.access.value} layer={self.layer.letter}"
        )


def translate(d: Descriptor, offset: int, access: AccessKind, layer: Layer) -> Optional[MemFault]:
    """Return None if the access is allowed, else the (single) fault."""
    if offset < 0 or offset >= d.length:
        return MemFault(FaultKind.BOUNDS, d.suid, offset, access, layer)
    perms = d.perms.for_layer(layer)
    if access is AccessKind.READ:
        ok = perms.read
    elif access is AccessKind.WRITE:
        ok = perms.write
    else:
        ok = perms.execute
    if not ok:
        return MemFault(FaultKind.PERMISSION, d.suid, offset, access, layer)
    return None


class SegmentStore:
    """Physical contents of every live segment.

    ``audit``, when a list, receives ``("check", suid, offset, access, layer)``
    after every successful translation and ``("touch", suid, offset, access)``
    for every raw byte access, so a test can prove each touch was mediated.
    """

    def __init__(self) -> None:
        self._data: Dict[int, bytearray] = {}
        self.audit: Optional[List[Tuple]] = None

    def bind(self, suid: int, initial: bytes) -> None:
        if suid in self._data:
            raise DuplicateSuid(f"SUID {suid:#x} already has storage")
        self._data[suid] = bytearray(initial)

    def unbind(self, suid: int) -> None:
        if suid not in self._data:
            raise UnknownSuid(f"SUID {suid:#x} has no storage")
        del self._data[suid]

    def length(self, suid: int) -> int:
        return len(self._segment(suid))

    def snapshot(self, suid: int) -> bytes:
        return bytes(self._segment(suid))

    def suids(self) -> List[int]:
        return sorted(self._data)

    def copy(self) -> "SegmentStore":
        new = SegmentStore()
        new._data = {k: bytearray(v) for k, v in self._data.items()}
        return new

    def _segment(self, suid: int) -> bytearray:
        try:
            return self._data[suid]
        except KeyError:
            raise UnknownSuid(f"SUID {suid:#x} has no storage") from None

    def _get(self, suid: int, offset: int, access: AccessKind) -> int:
        seg = self._segment(suid)
        if self.audit is not None:
            self.audit.append(("touch", suid, offset, access))
        return seg[offset]

    def _set(self, suid: int, offset: int, value: int) -> None:
        seg = self._segment(suid)
        if self.audit is not None:
            self.audit.append(("touch", suid, offset, AccessKind.WRITE))
        seg[offset] = value


def _checked(store: SegmentStore, d: Descriptor, offset: int, access: AccessKind, layer: Layer) -> None:
    fault = translate(d, offset, access, layer)
    if fault is None and offset >= len(store._segment(d.suid)):
        # Descriptor is a snapshot; the segment may have shrunk since.
        fault = MemFault(FaultKind.BOUNDS, d.suid, offset, access, layer)
    if fault is not None:
        raise fault
    if store.audit is not None:
        store.audit.append(("check", d.suid, offset, access, layer))


def read_byte(store: SegmentStore, d: Descriptor, offset: int, layer: Layer) -> int:
    _checked(store, d, offset, AccessKind.READ, layer)
    return store._get(d.suid, offset, AccessKind.READ)


def write_byte(store: SegmentStore, d: Descriptor, offset: int, value: int, layer: Layer) -> None:
    _checked(store, d, offset, AccessKind.WRITE, layer)
    store._set(d.suid, offset, value & 0xFF)


def fetch_word(store: SegmentStore, d: Descriptor, offset: int, layer: Layer) -> bytes:
    """Instruction fetch: four bytes, each mediated with execute access."""
    out = bytearray(4)
    for i in range(4):
        off = offset + i
        _checked(store, d, off, AccessKind.EXECUTE_FETCH, layer)
        out[i] = store._get(d.suid, off, AccessKind.EXECUTE_FETCH)
    return bytes(out)


def bind_segment(store: SegmentStore, suid: int, initial: bytes) -> None:
    store.bind(suid, initial)


def resize_segment(
    store: SegmentStore, gst: GlobalSegmentTable, suid: int, new_length: int, layer: Layer
) -> None:
    """Grow (zero-fill) or shrink (truncate) a segment; Kernel only."""
    if layer is not Layer.KERNEL:
        raise NotKernel(f"resize of {suid:#x} attempted at layer {layer.letter}")
    if new_length < 0:
        raise ValueError("negative segment length")
    gst_lookup(gst, suid)
    seg = store._segment(suid)
    if new_length > len(seg):
        seg.extend(bytes(new_length - len(seg)))
    else:
        del seg[new_length:]
    gst.set_length(suid, new_length)
