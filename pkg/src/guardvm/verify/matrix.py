"""Exhaustive permission-matrix check of the MMU against a membership oracle.

The oracle knows nothing about PermSet or LayerPerms: a permission set is a
three-character string like ``r-x`` and an access is allowed when its letter
appears in the string and the offset is inside the segment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from ..core import Descriptor, Layer, LayerPerms, PermSet
from ..mmu import AccessKind, translate

SEGMENT_LENGTH = 16
U64_MAX = (1 << 64) - 1

LAYER_LETTERS = ("S", "U", "K")
ACCESS_LETTERS = ("r", "w", "x")
PERM_STRINGS = tuple(
    "".join(c if on else "-" for c, on in zip("rwx", bits)) for bits in itertools.product((0, 1), repeat=3)
)


def boundary_offsets(length: int) -> Tuple[int, ...]:
    return (0, length - 1, length, length + 1, U64_MAX)


def oracle(perm: str, access: str, offset: int, length: int) -> str:
    if not 0 <= offset < length:
        return "Bounds"
    return "Ok" if access in perm else "Permission"


def _complement(perm: str) -> str:
    return "".join("-" if c != "-" else "rwx"[i] for i, c in enumerate(perm))


def _descriptor(layer: str, perm: str, length: int) -> Descriptor:
    # The tested layer gets ``perm``; the other two get its complement, so
    # reading the wrong layer's field cannot go unnoticed.
    sets = {}
    for l in LAYER_LETTERS:
        p = perm if l == layer else _complement(perm)
        sets[l] = PermSet(read=p[0] == "r", write=p[1] == "w", execute=p[2] == "x")
    return Descriptor(0x1000, length, LayerPerms(sets["S"], sets["U"], sets["K"]))


_ACCESS = {"r": AccessKind.READ, "w": AccessKind.WRITE, "x": AccessKind.EXECUTE_FETCH}


@dataclass
class Mismatch:
    layer: str
    access: str
    perm: str
    offset: int
    expected: str
    actual: str

    def __str__(self) -> str:
        return (f"layer={self.layer} access={self.access} perms={self.perm} offset={self.offset:#x}: "
                f"expected {self.expected}, got {self.actual}")


@dataclass
class MatrixReport:
    cases: int = 0
    checks: int = 0
    mismatches: List[Mismatch] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    @property
    def first_mismatch(self) -> Optional[Mismatch]:
        return self.mismatches[0] if self.mismatches else None


def permission_matrix_check(length: int = SEGMENT_LENGTH) -> MatrixReport:
    report = MatrixReport()
    for layer, access, perm in itertools.product(LAYER_LETTERS, ACCESS_LETTERS, PERM_STRINGS):
        report.cases += 1
        d = _descriptor(layer, perm, length)
        for offset in boundary_offsets(length):
            report.checks += 1
            fault = translate(d, offset, _ACCESS[access], Layer.from_letter(layer))
            actual = "Ok" if fault is None else fault.kind.value
            expected = oracle(perm, access, offset, length)
            if actual != expected:
                report.mismatches.append(Mismatch(layer, access, perm, offset, expected, actual))
    return report
