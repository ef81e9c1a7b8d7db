"""Layer Register transitions, per-layer stacks, and gate discipline.

A process moves down a layer only by calling a gate segment and executing
ENTER there; it moves back up only by EXIT in that same gate activation.
Stacks hold nothing but (Descriptor, offset) return points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Tuple

from .core import Descriptor, Layer
from .isa import Op, is_restricted
from .mmu import AccessKind, translate
from .traps import GuardFault, Trap, TrapKind

if TYPE_CHECKING:  # pragma: no cover
    from .machine import Machine

MAX_STACK_DEPTH = 1024


class LayerStack:
    def __init__(self, layer: Layer) -> None:
        self.layer = layer
        self._frames: List[Tuple[Descriptor, int]] = []

    def push(self, code: Descriptor, offset: int) -> None:
        if not isinstance(code, Descriptor) or not isinstance(offset, int):
            raise TypeError("layer stacks hold only (Descriptor, offset) pairs")
        if len(self._frames) >= MAX_STACK_DEPTH:
            raise OverflowError(f"{self.layer.name} stack is full")
        self._frames.append((code, offset))

    def pop(self) -> Tuple[Descriptor, int]:
        return self._frames.pop()

    def frames(self) -> Tuple[Tuple[Descriptor, int], ...]:
        return tuple(self._frames)

    def copy(self) -> "LayerStack":
        new = LayerStack(self.layer)
        new._frames = list(self._frames)
        return new

    def __len__(self) -> int:
        return len(self._frames)


@dataclass(frozen=True)
class GateContext:
    entered_from: Layer
    via: Descriptor
    depth: int  # depth of the target layer's stack at ENTER


def _fault(machine: "Machine", kind: TrapKind, **extra) -> GuardFault:
    st = machine.state
    return GuardFault(Trap(kind, st.code.suid, st.ip, st.layer, extra=tuple(extra.items())))


def call(machine: "Machine", target: Descriptor, entry: int) -> None:
    st = machine.state
    mf = translate(target, entry, AccessKind.EXECUTE_FETCH, st.layer)
    if mf is not None:
        raise GuardFault(Trap.from_mem(mf))
    stack = machine.stacks[st.layer]
    if len(stack) >= MAX_STACK_DEPTH:
        raise _fault(machine, TrapKind.STACK_FAULT, reason="overflow")
    machine.linkage_for(target)
    stack.push(st.code, st.ip + 4)
    st.code = target
    st.ip = entry
    machine.jumped = True


def ret(machine: "Machine") -> None:
    st = machine.state
    stack = machine.stacks[st.layer]
    if not len(stack):
        raise _fault(machine, TrapKind.STACK_FAULT, reason="underflow")
    code, offset = stack.pop()
    machine.linkage_for(code)
    st.code = code
    st.ip = offset
    machine.jumped = True


def enter(machine: "Machine", target: Optional[Layer]) -> None:
    st = machine.state
    code = st.code
    if code.gate_to is None:
        raise _fault(machine, TrapKind.GATE_SEQUENCE_FAULT, reason="not-a-gate")
    if target is None or target is not code.gate_to:
        raise _fault(machine, TrapKind.GATE_SEQUENCE_FAULT, reason="wrong-target")
    if st.layer.below() is not target:
        raise _fault(machine, TrapKind.GATE_SEQUENCE_FAULT, reason="not-one-layer-down")
    machine.gates.append(GateContext(st.layer, code, len(machine.stacks[target])))
    machine.emit("GATE", op="ENTER", from_=st.layer.letter, to=target.letter, seg=code.suid)
    st.layer = target


def exit_gate(machine: "Machine") -> None:
    st = machine.state
    if not machine.gates:
        raise _fault(machine, TrapKind.GATE_SEQUENCE_FAULT, reason="exit-without-enter")
    ctx = machine.gates[-1]
    if (
        ctx.via.suid != st.code.suid
        or st.layer is not ctx.via.gate_to
        or len(machine.stacks[st.layer]) != ctx.depth
    ):
        raise _fault(machine, TrapKind.GATE_SEQUENCE_FAULT, reason="exit-outside-activation")
    machine.gates.pop()
    machine.emit("GATE", op="EXIT", from_=st.layer.letter, to=ctx.entered_from.letter, seg=st.code.suid)
    st.layer = ctx.entered_from


def check_restricted(opcode: int, layer: Layer, code: Descriptor) -> Optional[TrapKind]:
    """Return the fault kind this instruction earns here, or None."""
    if is_restricted(opcode) and layer is not Layer.KERNEL:
        return TrapKind.PERMISSION
    if opcode in (Op.ENTER, Op.EXIT) and code.gate_to is None:
        return TrapKind.GATE_SEQUENCE_FAULT
    if opcode == Op.RESUME and not code.handler:
        return TrapKind.GATE_SEQUENCE_FAULT
    return None
