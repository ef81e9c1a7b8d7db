"""Trap dispatch, resume policies, and the default error handler.

Each trap kind has exactly one resume policy:

* ``LinkFault``  -> RETRY  (the faulting instruction runs again)
* ``UserTrap``   -> NEXT   (execution continues after the TRAP)
* everything else -> ALARM_AND_HALT
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional, Tuple

from .core import Layer, UnknownName, UnknownSuid, UnknownType
from .mmu import AccessKind, MemFault

if TYPE_CHECKING:  # pragma: no cover
    from .machine import Machine, ProcessState

MAX_NESTING = 4
ERROR_EXIT_BASE = 64


class TrapKind(enum.Enum):
    USER_TRAP = "UserTrap"
    LINK_FAULT = "LinkFault"
    BOUNDS = "Bounds"
    PERMISSION = "Permission"
    ILLEGAL_OPCODE = "IllegalOpcode"
    DIVIDE_BY_ZERO = "DivideByZero"
    STACK_FAULT = "StackFault"
    GATE_SEQUENCE_FAULT = "GateSequenceFault"
    # Terminal conditions that never get a handler of their own.
    LINK_UNRESOLVABLE = "LinkUnresolvable"
    FATAL_TRAP_NESTING = "FatalTrapNesting"


class ResumePolicy(enum.Enum):
    RETRY = "retry"
    NEXT = "next"
    ALARM_AND_HALT = "halt"


def resume_policy(kind: TrapKind) -> ResumePolicy:
    if kind is TrapKind.LINK_FAULT:
        return ResumePolicy.RETRY
    if kind is TrapKind.USER_TRAP:
        return ResumePolicy.NEXT
    return ResumePolicy.ALARM_AND_HALT


EXIT_ORDINAL = {
    TrapKind.BOUNDS: 0,
    TrapKind.PERMISSION: 1,
    TrapKind.ILLEGAL_OPCODE: 2,
    TrapKind.DIVIDE_BY_ZERO: 3,
    TrapKind.STACK_FAULT: 4,
    TrapKind.GATE_SEQUENCE_FAULT: 5,
    TrapKind.LINK_UNRESOLVABLE: 6,
    TrapKind.FATAL_TRAP_NESTING: 7,
}

ERROR_KINDS = frozenset(EXIT_ORDINAL) - {TrapKind.LINK_UNRESOLVABLE, TrapKind.FATAL_TRAP_NESTING}
BINDABLE_KINDS = (TrapKind.LINK_FAULT, TrapKind.USER_TRAP)


def exit_code(kind: TrapKind) -> int:
    return ERROR_EXIT_BASE + EXIT_ORDINAL[kind]


@dataclass(frozen=True)
class Trap:
    """A trap kind plus its payload.

    ``suid``/``offset`` locate the fault: the data byte for memory faults,
    otherwise the faulting instruction.
    """

    kind: TrapKind
    suid: int
    offset: int
    layer: Layer
    access: Optional[AccessKind] = None
    extra: Tuple[Tuple[str, object], ...] = ()

    @classmethod
    def from_mem(cls, mf: MemFault) -> "Trap":
        kind = TrapKind.BOUNDS if mf.kind.value == "Bounds" else TrapKind.PERMISSION
        return cls(kind, mf.suid, mf.offset, mf.layer, mf.access)

    def get(self, key: str, default=None):
        return dict(self.extra).get(key, default)

    def fields(self) -> dict:
        out = {"kind": self.kind.value, "suid": self.suid, "offset": self.offset, "layer": self.layer.letter}
        if self.access is not None:
            out["access"] = self.access.value
        out.update(self.extra)
        return out


class GuardFault(Exception):
    """Raised inside an instruction to abandon it and dispatch a trap."""

    def __init__(self, trap: Trap) -> None:
        super().__init__(f"{trap.kind.value} at {trap.suid:#x}+{trap.offset:#x}")
        self.trap = trap


@dataclass(frozen=True)
class HandlerBinding:
    """Where a trap kind goes: ``native`` or a guest segment entry point."""

    kind: TrapKind
    native: bool = True
    suid: int = 0
    entry: int = 0
    layer: Layer = Layer.UTILITIES

    def render(self) -> str:
        if self.native:
            return f"trap {self.kind.value} native"
        return f"trap {self.kind.value} guest suid={self.suid:#x} entry={self.entry:#x} layer={self.layer.letter}"


@dataclass
class TrapFrame:
    state: "ProcessState"
    trap: Trap
    guest: bool
    depths: Tuple[int, int, int] = (0, 0, 0)
    gate_count: int = 0
    handler_layer: Optional[Layer] = None


def _stack_depths(machine: "Machine") -> Tuple[int, int, int]:
    return tuple(len(machine.stacks[l]) for l in (Layer.SERVICES, Layer.UTILITIES, Layer.KERNEL))


def _fatal(machine: "Machine", trap: Trap) -> None:
    machine.emit("FAULT", **trap.fields())
    default_error_handler(machine, trap)


def _guest_link_frame_pending(machine: "Machine") -> bool:
    return any(f.guest and f.trap.kind is TrapKind.LINK_FAULT for f in machine.frames)


def dispatch(machine: "Machine", trap: Trap) -> None:
    """Transfer control for ``trap``; the machine is halted or resumable after."""
    st = machine.state
    if trap.kind in (TrapKind.LINK_UNRESOLVABLE, TrapKind.FATAL_TRAP_NESTING):
        _fatal(machine, trap)
        return
    if trap.kind in ERROR_KINDS:
        machine.emit("FAULT", **trap.fields())
        machine.emit(
            "TRAP", kind=trap.kind.value, suid=st.code.suid, offset=st.ip, layer=st.layer.letter, handler="native"
        )
        default_error_handler(machine, trap)
        return
    if len(machine.frames) >= MAX_NESTING:
        _fatal(machine, Trap(TrapKind.FATAL_TRAP_NESTING, st.code.suid, st.ip, st.layer,
                             extra=(("depth", len(machine.frames)), ("pending", trap.kind.value))))
        return

    binding = machine.bindings.get(trap.kind)
    guest = binding is not None and not binding.native
    if trap.kind is TrapKind.LINK_FAULT and _guest_link_frame_pending(machine):
        # The guest linker's own links are resolved natively, or it would recurse.
        guest = False
    extra = dict(trap.extra)
    machine.emit(
        "TRAP", kind=trap.kind.value, suid=trap.suid, offset=trap.offset, layer=trap.layer.letter,
        handler="guest" if guest else "native", **extra,
    )
    frame = TrapFrame(
        state=replace(st), trap=trap, guest=guest, depths=_stack_depths(machine), gate_count=len(machine.gates)
    )
    machine.frames.append(frame)

    if guest:
        from .core import build_descriptor

        frame.handler_layer = binding.layer
        handler = build_descriptor(binding.suid, machine.gst, machine.types)
        machine.emit("GATE", op="TRAP", from_=st.layer.letter, to=binding.layer.letter, seg=handler.suid)
        st.layer = binding.layer
        st.code = handler
        st.ip = binding.entry
        machine.linkage_for(handler)
        return

    if trap.kind is TrapKind.LINK_FAULT:
        from .linker import resolve_slot

        instance = machine.linkage[trap.suid]
        try:
            resolve_slot(machine, instance, trap.get("slot"), native=True)
        except (UnknownName, UnknownSuid, UnknownType):
            machine.frames.pop()
            _fatal(machine, unresolvable(trap))
            return
        machine.frames.pop()
        machine.emit("GATE", op="RESUME", from_=Layer.KERNEL.letter, to=st.layer.letter, seg=st.code.suid)
        return
    # Unbound user trap: nothing to do but continue after it.
    machine.frames.pop()
    st.ip += 4


def unresolvable(trap: Trap) -> Trap:
    return Trap(
        TrapKind.LINK_UNRESOLVABLE, trap.suid, trap.offset, trap.layer,
        extra=(("slot", trap.get("slot")), ("sym", trap.get("sym"))),
    )


def resume(machine: "Machine") -> None:
    """RESUME: pop the innermost frame and continue per its policy."""
    st = machine.state
    if not machine.frames:
        raise GuardFault(Trap(TrapKind.GATE_SEQUENCE_FAULT, st.code.suid, st.ip, st.layer,
                              extra=(("reason", "resume-without-trap"),)))
    frame = machine.frames[-1]
    if _stack_depths(machine) != frame.depths or len(machine.gates) != frame.gate_count:
        raise GuardFault(Trap(TrapKind.GATE_SEQUENCE_FAULT, st.code.suid, st.ip, st.layer,
                              extra=(("reason", "unbalanced-handler"),)))
    machine.frames.pop()
    saved = frame.state
    policy = resume_policy(frame.trap.kind)
    machine.emit("GATE", op="RESUME", from_=st.layer.letter, to=saved.layer.letter, seg=saved.code.suid)
    st.acc, st.x, st.zero, st.negative = saved.acc, saved.x, saved.zero, saved.negative
    st.layer, st.code = saved.layer, saved.code
    st.ip = saved.ip + 4 if policy is ResumePolicy.NEXT else saved.ip
    machine.jumped = True


def default_error_handler(machine: "Machine", trap: Trap) -> int:
    """Raise the alarm and halt with the kind's fixed exit code."""
    code = exit_code(trap.kind)
    machine.emit("ALARM", **trap.fields())
    machine.halt(code)
    return code
