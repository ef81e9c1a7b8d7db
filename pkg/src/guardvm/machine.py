"""The Instruction Layer interpreter: ProcessState, step and run."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import layers, traps
from .core import (
    Descriptor,
    GlobalSegmentTable,
    Layer,
    NotKernel,
    TypeTable,
    UnknownName,
    UnknownSuid,
    UnknownType,
    build_descriptor,
    gst_lookup,
)
from .isa import ALU_OPS, BRANCHES, IllegalOpcode, Instruction, Mode, Op, decode
from .layers import GateContext, LayerStack
from .linker import (
    EMPTY_TEMPLATE,
    BadSlot,
    LinkageInstance,
    LinkageTemplate,
    LinkFault,
    fetch_slot,
    instantiate_linkage,
    resolve_slot,
)
from .mmu import AccessKind, MemFault, SegmentStore, fetch_word, read_byte, resize_segment, write_byte
from .namespace import Event, EventLog, NameTable
from .traps import GuardFault, HandlerBinding, Trap, TrapFrame, TrapKind

WORD_MASK = (1 << 64) - 1
SIGN_BIT = 1 << 63
PROCESS_ID = 1
DEFAULT_MAX_STEPS = 100_000


@dataclass
class ProcessState:
    code: Descriptor
    ip: int = 0
    acc: int = 0
    x: int = 0
    zero: bool = False
    negative: bool = False
    layer: Layer = Layer.SERVICES


class Status(enum.Enum):
    CONTINUE = "continue"
    HALTED = "halted"
    FAULTED = "faulted"
    BUDGET_EXCEEDED = "budget-exceeded"


@dataclass
class StepOutcome:
    status: Status
    code: Optional[int] = None
    trap: Optional[TrapKind] = None
    events: List[Event] = field(default_factory=list)


@dataclass
class RunResult:
    status: Status
    code: Optional[int]
    steps: int
    events: Tuple[Event, ...]

    @property
    def halted(self) -> bool:
        return self.status is Status.HALTED


class Machine:
    """One process running over one loaded image."""

    def __init__(
        self,
        *,
        types: TypeTable,
        gst: GlobalSegmentTable,
        names: NameTable,
        store: SegmentStore,
        templates: Dict[int, LinkageTemplate],
        seg_names: Dict[int, str],
        bindings: Dict[TrapKind, HandlerBinding],
        entry: Tuple[int, int],
        input_bytes: bytes = b"",
        trace_steps: bool = False,
    ) -> None:
        self.types = types
        self.gst = gst
        self.names = names
        self.store = store
        self.templates = templates
        self.seg_names = seg_names
        self.bindings = bindings
        self.input = bytes(input_bytes)
        self.input_pos = 0
        self.output = bytearray()
        self.trace_steps = trace_steps
        self.log = EventLog()
        self.stacks: Dict[Layer, LayerStack] = {l: LayerStack(l) for l in Layer}
        self.gates: List[GateContext] = []
        self.frames: List[TrapFrame] = []
        self.linkage: Dict[int, LinkageInstance] = {}
        self.steps = 0
        self.halted: Optional[int] = None
        self.jumped = False
        self._pending: Optional[List[Tuple[str, dict]]] = None
        self._mem: Optional[str] = None
        code = build_descriptor(entry[0], gst, types)
        self.state = ProcessState(code=code, ip=entry[1], layer=Layer.SERVICES)
        self.linkage_for(code)

    # -- plumbing used by the other modules ---------------------------------

    def emit(self, kind: str, /, **values) -> None:
        if self._pending is not None:
            self._pending.append((kind, values))
        else:
            self.log.emit(self.steps, kind, **values)

    def halt(self, code: int) -> None:
        self.halted = code
        self.emit("HALT", code=code)

    def linkage_for(self, code: Descriptor) -> LinkageInstance:
        inst = self.linkage.get(code.suid)
        if inst is None:
            template = self.templates.get(code.suid, EMPTY_TEMPLATE)
            inst = instantiate_linkage(PROCESS_ID, code.suid, template, self.gst, self.types, self.store)
            self.linkage[code.suid] = inst
        return inst

    @property
    def current_linkage(self) -> LinkageInstance:
        return self.linkage_for(self.state.code)

    def segment_name(self, suid: int) -> str:
        return self.seg_names.get(suid, "-")

    @property
    def runnable(self) -> bool:
        return self.halted is None

    # -- faults --------------------------------------------------------------

    def _fault(self, kind: TrapKind, **extra) -> GuardFault:
        st = self.state
        return GuardFault(Trap(kind, st.code.suid, st.ip, st.layer, extra=tuple(extra.items())))

    def slot(self, index: int) -> Descriptor:
        inst = self.current_linkage
        try:
            return fetch_slot(inst, index)
        except LinkFault as lf:
            raise self._fault(TrapKind.LINK_FAULT, slot=lf.slot, sym=lf.symbol) from None
        except BadSlot:
            raise self._fault(TrapKind.ILLEGAL_OPCODE, reason="bad-slot", slot=index) from None

    def _read(self, d: Descriptor, offset: int) -> int:
        try:
            value = read_byte(self.store, d, offset, self.state.layer)
        except MemFault as mf:
            raise GuardFault(Trap.from_mem(mf)) from None
        except UnknownSuid:
            raise self._deleted(d, offset, AccessKind.READ) from None
        self._mem = f"R:{d.suid:#x}+{offset:#x}"
        return value

    def _write(self, d: Descriptor, offset: int, value: int) -> None:
        try:
            write_byte(self.store, d, offset, value, self.state.layer)
        except MemFault as mf:
            raise GuardFault(Trap.from_mem(mf)) from None
        except UnknownSuid:
            raise self._deleted(d, offset, AccessKind.WRITE) from None
        self._mem = f"W:{d.suid:#x}+{offset:#x}"

    def _deleted(self, d: Descriptor, offset: int, access: AccessKind) -> GuardFault:
        # A stale descriptor for a deleted segment: no bytes exist to reach.
        return GuardFault(Trap(TrapKind.BOUNDS, d.suid, offset, self.state.layer, access, (("reason", "deleted"),)))

    # -- execution -----------------------------------------------------------

    def step(self) -> StepOutcome:
        if self.halted is not None:
            raise RuntimeError("machine has halted")
        self.steps += 1
        start = len(self.log)
        trap: Optional[Trap] = None
        self._pending = []
        self._mem = None
        self.jumped = False
        st = self.state
        layer, code, ip = st.layer, st.code, st.ip
        try:
            insn = self._fetch()
            self._execute(insn)
        except GuardFault as gf:
            trap = gf.trap
            self._pending = None
            traps.dispatch(self, trap)
        else:
            pending, self._pending = self._pending, None
            if self.trace_steps:
                self._emit_step(layer, code, ip, insn)
            for kind, values in pending:
                self.log.emit(self.steps, kind, **values)
        events = self.log.since(start)
        if self.halted is not None:
            return StepOutcome(Status.HALTED, self.halted, trap.kind if trap else None, events)
        if trap is not None:
            return StepOutcome(Status.FAULTED, None, trap.kind, events)
        return StepOutcome(Status.CONTINUE, None, None, events)

    def run(self, max_steps: int = DEFAULT_MAX_STEPS) -> RunResult:
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        taken = 0
        while self.halted is None and taken < max_steps:
            self.step()
            taken += 1
        if self.halted is not None:
            return RunResult(Status.HALTED, self.halted, taken, self.log.events)
        return RunResult(Status.BUDGET_EXCEEDED, None, taken, self.log.events)

    def _emit_step(self, layer: Layer, code: Descriptor, ip: int, insn: Instruction) -> None:
        if insn.mode is Mode.IMMEDIATE:
            arg = f"#{insn.operand:#x}"
        elif insn.mode is Mode.SLOT_INDEXED:
            arg = f"{insn.operand:#x},X"
        elif insn.mode is Mode.SLOT_DIRECT:
            arg = f"{insn.operand:#x}"
        else:
            arg = "-"
        values = dict(
            layer=layer.letter, seg=self.segment_name(code.suid), suid=code.suid, off=ip,
            op=insn.op.name, arg=arg, acc=self.state.acc, x=self.state.x,
        )
        if self._mem is not None:
            values["mem"] = self._mem
        self.log.emit(self.steps, "STEP", **values)

    def _fetch(self) -> Instruction:
        st = self.state
        try:
            word = fetch_word(self.store, st.code, st.ip, st.layer)
        except MemFault as mf:
            raise GuardFault(Trap.from_mem(mf)) from None
        except UnknownSuid:
            raise self._deleted(st.code, st.ip, AccessKind.EXECUTE_FETCH) from None
        try:
            insn = decode(word)
        except IllegalOpcode:
            raise self._fault(TrapKind.ILLEGAL_OPCODE, word=word.hex()) from None
        kind = layers.check_restricted(insn.op, st.layer, st.code)
        if kind is not None:
            raise self._fault(kind, op=insn.op.name)
        return insn

    def _address(self, insn: Instruction) -> Tuple[Descriptor, int]:
        d = self.slot(insn.operand)
        return d, (self.state.x if insn.mode is Mode.SLOT_INDEXED else 0)

    def _value(self, insn: Instruction) -> int:
        if insn.mode is Mode.IMMEDIATE:
            return insn.operand
        d, off = self._address(insn)
        return self._read(d, off)

    def _execute(self, insn: Instruction) -> None:
        st = self.state
        op = insn.op
        if op is Op.LDA:
            st.acc = self._value(insn)
        elif op is Op.LDX:
            st.x = self._value(insn)
        elif op in ALU_OPS:
            self._alu(op, self._value(insn))
        elif op is Op.STA:
            d, off = self._address(insn)
            self._write(d, off, st.acc)
        elif op in BRANCHES:
            self._branch(op, insn.operand)
        elif op is Op.CALL:
            d, entry = self._address(insn)
            layers.call(self, d, entry)
        elif op is Op.RET:
            layers.ret(self)
        elif op is Op.ENTER:
            target = Layer(insn.operand) if insn.operand in (0, 1, 2) else None
            layers.enter(self, target)
        elif op is Op.EXIT:
            layers.exit_gate(self)
        elif op is Op.TRAP:
            raise self._fault(TrapKind.USER_TRAP, code=insn.operand)
        elif op is Op.RESUME:
            traps.resume(self)
        elif op is Op.IN:
            if self.input_pos < len(self.input):
                st.acc = self.input[self.input_pos]
                self.input_pos += 1
                st.zero = False
                self.emit("IO", ch="in", value=st.acc)
            else:
                st.acc = 0
                st.zero = True
                self.emit("IO", ch="in-eof", value=0)
            st.negative = False
        elif op is Op.OUT:
            self.output.append(st.acc & 0xFF)
            self.emit("IO", ch="out", value=st.acc & 0xFF)
        elif op is Op.RESOLVE:
            self._resolve_pending()
        elif op is Op.SEGLEN:
            d = self.slot(insn.operand)
            try:
                st.acc = gst_lookup(self.gst, d.suid).length
            except UnknownSuid:
                raise self._deleted(d, 0, AccessKind.READ) from None
        elif op is Op.ALARM:
            self.emit("ALARM", kind="Guest", suid=st.code.suid, offset=st.ip, layer=st.layer.letter, code=insn.operand)
        elif op is Op.LOGEV:
            self.emit("IO", ch="log", value=insn.operand)
        elif op is Op.HALT:
            self.halt(insn.operand)
            return
        elif op is Op.NOP:
            pass
        if not self.jumped:
            st.ip += 4

    def _alu(self, op: Op, v: int) -> None:
        st = self.state
        a = st.acc
        if op is Op.ADD:
            st.acc = (a + v) & WORD_MASK
        elif op is Op.SUB:
            st.acc = (a - v) & WORD_MASK
        elif op is Op.AND:
            st.acc = a & v
        elif op is Op.OR:
            st.acc = a | v
        elif op is Op.XOR:
            st.acc = a ^ v
        elif op is Op.CMP:
            r = (a - v) & WORD_MASK
            st.zero = r == 0
            st.negative = bool(r & SIGN_BIT)
        elif op is Op.DIV:
            if v == 0:
                raise self._fault(TrapKind.DIVIDE_BY_ZERO)
            st.acc = a // v

    def _branch(self, op: Op, target: int) -> None:
        st = self.state
        if target % 4:
            raise self._fault(TrapKind.ILLEGAL_OPCODE, reason="misaligned-branch", target=target)
        taken = (
            op is Op.JMP
            or (op is Op.BEQ and st.zero)
            or (op is Op.BNE and not st.zero)
            or (op is Op.BLT and st.negative)
            or (op is Op.BGE and not st.negative)
        )
        if taken:
            st.ip = target
            self.jumped = True

    def _resolve_pending(self) -> None:
        for frame in reversed(self.frames):
            if frame.trap.kind is TrapKind.LINK_FAULT:
                break
        else:
            raise self._fault(TrapKind.GATE_SEQUENCE_FAULT, reason="resolve-without-link-fault")
        trap = frame.trap
        inst = self.linkage[trap.suid]
        try:
            resolve_slot(self, inst, trap.get("slot"), native=False)
        except (UnknownName, UnknownSuid, UnknownType):
            raise GuardFault(traps.unresolvable(trap)) from None

    # -- administration and kernel services ----------------------------------

    def kernel_resize(self, suid: int, new_length: int) -> None:
        """Resize a segment on the Kernel execution path.

        Outside the Kernel layer this is a Permission fault (alarm and halt).
        """
        try:
            resize_segment(self.store, self.gst, suid, new_length, self.state.layer)
        except NotKernel:
            st = self.state
            self._pending = None
            traps.dispatch(self, Trap(TrapKind.PERMISSION, suid, 0, st.layer, extra=(("op", "RESIZE"),)))

    def admin_rename(self, old: str, new: str) -> None:
        self.names.rename(old, new)
        suid = self.names.lookup(new)
        if self.seg_names.get(suid) == old:
            self.seg_names[suid] = new

    def admin_bind(self, name: str, data: bytes, type_name: str, template: Optional[LinkageTemplate] = None) -> int:
        t = self.types.by_name(type_name)
        entry = self.gst.allocate(len(data), t.type_id)
        self.store.bind(entry.suid, data)
        self.names.bind(name, entry.suid)
        self.seg_names[entry.suid] = name
        if template is not None:
            self.templates[entry.suid] = template
        return entry.suid

    def admin_delete(self, name: str) -> int:
        suid = self.names.unbind(name)
        self.gst.delete(suid)
        self.store.unbind(suid)
        return suid
