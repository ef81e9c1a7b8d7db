"""Random-program fuzzing against an independent shadow model.

The shadow model is a second, deliberately naive interpreter for Services
code.  It has its own opcode table, keeps segments as flat byte arrays and
takes permissions straight from the generator's description of the image
(a ``r-x`` style string per segment).  After every step the real machine
and the shadow must agree on registers, output and every byte of memory,
and they must agree on which fault (if any) ends the run.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Set, Tuple

from ..assembler import ObjectUnit
from ..core import LayerPerms
from ..image import Manifest, SegmentDecl, TypeDecl, build_image, load_image
from ..linker import LinkageTemplate
from .audit import audit_events

FIRST = 0x1000
MASK = (1 << 64) - 1
DEFAULT_BUDGET = 200
IMPLICIT_SCRATCH = 256
MAX_DEPTH = 1024

# opcode -> (mnemonic, legal mode numbers); 0 imm, 1 slot+X, 2 slot, 3 none
OPCODES: Dict[int, Tuple[str, str]] = {
    0x00: ("HALT", "0"), 0x01: ("NOP", "3"),
    0x10: ("LDA", "012"), 0x11: ("STA", "12"), 0x12: ("LDX", "012"),
    0x20: ("ADD", "012"), 0x21: ("SUB", "012"), 0x22: ("AND", "012"), 0x23: ("OR", "012"),
    0x24: ("XOR", "012"), 0x25: ("CMP", "012"), 0x26: ("DIV", "012"),
    0x30: ("JMP", "0"), 0x31: ("BEQ", "0"), 0x32: ("BNE", "0"), 0x33: ("BLT", "0"), 0x34: ("BGE", "0"),
    0x40: ("CALL", "12"), 0x41: ("RET", "3"), 0x42: ("ENTER", "0"), 0x43: ("EXIT", "3"),
    0x50: ("TRAP", "0"), 0x51: ("RESUME", "3"), 0x60: ("IN", "3"), 0x61: ("OUT", "3"),
    0x70: ("RESOLVE", "3"), 0x71: ("SEGLEN", "2"), 0x72: ("ALARM", "0"), 0x73: ("LOGEV", "0"),
}
HALT_CODES = {
    "Bounds": 64, "Permission": 65, "IllegalOpcode": 66, "DivideByZero": 67,
    "StackFault": 68, "GateSequenceFault": 69, "LinkUnresolvable": 70,
}
PERMS = ("---", "r--", "-w-", "rw-", "--x", "r-x", "-wx", "rwx")


@dataclass
class DataSpec:
    name: str
    perm: str
    content: bytes


@dataclass
class ProgramSpec:
    index: int
    code: bytes
    scratch: int
    externs: Tuple[str, ...]
    data: Tuple[DataSpec, ...]
    input: bytes = b""

    def words(self) -> List[bytes]:
        return [self.code[i:i + 4] for i in range(0, len(self.code), 4)]


# -- generation ----------------------------------------------------------------


def _word(op: int, mode: int, operand: int) -> bytes:
    return bytes((op, mode, operand & 0xFF, (operand >> 8) & 0xFF))


def _instruction(rng: random.Random, n: int, slots: int, arith_only: bool) -> bytes:
    def target() -> int:
        t = rng.randrange(0, n + 1) * 4
        return t + 2 if rng.random() < 0.05 else t

    if arith_only:
        kind = rng.choice(["ldx", "ldai", "alui", "alui", "branch", "branch", "nop", "halt"])
    else:
        kind = rng.choices(
            ["ldx", "ldai", "alui", "load", "load", "store", "store", "branch", "call", "ret", "io",
             "trap", "halt", "restricted", "gate", "raw"],
            weights=[8, 4, 6, 10, 6, 8, 4, 8, 3, 2, 4, 2, 1, 1, 1, 2],
        )[0]
    def slot() -> int:
        # now and then one past the end, on purpose
        return slots if rng.random() < 0.03 else rng.randrange(0, slots)

    if kind == "ldx":
        return _word(0x12, 0, rng.choice([0, 1, 2, 3, 7, 15, 16, 255, rng.randrange(0x10000)]))
    if kind == "ldai":
        return _word(0x10, 0, rng.randrange(0x10000))
    if kind == "alui":
        op = rng.choice([0x20, 0x21, 0x22, 0x23, 0x24, 0x25, 0x26])
        return _word(op, 0, rng.choice([0, 1, 2, rng.randrange(0x10000)]))
    if kind == "load":
        return _word(rng.choice([0x10, 0x12, 0x20, 0x21, 0x25, 0x26]), rng.choice([1, 2]), slot())
    if kind == "store":
        return _word(0x11, rng.choice([1, 2]), slot())
    if kind == "branch":
        return _word(rng.choice([0x30, 0x31, 0x32, 0x33, 0x34]), 0, target())
    if kind == "call":
        return _word(0x40, rng.choice([1, 2]), slot())
    if kind == "ret":
        return _word(0x41, 3, 0)
    if kind == "io":
        return _word(rng.choice([0x60, 0x61, 0x61, 0x01]), 3, 0)
    if kind == "trap":
        return _word(0x50, 0, rng.randrange(8))
    if kind == "halt":
        return _word(0x00, 0, rng.randrange(4))
    if kind == "restricted":
        return rng.choice([_word(0x70, 3, 0), _word(0x71, 2, slot()), _word(0x72, 0, 1), _word(0x73, 0, 2)])
    if kind == "gate":
        return rng.choice([_word(0x42, 0, rng.randrange(4)), _word(0x43, 3, 0), _word(0x51, 3, 0)])
    return bytes(rng.randrange(256) for _ in range(4))


def generate(rng: random.Random, index: int, style: str = "mixed") -> ProgramSpec:
    """One random image description.  ``style`` is mixed, arith or raw."""
    data = tuple(
        DataSpec(f"d{i}", rng.choice(PERMS), bytes(rng.randrange(256) for _ in range(rng.choice([0, 1, 2, 4, 8, 16]))))
        for i in range(rng.randint(0, 3))
    )
    externs = [d.name for d in data]
    if rng.random() < 0.3:
        externs.append("main")
    if rng.random() < 0.2:
        externs.append("ghost")  # never bound
    rng.shuffle(externs)
    n = rng.randint(1, 24)
    if style == "raw":
        code = bytes(rng.randrange(256) for _ in range(4 * n))
    else:
        code = b"".join(_instruction(rng, n, 1 + len(externs), style == "arith") for _ in range(n))
    return ProgramSpec(index, code, rng.choice([1, 4, 16]), tuple(externs), data,
                       bytes(rng.randrange(256) for _ in range(rng.randint(0, 4))))


def spec_image(spec: ProgramSpec):
    """Build the real image for a spec, through the ordinary image builder."""
    m = Manifest(name=f"fuzz{spec.index}", where=f"<fuzz {spec.index}>")
    m.types.append(TypeDecl("code", LayerPerms.parse("S:--x U:--- K:---")))
    for perm in sorted({d.perm for d in spec.data}):
        m.types.append(TypeDecl(_type_name(perm), LayerPerms.parse(f"S:{perm} U:--- K:---")))
    unit = ObjectUnit("main", "code", spec.code, LinkageTemplate(spec.scratch, spec.externs), {})
    m.segments.append(SegmentDecl("main", "code", "unit", unit))
    for d in spec.data:
        m.segments.append(SegmentDecl(d.name, _type_name(d.perm), "data", d.content))
    m.entry = ("main", None)
    m.input = spec.input
    return build_image(m)


def _type_name(perm: str) -> str:
    return "data_" + perm.replace("-", "_")


# -- shadow model ----------------------------------------------------------------


class _Fault(Exception):
    def __init__(self, kind: str, suid: int, offset: int) -> None:
        super().__init__(kind)
        self.kind, self.suid, self.offset = kind, suid, offset


class _Unlinked(Exception):
    def __init__(self, symbol: str) -> None:
        super().__init__(symbol)
        self.symbol = symbol


class Shadow:
    """Services-only reference interpreter for a ProgramSpec."""

    def __init__(self, spec: ProgramSpec) -> None:
        self.mem: Dict[int, bytearray] = {FIRST: bytearray(spec.code)}
        self.perm: Dict[int, str] = {FIRST: "--x"}
        self.names: Dict[str, int] = {"main": FIRST}
        for i, d in enumerate(spec.data, 1):
            self.mem[FIRST + i] = bytearray(d.content)
            self.perm[FIRST + i] = d.perm
            self.names[d.name] = FIRST + i
        self.templates = {FIRST: (spec.scratch, spec.externs)}
        self.next_suid = FIRST + 1 + len(spec.data)
        self.linkage: Dict[int, Tuple[int, Set[str]]] = {}
        self.code, self.ip = FIRST, 0
        self.acc = self.x = 0
        self.zero = self.neg = False
        self.stack: List[Tuple[int, int]] = []
        self.input, self.pos = spec.input, 0
        self.output = bytearray()
        self.halted: Optional[int] = None
        self.fault: Optional[Tuple[str, int, int]] = None
        self.links = 0
        self._link(FIRST)

    def _link(self, code: int) -> None:
        if code not in self.linkage:
            size = self.templates.get(code, (IMPLICIT_SCRATCH, ()))[0]
            self.mem[self.next_suid] = bytearray(size)
            self.perm[self.next_suid] = "rw-"
            self.linkage[code] = (self.next_suid, set())
            self.next_suid += 1

    def _check(self, suid: int, offset: int, access: str) -> None:
        if offset >= len(self.mem[suid]):
            raise _Fault("Bounds", suid, offset)
        if access not in self.perm[suid]:
            raise _Fault("Permission", suid, offset)

    def _here(self, kind: str) -> _Fault:
        return _Fault(kind, self.code, self.ip)

    def _slot(self, n: int) -> int:
        externs = self.templates.get(self.code, (0, ()))[1]
        if n > len(externs):
            raise self._here("IllegalOpcode")
        scratch, resolved = self.linkage[self.code]
        if n == 0:
            return scratch
        sym = externs[n - 1]
        if sym not in resolved:
            raise _Unlinked(sym)
        return self.names[sym]

    def _read(self, mode: int, operand: int) -> int:
        if mode == 0:
            return operand
        suid = self._slot(operand)
        off = self.x if mode == 1 else 0
        self._check(suid, off, "r")
        return self.mem[suid][off]

    def step(self) -> None:
        try:
            self._step()
        except _Unlinked as u:
            if u.symbol in self.names:
                self.linkage[self.code][1].add(u.symbol)
                self.links += 1
            else:
                self.fault = ("LinkUnresolvable", self.code, self.ip)
                self.halted = HALT_CODES["LinkUnresolvable"]
        except _Fault as f:
            self.fault = (f.kind, f.suid, f.offset)
            self.halted = HALT_CODES[f.kind]

    def _step(self) -> None:
        word = []
        for i in range(4):
            self._check(self.code, self.ip + i, "x")
            word.append(self.mem[self.code][self.ip + i])
        op, mode, operand = word[0], word[1], word[2] | word[3] << 8
        if op not in OPCODES or str(mode) not in OPCODES[op][1] or (mode == 3 and operand):
            raise self._here("IllegalOpcode")
        name = OPCODES[op][0]
        if 0x70 <= op <= 0x7F:
            raise self._here("Permission")
        if name in ("ENTER", "EXIT", "RESUME"):
            raise self._here("GateSequenceFault")
        nxt = self.ip + 4
        if name == "HALT":
            self.halted = operand
            return
        if name in ("LDA", "LDX"):
            v = self._read(mode, operand)
            if name == "LDA":
                self.acc = v
            else:
                self.x = v
        elif name == "STA":
            suid = self._slot(operand)
            off = self.x if mode == 1 else 0
            self._check(suid, off, "w")
            self.mem[suid][off] = self.acc & 0xFF
        elif name in ("ADD", "SUB", "AND", "OR", "XOR", "CMP", "DIV"):
            v = self._read(mode, operand)
            a = self.acc
            if name == "ADD":
                self.acc = (a + v) & MASK
            elif name == "SUB":
                self.acc = (a - v) & MASK
            elif name == "AND":
                self.acc = a & v
            elif name == "OR":
                self.acc = a | v
            elif name == "XOR":
                self.acc = a ^ v
            elif name == "CMP":
                d = (a - v) & MASK
                self.zero, self.neg = d == 0, d >= 1 << 63
            else:
                if v == 0:
                    raise self._here("DivideByZero")
                self.acc = a // v
        elif name in ("JMP", "BEQ", "BNE", "BLT", "BGE"):
            if operand % 4:
                raise self._here("IllegalOpcode")
            taken = {"JMP": True, "BEQ": self.zero, "BNE": not self.zero,
                     "BLT": self.neg, "BGE": not self.neg}[name]
            if taken:
                nxt = operand
        elif name == "CALL":
            target = self._slot(operand)
            entry = self.x if mode == 1 else 0
            self._check(target, entry, "x")
            if len(self.stack) >= MAX_DEPTH:
                raise self._here("StackFault")
            self._link(target)
            self.stack.append((self.code, self.ip + 4))
            self.code, nxt = target, entry
        elif name == "RET":
            if not self.stack:
                raise self._here("StackFault")
            self.code, nxt = self.stack.pop()
        elif name == "IN":
            if self.pos < len(self.input):
                self.acc, self.zero = self.input[self.pos], False
                self.pos += 1
            else:
                self.acc, self.zero = 0, True
            self.neg = False
        elif name == "OUT":
            self.output.append(self.acc & 0xFF)
        # NOP and an unbound TRAP just move on
        self.ip = nxt


# -- running and comparing -------------------------------------------------------


@dataclass
class Divergence:
    index: int
    step: int
    what: str
    spec: Optional[ProgramSpec] = None

    def __str__(self) -> str:
        code = self.spec.code.hex() if self.spec else "?"
        return f"program {self.index} step {self.step}: {self.what} (code {code})"


@dataclass
class FuzzReport:
    seed: int
    count: int
    programs: int = 0
    steps: int = 0
    halted: int = 0
    faulted: int = 0
    budget: int = 0
    links: int = 0
    divergences: List[Divergence] = field(default_factory=list)
    host_faults: List[Divergence] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.divergences and not self.host_faults

    def summary(self) -> str:
        return (f"fuzz seed={self.seed} programs={self.programs} steps={self.steps} halted={self.halted} "
                f"faulted={self.faulted} budget={self.budget} links={self.links} "
                f"divergences={len(self.divergences)} host_faults={len(self.host_faults)} "
                f"time={self.elapsed:.1f}s")


def _state(m) -> tuple:
    st = m.state
    return (st.code.suid, st.ip, st.acc, st.x, st.zero, st.negative, bytes(m.output))


def _shadow_state(s: Shadow) -> tuple:
    return (s.code, s.ip, s.acc, s.x, s.zero, s.neg, bytes(s.output))


def check_program(spec: ProgramSpec, budget: int = DEFAULT_BUDGET, audit: bool = True) -> Tuple[Optional[str], dict]:
    """Run one spec on both interpreters.  Returns (problem, stats).

    A problem string starting with ``host:`` is a Python exception escaping
    the machine; anything else is a divergence.
    """
    stats = {"steps": 0, "outcome": "budget", "links": 0}
    machine = load_image(spec_image(spec))
    shadow = Shadow(spec)
    for n in range(1, budget + 1):
        try:
            machine.step()
        except Exception as exc:  # noqa: BLE001 - any escape is a finding
            return f"host: {type(exc).__name__}: {exc}", stats
        shadow.step()
        stats["steps"] = n
        if (machine.halted is None) != (shadow.halted is None):
            return f"step {n}: halted {machine.halted} vs shadow {shadow.halted} ({shadow.fault})", stats
        if machine.halted is None and _state(machine) != _shadow_state(shadow):
            return f"step {n}: state {_state(machine)} vs shadow {_shadow_state(shadow)}", stats
        if set(machine.store.suids()) != set(shadow.mem):
            return f"step {n}: segments {machine.store.suids()} vs shadow {sorted(shadow.mem)}", stats
        for suid, data in shadow.mem.items():
            if machine.store.snapshot(suid) != data:
                return f"step {n}: memory of {suid:#x} differs", stats
        if machine.halted is not None:
            break
    events = machine.log.events
    faults = [i for i, e in enumerate(events) if e.kind == "FAULT"]
    links = [e for e in events if e.kind == "LINK"]
    stats["links"] = len(links)
    if len(links) != shadow.links:
        return f"{len(links)} LINK events, shadow expected {shadow.links}", stats
    if shadow.fault is None:
        if faults:
            return f"unexpected FAULT {events[faults[0]].format()}", stats
        stats["outcome"] = "halted" if machine.halted is not None else "budget"
        if machine.halted is not None and machine.halted != shadow.halted:
            return f"halt code {machine.halted} vs {shadow.halted}", stats
    else:
        stats["outcome"] = "faulted"
        if len(faults) != 1:
            return f"{len(faults)} FAULT events for one predicted fault", stats
        f = events[faults[0]]
        got = (f["kind"], int(f["suid"], 16), int(f["offset"], 16))
        if got != shadow.fault:
            return f"fault {got} vs shadow {shadow.fault}", stats
        tail = [e.kind for e in events[faults[0]:]]
        if tail.count("ALARM") != 1 or tail[-1] != "HALT" or tail.index("ALARM") > len(tail) - 2:
            return f"fault not followed by one ALARM then HALT: {tail}", stats
        if int(events[-1]["code"], 16) != shadow.halted:
            return f"exit code {events[-1]['code']} vs {shadow.halted}", stats
    if audit:
        problems = audit_events(events)
        if problems:
            return f"audit: {problems[0]}", stats
    return None, stats


def minimize(spec: ProgramSpec, budget: int = DEFAULT_BUDGET) -> ProgramSpec:
    """Greedy shrink: drop trailing words, then turn words into NOPs."""
    def failing(s: ProgramSpec) -> bool:
        try:
            return check_program(s, budget)[0] is not None
        except Exception:  # noqa: BLE001 - image build trouble still counts
            return True

    nop = _word(0x01, 3, 0)
    cur = spec
    while len(cur.code) > 4 and failing(replace(cur, code=cur.code[:-4])):
        cur = replace(cur, code=cur.code[:-4])
    words = cur.words()
    for i, w in enumerate(words):
        if w == nop:
            continue
        trial = words[:i] + [nop] + words[i + 1:]
        cand = replace(cur, code=b"".join(trial))
        if failing(cand):
            cur, words = cand, trial
    return cur


def fuzz_programs(seed: int = 42, count: int = 10_000, budget: int = DEFAULT_BUDGET,
                  audit: bool = True, minimize_failures: bool = True) -> FuzzReport:
    rng = random.Random(seed)
    report = FuzzReport(seed, count)
    start = time.perf_counter()
    for i in range(count):
        style = "raw" if i % 10 == 9 else ("arith" if i % 10 == 8 else "mixed")
        spec = generate(rng, i, style)
        try:
            problem, stats = check_program(spec, budget, audit)
        except Exception as exc:  # noqa: BLE001
            problem, stats = f"host: {type(exc).__name__}: {exc}", {"steps": 0, "outcome": "budget", "links": 0}
        report.programs += 1
        report.steps += stats["steps"]
        report.links += stats["links"]
        setattr(report, stats["outcome"], getattr(report, stats["outcome"]) + 1)
        if problem is not None:
            small = minimize(spec, budget) if minimize_failures else spec
            d = Divergence(i, stats["steps"], problem, small)
            (report.host_faults if problem.startswith("host:") else report.divergences).append(d)
    report.elapsed = time.perf_counter() - start
    return report
