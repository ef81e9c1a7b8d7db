"""Two-pass assembler, disassembler, and the textual ``.gobj`` object format.

Source grammar (one statement per line, ``;`` starts a comment)::

    .segment foo_user svc_code
    .scratch 64
    .extern u_gate
    .extern foo
    start:  LDX #7
            LDA foo, X
            HALT #0

Operands: ``#n`` immediate, ``sym, X`` slot-indexed, ``sym`` slot-direct
(or a label, for branches).  Slots may also be written by number (``3, X``)
and slot 0 as ``scratch``.  Data units use ``.byte`` lines only.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .isa import BRANCHES, LEGAL_MODES, IllegalOpcode, Instruction, Mode, Op, decode, encode
from .linker import DEFAULT_SCRATCH, LinkageTemplate

_IDENT = r"[A-Za-z_][A-Za-z0-9_.]*"
_IDENT_RE = re.compile(rf"^{_IDENT}$")
_LABEL_RE = re.compile(rf"^({_IDENT})\s*:\s*(.*)$")
_INDEXED_RE = re.compile(r"^(\S+?)\s*,\s*[Xx]$")
_LAYER_OPERANDS = {"K": 0, "U": 1, "S": 2}
SCRATCH_ALIAS = "scratch"
CODE_CHUNK = 16


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


class AssemblyError(Exception):
    def __init__(self, diagnostics: List[Diagnostic], source_name: str = "<source>") -> None:
        self.diagnostics = list(diagnostics)
        self.source_name = source_name
        super().__init__("\n".join(f"{source_name}: {d}" for d in self.diagnostics))


@dataclass
class ObjectUnit:
    name: str
    type_name: str
    code: bytes
    template: Optional[LinkageTemplate] = None
    labels: Dict[str, int] = field(default_factory=dict)

    @property
    def is_code(self) -> bool:
        return self.template is not None


def parse_int(text: str) -> int:
    text = text.strip()
    if re.fullmatch(r"0[xX][0-9A-Fa-f]+", text):
        return int(text, 16)
    if re.fullmatch(r"[0-9]+", text):
        return int(text, 10)
    raise ValueError(f"not a number: {text!r}")


@dataclass
class _Line:
    lineno: int
    mnemonic: str
    operand: str


def _strip(line: str) -> str:
    return line.split(";", 1)[0].strip()


def assemble(source: str, source_name: str = "<source>") -> ObjectUnit:
    diags: List[Diagnostic] = []
    name = type_name = None
    scratch: Optional[int] = None
    externs: List[str] = []
    labels: Dict[str, int] = {}
    stmts: List[_Line] = []
    data = bytearray()
    offset = 0

    # pass 1: directives, labels, externs, offsets
    for lineno, raw in enumerate(source.splitlines(), 1):
        text = _strip(raw)
        if not text:
            continue
        m = _LABEL_RE.match(text)
        if m and not text.startswith("."):
            label, text = m.group(1), m.group(2).strip()
            if label in labels:
                diags.append(Diagnostic(lineno, f"duplicate label {label!r}"))
            else:
                labels[label] = offset
            if not text:
                continue
        head, _, rest = text.partition(" ")
        rest = rest.strip()
        if head == ".segment":
            parts = rest.split()
            if len(parts) != 2 or not all(_IDENT_RE.match(p) for p in parts):
                diags.append(Diagnostic(lineno, ".segment needs a name and a type"))
            elif name is not None:
                diags.append(Diagnostic(lineno, "only one .segment per source unit"))
            else:
                name, type_name = parts
        elif head == ".extern":
            if not _IDENT_RE.match(rest) or rest == SCRATCH_ALIAS:
                diags.append(Diagnostic(lineno, f"bad extern name {rest!r}"))
            elif rest in externs:
                diags.append(Diagnostic(lineno, f"duplicate extern {rest!r}"))
            else:
                externs.append(rest)
        elif head == ".scratch":
            try:
                scratch = parse_int(rest)
            except ValueError as exc:
                diags.append(Diagnostic(lineno, str(exc)))
        elif head == ".byte":
            for tok in rest.split(","):
                try:
                    v = parse_int(tok)
                except ValueError as exc:
                    diags.append(Diagnostic(lineno, str(exc)))
                    continue
                if v > 0xFF:
                    diags.append(Diagnostic(lineno, f"byte value {v} out of range"))
                    continue
                data.append(v)
        elif head.startswith("."):
            if head != ".word":
                diags.append(Diagnostic(lineno, f"unknown directive {head}"))
                continue
            stmts.append(_Line(lineno, ".word", rest))
            offset += 4
        else:
            stmts.append(_Line(lineno, head.upper(), rest))
            offset += 4

    if name is None:
        diags.append(Diagnostic(1, "missing .segment directive"))
    if data and stmts:
        diags.append(Diagnostic(stmts[0].lineno, "a unit holds either .byte data or instructions, not both"))
    if data and (externs or scratch is not None):
        diags.append(Diagnostic(1, "data units take no .extern or .scratch"))

    if data or (not stmts and not externs and scratch is None):
        if diags:
            raise AssemblyError(diags, source_name)
        return ObjectUnit(name, type_name, bytes(data), None, labels)

    # pass 2: encode
    slots = {SCRATCH_ALIAS: 0}
    slots.update({sym: i + 1 for i, sym in enumerate(externs)})
    slot_count = 1 + len(externs)
    code = bytearray()
    for st in stmts:
        try:
            code += _encode_line(st, slots, slot_count, labels, offset)
        except ValueError as exc:
            diags.append(Diagnostic(st.lineno, str(exc)))
            code += bytes(4)
    if diags:
        raise AssemblyError(diags, source_name)
    template = LinkageTemplate(DEFAULT_SCRATCH if scratch is None else scratch, tuple(externs))
    return ObjectUnit(name, type_name, bytes(code), template, labels)


def _slot(token: str, slots: Dict[str, int], slot_count: int) -> int:
    if token in slots:
        return slots[token]
    try:
        n = parse_int(token)
    except ValueError:
        raise ValueError(f"extern {token!r} used but not declared") from None
    if n >= slot_count:
        raise ValueError(f"slot {n} is outside the linkage template ({slot_count} slots)")
    return n


def _encode_line(st: _Line, slots, slot_count: int, labels: Dict[str, int], size: int) -> bytes:
    if st.mnemonic == ".word":
        v = parse_int(st.operand)
        if v > 0xFFFFFFFF:
            raise ValueError(f".word value {st.operand} does not fit 32 bits")
        return v.to_bytes(4, "little")
    try:
        op = Op[st.mnemonic]
    except KeyError:
        raise ValueError(f"unknown mnemonic {st.mnemonic!r}") from None
    text = st.operand
    legal = LEGAL_MODES[op]
    if not text:
        if Mode.NONE in legal:
            return encode(Instruction(op, Mode.NONE, 0))
        if op is Op.HALT:
            return encode(Instruction(op, Mode.IMMEDIATE, 0))
        raise ValueError(f"{op.name} needs an operand")
    if Mode.NONE in legal:
        raise ValueError(f"{op.name} takes no operand")

    if op is Op.ENTER and text.upper() in _LAYER_OPERANDS:
        return encode(Instruction(op, Mode.IMMEDIATE, _LAYER_OPERANDS[text.upper()]))
    if op in BRANCHES:
        if text.startswith("#"):
            text = text[1:]
        if _IDENT_RE.match(text):
            if text not in labels:
                raise ValueError(f"undefined label {text!r}")
            target = labels[text]
            if target >= size:
                raise ValueError(f"label {text!r} does not mark an instruction")
        else:
            target = parse_int(text)
            if target % 4 or target >= size:
                raise ValueError(f"branch target {text} is not an instruction offset")
        return encode(Instruction(op, Mode.IMMEDIATE, _fit(target)))

    if text.startswith("#"):
        mode, value = Mode.IMMEDIATE, parse_int(text[1:])
    else:
        m = _INDEXED_RE.match(text)
        if m:
            mode, value = Mode.SLOT_INDEXED, _slot(m.group(1), slots, slot_count)
        else:
            mode, value = Mode.SLOT_DIRECT, _slot(text, slots, slot_count)
    if mode not in legal:
        raise ValueError(f"{op.name} does not take {mode.name.lower().replace('_', '-')} operands")
    return encode(Instruction(op, mode, _fit(value)))


def _fit(value: int) -> int:
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"operand {value} does not fit 16 bits")
    return value


# -- disassembly -------------------------------------------------------------


def _label(offset: int) -> str:
    return f"L_{offset:04x}"


def disassemble(unit: ObjectUnit) -> str:
    lines = [f".segment {unit.name} {unit.type_name}"]
    if unit.template is None:
        for i in range(0, len(unit.code), CODE_CHUNK):
            lines.append(".byte " + ",".join(f"0x{b:02x}" for b in unit.code[i:i + CODE_CHUNK]))
        return "\n".join(lines) + "\n"
    if len(unit.code) % 4:
        raise ValueError("code length is not a multiple of 4")
    lines.append(f".scratch {unit.template.scratch}")
    for sym in unit.template.externs:
        lines.append(f".extern {sym}")
    names = {0: SCRATCH_ALIAS}
    names.update({i + 1: s for i, s in enumerate(unit.template.externs)})
    size = len(unit.code)

    decoded: List[Tuple[int, Optional[Instruction], bytes]] = []
    targets = set()
    for off in range(0, size, 4):
        word = unit.code[off:off + 4]
        try:
            insn = decode(word)
        except IllegalOpcode:
            insn = None
        if insn is not None:
            if insn.op in BRANCHES and (insn.operand % 4 or insn.operand >= size):
                insn = None
            elif insn.mode in (Mode.SLOT_INDEXED, Mode.SLOT_DIRECT) and insn.operand >= unit.template.slot_count:
                insn = None
        if insn is not None and insn.op in BRANCHES:
            targets.add(insn.operand)
        decoded.append((off, insn, word))

    for off, insn, word in decoded:
        prefix = f"{_label(off)}:" if off in targets else ""
        if insn is None:
            body = f".word 0x{int.from_bytes(word, 'little'):08x}"
        else:
            body = _render(insn, names)
        lines.append(f"{prefix:<8}{body}")
    return "\n".join(lines) + "\n"


def _render(insn: Instruction, names: Dict[int, str]) -> str:
    op = insn.op.name
    if insn.mode is Mode.NONE:
        return op
    if insn.op in BRANCHES:
        return f"{op} {_label(insn.operand)}"
    if insn.op is Op.ENTER and insn.operand in (0, 1, 2):
        return f"{op} {'KUS'[insn.operand]}"
    if insn.mode is Mode.IMMEDIATE:
        return f"{op} #{insn.operand}"
    slot = names[insn.operand]
    if insn.mode is Mode.SLOT_INDEXED:
        return f"{op} {slot}, X"
    return f"{op} {slot}"


# -- .gobj object files ------------------------------------------------------


def write_gobj(unit: ObjectUnit) -> str:
    lines = [f"name {unit.name}", f"type {unit.type_name}"]
    if unit.template is not None:
        lines.append(f"scratch {unit.template.scratch:#x}")
        for i, sym in enumerate(unit.template.externs, 1):
            lines.append(f"extern {i} {sym}")
    for label, off in sorted(unit.labels.items(), key=lambda kv: (kv[1], kv[0])):
        lines.append(f"label {label} {off:#x}")
    for i in range(0, len(unit.code), CODE_CHUNK):
        lines.append(f"code hex:{unit.code[i:i + CODE_CHUNK].hex()}")
    return "\n".join(lines) + "\n"


def read_gobj(text: str) -> ObjectUnit:
    name = type_name = None
    scratch = None
    externs: List[str] = []
    labels: Dict[str, int] = {}
    code = bytearray()
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        try:
            if key == "name":
                name = rest
            elif key == "type":
                type_name = rest
            elif key == "scratch":
                scratch = parse_int(rest)
            elif key == "extern":
                idx, sym = rest.split()
                if int(idx) != len(externs) + 1:
                    raise ValueError(f"extern slots out of order at {idx}")
                externs.append(sym)
            elif key == "label":
                lab, off = rest.split()
                labels[lab] = parse_int(off)
            elif key == "code":
                if not rest.startswith("hex:"):
                    raise ValueError("code lines are hex:")
                chunk = bytes.fromhex(rest[4:])
                if len(chunk) > CODE_CHUNK:
                    raise ValueError("code line longer than 16 bytes")
                code += chunk
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"gobj line {lineno}: {exc}") from None
    if name is None or type_name is None:
        raise ValueError("gobj is missing its name or type header")
    template = LinkageTemplate(scratch, tuple(externs)) if scratch is not None else None
    return ObjectUnit(name, type_name, bytes(code), template, labels)
