"""Instruction set: the opcode table, addressing modes, encode and decode.

Every instruction is four bytes: opcode, mode, operand (u16 little-endian).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, FrozenSet


class Mode(enum.IntEnum):
    IMMEDIATE = 0
    SLOT_INDEXED = 1
    SLOT_DIRECT = 2
    NONE = 3


class Op(enum.IntEnum):
    HALT = 0x00
    NOP = 0x01
    LDA = 0x10
    STA = 0x11
    LDX = 0x12
    ADD = 0x20
    SUB = 0x21
    AND = 0x22
    OR = 0x23
    XOR = 0x24
    CMP = 0x25
    DIV = 0x26
    JMP = 0x30
    BEQ = 0x31
    BNE = 0x32
    BLT = 0x33
    BGE = 0x34
    CALL = 0x40
    RET = 0x41
    ENTER = 0x42
    EXIT = 0x43
    TRAP = 0x50
    RESUME = 0x51
    IN = 0x60
    OUT = 0x61
    RESOLVE = 0x70
    SEGLEN = 0x71
    ALARM = 0x72
    LOGEV = 0x73


_I, _SX, _SD, _N = Mode.IMMEDIATE, Mode.SLOT_INDEXED, Mode.SLOT_DIRECT, Mode.NONE
_VALUE = frozenset({_I, _SX, _SD})

LEGAL_MODES: Dict[Op, FrozenSet[Mode]] = {
    Op.HALT: frozenset({_I}),
    Op.NOP: frozenset({_N}),
    Op.LDA: _VALUE,
    Op.STA: frozenset({_SX, _SD}),
    Op.LDX: _VALUE,
    Op.ADD: _VALUE,
    Op.SUB: _VALUE,
    Op.AND: _VALUE,
    Op.OR: _VALUE,
    Op.XOR: _VALUE,
    Op.CMP: _VALUE,
    Op.DIV: _VALUE,
    Op.JMP: frozenset({_I}),
    Op.BEQ: frozenset({_I}),
    Op.BNE: frozenset({_I}),
    Op.BLT: frozenset({_I}),
    Op.BGE: frozenset({_I}),
    Op.CALL: frozenset({_SX, _SD}),
    Op.RET: frozenset({_N}),
    Op.ENTER: frozenset({_I}),
    Op.EXIT: frozenset({_N}),
    Op.TRAP: frozenset({_I}),
    Op.RESUME: frozenset({_N}),
    Op.IN: frozenset({_N}),
    Op.OUT: frozenset({_N}),
    Op.RESOLVE: frozenset({_N}),
    Op.SEGLEN: frozenset({_SD}),
    Op.ALARM: frozenset({_I}),
    Op.LOGEV: frozenset({_I}),
}

BRANCHES = frozenset({Op.JMP, Op.BEQ, Op.BNE, Op.BLT, Op.BGE})
ALU_OPS = frozenset({Op.ADD, Op.SUB, Op.AND, Op.OR, Op.XOR, Op.CMP, Op.DIV})
RESTRICTED_RANGE = range(0x70, 0x80)


def is_restricted(opcode: int) -> bool:
    return opcode in RESTRICTED_RANGE


class IllegalOpcode(ValueError):
    """Raised by decode for words outside the opcode/mode table."""

    def __init__(self, word: bytes, reason: str) -> None:
        super().__init__(f"illegal instruction {word.hex()}: {reason}")
        self.word = word
        self.reason = reason


@dataclass(frozen=True)
class Instruction:
    op: Op
    mode: Mode
    operand: int = 0

    def __post_init__(self) -> None:
        if self.mode not in LEGAL_MODES[self.op]:
            raise ValueError(f"{self.op.name} does not take mode {self.mode.name}")
        if not 0 <= self.operand <= 0xFFFF:
            raise ValueError(f"operand {self.operand} does not fit 16 bits")
        if self.mode is Mode.NONE and self.operand:
            raise ValueError(f"{self.op.name} takes no operand")

    def __str__(self) -> str:
        return f"{self.op.name} {self.mode.name} {self.operand}"


def encode(insn: Instruction) -> bytes:
    return bytes((insn.op, insn.mode, insn.operand & 0xFF, insn.operand >> 8))


def decode(word: bytes) -> Instruction:
    if len(word) != 4:
        raise IllegalOpcode(bytes(word), "instruction words are 4 bytes")
    opc, mode, lo, hi = word
    try:
        op = Op(opc)
    except ValueError:
        raise IllegalOpcode(bytes(word), f"unknown opcode {opc:#04x}") from None
    try:
        m = Mode(mode)
    except ValueError:
        raise IllegalOpcode(bytes(word), f"unknown mode {mode:#04x}") from None
    operand = lo | hi << 8
    if m not in LEGAL_MODES[op]:
        raise IllegalOpcode(bytes(word), f"{op.name} does not take mode {m.name}")
    if m is Mode.NONE and operand:
        raise IllegalOpcode(bytes(word), f"{op.name} takes no operand")
    return Instruction(op, m, operand)

