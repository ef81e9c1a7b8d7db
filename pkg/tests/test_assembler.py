import pytest
from hypothesis import given, strategies as st

from guardvm.assembler import AssemblyError, ObjectUnit, assemble, disassemble, parse_int, read_gobj, write_gobj
from guardvm.demos import sources
from guardvm.isa import Instruction, Mode, Op, decode
from guardvm.linker import DEFAULT_SCRATCH, LinkageTemplate


def unit(body, externs=(), head=".segment t svc_code"):
    return assemble("\n".join([head] + [f".extern {e}" for e in externs] + body.splitlines()))


def words(code):
    return [decode(code[i:i + 4]) for i in range(0, len(code), 4)]


def test_externs_number_slots_from_one():
    u = unit("LDA foo, X\nCALL u_gate\nLDA scratch", ("u_gate", "foo"))
    assert u.template == LinkageTemplate(DEFAULT_SCRATCH, ("u_gate", "foo"))
    assert words(u.code) == [
        Instruction(Op.LDA, Mode.SLOT_INDEXED, 2),
        Instruction(Op.CALL, Mode.SLOT_DIRECT, 1),
        Instruction(Op.LDA, Mode.SLOT_DIRECT, 0),
    ]


@pytest.mark.parametrize("line,encoded", [
    ("LDX #7", "12000700"),
    ("HALT", "00000000"),
    ("HALT #3", "00000300"),
    ("NOP", "01030000"),
    ("ENTER U", "42000100"),
    ("ENTER K", "42000000"),
    ("LDA #0xffff", "1000ffff"),
    ("STA 1, X", "11010100"),
    ("SEGLEN 1", "71020100"),
    ("JMP 0", "30000000"),
    (".word 0xdeadbeef", "efbeadde"),
])
def test_encoding(line, encoded):
    assert unit(line, ("a",)).code.hex() == encoded


def test_labels_and_branches():
    u = unit("top: LDA #1\n  BEQ done\n  JMP top\ndone:\n  HALT")
    assert u.labels == {"top": 0, "done": 12}
    assert words(u.code)[1] == Instruction(Op.BEQ, Mode.IMMEDIATE, 12)


def test_scratch_directive():
    assert unit(".scratch 8\nHALT").template.scratch == 8


def test_data_unit():
    u = assemble(".segment foo util_data\n.byte 1, 2, 0x10\n.byte 255")
    assert u.code == bytes([1, 2, 16, 255]) and u.template is None and not u.is_code


@pytest.mark.parametrize("src,line,fragment", [
    ("JMP nowhere", 2, "undefined label"),
    ("FROB #1", 2, "unknown mnemonic"),
    ("a: NOP\na: NOP", 3, "duplicate label"),
    ("LDA #70000", 2, "does not fit 16 bits"),
    ("LDA foo", 2, "used but not declared"),
    ("STA #1", 2, "does not take immediate"),
    ("RET #1", 2, "takes no operand"),
    ("LDA", 2, "needs an operand"),
    ("JMP 2", 2, "not an instruction offset"),
    ("LDA 5", 2, "outside the linkage template"),
    (".frob", 2, "unknown directive"),
    (".byte 300", 2, "out of range"),
])
def test_diagnostics(src, line, fragment):
    with pytest.raises(AssemblyError) as err:
        unit(src)
    d = err.value.diagnostics[0]
    assert d.line == line and fragment in d.message


def test_duplicate_extern_and_missing_segment():
    with pytest.raises(AssemblyError, match="duplicate extern"):
        unit("HALT", ("a", "a"))
    with pytest.raises(AssemblyError, match="missing .segment"):
        assemble("HALT")


def test_all_diagnostics_are_reported():
    with pytest.raises(AssemblyError) as err:
        unit("FROB\nJMP nowhere\nLDA ghost")
    assert [d.line for d in err.value.diagnostics] == [2, 3, 4]


@pytest.mark.parametrize("text,value", [("0", 0), ("42", 42), ("0x2A", 42), ("0X10", 16)])
def test_parse_int(text, value):
    assert parse_int(text) == value


@pytest.mark.parametrize("text", ["-1", "1.5", "0x", "ten", ""])
def test_parse_int_rejects(text):
    with pytest.raises(ValueError):
        parse_int(text)


@pytest.mark.parametrize("path", sorted(sources()), ids=lambda p: f"{p.parent.name}/{p.name}")
def test_demo_sources_round_trip(path):
    u = assemble(path.read_text(), path.name)
    again = assemble(disassemble(u))
    assert (again.name, again.type_name, again.code, again.template) == (u.name, u.type_name, u.code, u.template)
    assert read_gobj(write_gobj(u)) == u


def test_unencodable_words_disassemble_as_data():
    u = ObjectUnit("w", "svc_code", bytes.fromhex("ffffffff" "30000200" "10021000"), LinkageTemplate(4, ()))
    text = disassemble(u)
    assert ".word 0xffffffff" in text and ".word 0x00020030" in text and ".word 0x00100210" in text
    assert assemble(text).code == u.code


def test_gobj_rejects_garbage():
    with pytest.raises(ValueError):
        read_gobj("name a\ntype b\ncode raw:00")


@given(st.lists(st.binary(min_size=4, max_size=4), max_size=40), st.integers(0, 3), st.integers(1, 512))
def test_any_code_survives_disassembly(chunks, n_externs, scratch):
    code = b"".join(chunks)
    u = ObjectUnit("r", "svc_code", code, LinkageTemplate(scratch, tuple(f"e{i}" for i in range(n_externs))))
    again = assemble(disassemble(u))
    assert again.code == code and again.template == u.template


@given(st.binary(max_size=100))
def test_data_units_round_trip(data):
    u = ObjectUnit("d", "util_data", data, None)
    assert read_gobj(write_gobj(u)) == u
    if data:
        assert assemble(disassemble(u)).code == data
