import pytest
from hypothesis import given, strategies as st

from guardvm.core import DuplicateName, UnknownName
from guardvm.namespace import (
    EVENT_KEYS,
    EventLog,
    NameTable,
    make_event,
    parse_event,
    parse_trace,
    render_value,
    valid_name,
)
from guardvm.verify.scenarios import run

NAMES = st.from_regex(r"[A-Za-z_][A-Za-z0-9_.]{0,15}", fullmatch=True)


def test_bind_lookup_unbind():
    t = NameTable()
    t.bind("foo", 0x1003)
    assert t.lookup("foo") == 0x1003 and "foo" in t and len(t) == 1
    with pytest.raises(DuplicateName):
        t.bind("foo", 0x1004)
    assert t.unbind("foo") == 0x1003
    with pytest.raises(UnknownName):
        t.lookup("foo")
    with pytest.raises(UnknownName):
        t.unbind("foo")


def test_rename():
    t = NameTable()
    t.bind("firewall", 0x1001)
    t.bind("other", 0x1002)
    t.rename("firewall", "oldfirewall")
    assert t.lookup("oldfirewall") == 0x1001 and "firewall" not in t
    with pytest.raises(DuplicateName):
        t.rename("oldfirewall", "other")
    with pytest.raises(UnknownName):
        t.rename("ghost", "spirit")
    assert t.lookup("other") == 0x1002


def test_aliases():
    t = NameTable()
    t.bind("a", 7)
    t.bind("b", 7)
    assert t.names_for(7) == ["a", "b"]


@pytest.mark.parametrize("name,ok", [
    ("foo", True), ("_x1", True), ("scratch.S", True), ("1abc", False), ("", False), ("a b", False), ("a=b", False),
])
def test_valid_names(name, ok):
    assert valid_name(name) is ok
    t = NameTable()
    if ok:
        t.bind(name, 1)
    else:
        with pytest.raises(ValueError):
            t.bind(name, 1)


@given(st.dictionaries(NAMES, st.integers(0x1000, 0xFFFF), max_size=1000), st.lists(NAMES, max_size=50))
def test_lookup_matches_a_dict(bound, probes):
    t = NameTable()
    for name, suid in bound.items():
        t.bind(name, suid)
    for name in list(bound) + probes:
        if name in bound:
            assert t.lookup(name) == bound[name]
        else:
            with pytest.raises(UnknownName):
                t.lookup(name)


@given(st.lists(st.tuples(st.sampled_from(["bind", "unbind", "rename"]), NAMES, NAMES), max_size=80))
def test_operations_match_a_dict(ops):
    t, model = NameTable(), {}
    for i, (op, a, b) in enumerate(ops):
        if op == "bind":
            if a in model:
                with pytest.raises(DuplicateName):
                    t.bind(a, i)
            else:
                t.bind(a, i)
                model[a] = i
        elif op == "unbind":
            if a in model:
                assert t.unbind(a) == model.pop(a)
            else:
                with pytest.raises(UnknownName):
                    t.unbind(a)
        else:
            if a not in model or b in model:
                with pytest.raises((UnknownName, DuplicateName)):
                    t.rename(a, b)
            else:
                t.rename(a, b)
                model[b] = model.pop(a)
    assert dict(t.items()) == model


@pytest.mark.parametrize("value,text", [(0, "0x0"), (255, "0xff"), (True, "0x1"), ("S", "S"), (0x1000, "0x1000")])
def test_render_value(value, text):
    assert render_value(value) == text


def test_event_format():
    ev = make_event(3, "LINK", owner=0x1000, slot=2, sym="foo", suid=0x1003, length=16, S="r--", U="rw-",
                    K="---", gate="-", handler=0)
    assert ev.format() == ("EV 3 LINK owner=0x1000 slot=0x2 sym=foo suid=0x1003 length=0x10 "
                           "S=r-- U=rw- K=--- gate=- handler=0x0")
    assert parse_event(ev.format()) == ev


def test_gate_event_uses_from_key():
    ev = make_event(1, "GATE", op="ENTER", from_="S", to="U", seg=0x1001)
    assert ev.format() == "EV 1 GATE op=ENTER from=S to=U seg=0x1001"


@pytest.mark.parametrize("line", [
    "EV 1 HALT",
    "EV x HALT code=0x0",
    "EV 01 HALT code=0x0",
    "EV 1 NOPE code=0x0",
    "EV 1 HALT code",
    "EV 1 GATE from=S op=ENTER to=U seg=0x1",
    "XX 1 HALT code=0x0",
])
def test_parse_rejects(line):
    with pytest.raises(ValueError):
        parse_event(line)


def test_make_event_rejects_bad_values():
    with pytest.raises(ValueError):
        make_event(1, "IO", ch="out put", value=1)
    with pytest.raises(ValueError):
        make_event(1, "HALT", status=0)


def test_log_is_monotonic_and_immutable():
    log = EventLog()
    log.emit(2, "HALT", code=0)
    with pytest.raises(ValueError):
        log.emit(1, "HALT", code=0)
    assert len(log) == 1
    snapshot = log.events
    log.emit(2, "IO", ch="out", value=1)
    assert len(snapshot) == 1 and len(log.events) == 2


def test_trace_round_trip(tutorial):
    m = run(tutorial)
    text = m.log.serialize()
    assert [e.format() for e in parse_trace(text)] == text.splitlines()
    steps = [e.step for e in m.log.events]
    assert steps == sorted(steps)


@given(st.sampled_from(sorted(EVENT_KEYS)), st.integers(0, 2**32), st.lists(st.integers(0, 2**64 - 1), min_size=10,
                                                                               max_size=10))
def test_event_round_trip(kind, step, values):
    ev = make_event(step, kind, **dict(zip(EVENT_KEYS[kind], values)), extra="tail")
    assert parse_event(ev.format()) == ev
