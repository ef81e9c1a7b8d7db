import pytest
from hypothesis import given, strategies as st

from guardvm.core import (
    AppendGranted,
    DuplicateName,
    GlobalSegmentTable,
    Layer,
    LayerPerms,
    PermSet,
    TypeEntry,
    TypeTable,
    UnknownSuid,
    UnknownType,
    build_descriptor,
    gst_lookup,
    type_permissions,
)

UTIL_DATA = LayerPerms.parse("S:r-- U:rw- K:---")


def make_tables():
    tt = TypeTable()
    tt.add(TypeEntry(1, "util_data", UTIL_DATA))
    tt.add(TypeEntry(2, "svc_code", LayerPerms.parse("S:--x U:--- K:---")))
    gst = GlobalSegmentTable()
    return tt, gst


def test_layer_letters_and_order():
    assert [l.letter for l in (Layer.SERVICES, Layer.UTILITIES, Layer.KERNEL)] == ["S", "U", "K"]
    assert Layer.SERVICES > Layer.UTILITIES > Layer.KERNEL
    assert Layer.SERVICES.below() is Layer.UTILITIES
    assert Layer.KERNEL.below() is None
    assert Layer.from_letter("u") is Layer.UTILITIES
    with pytest.raises(ValueError):
        Layer.from_letter("Q")


@pytest.mark.parametrize("text", ["---", "r--", "rw-", "--x", "rwx", "r-xa"])
def test_permset_round_trip(text):
    assert PermSet.parse(text).render() == text


@pytest.mark.parametrize("text", ["", "rw", "wr-", "rwxx", "RWX"])
def test_permset_rejects_garbage(text):
    with pytest.raises(ValueError):
        PermSet.parse(text)


@given(st.tuples(st.booleans(), st.booleans(), st.booleans(), st.booleans()))
def test_permset_is_four_independent_flags(flags):
    p = PermSet(*flags)
    assert PermSet.parse(p.render()) == p


def test_layer_perms_render_order():
    assert UTIL_DATA.render() == "S:r-- U:rw- K:---"
    # field order in the text does not matter, rendering order does
    assert LayerPerms.parse("K:--- S:r-- U:rw-") == UTIL_DATA
    with pytest.raises(ValueError):
        LayerPerms.parse("S:r-- U:rw-")


@pytest.mark.parametrize(
    "layer,expected",
    [(Layer.SERVICES, PermSet(read=True)), (Layer.UTILITIES, PermSet(read=True, write=True)), (Layer.KERNEL, PermSet())],
)
def test_type_permissions_for_util_data(layer, expected):
    tt, _ = make_tables()
    assert type_permissions(tt, 1, layer) == expected


def test_type_permissions_unknown_type():
    tt, _ = make_tables()
    with pytest.raises(UnknownType):
        type_permissions(tt, 99, Layer.SERVICES)


def test_suids_sequential_and_never_reused():
    _, gst = make_tables()
    a = gst.allocate(16, 1)
    b = gst.allocate(4, 1)
    assert (a.suid, b.suid) == (0x1000, 0x1001)
    gst.delete(a.suid)
    with pytest.raises(UnknownSuid):
        gst_lookup(gst, a.suid)
    assert gst.allocate(1, 1).suid == 0x1002


def test_build_descriptor_for_utility_data():
    tt, gst = make_tables()
    foo = gst.allocate(16, 1)
    d = build_descriptor(foo.suid, gst, tt)
    assert (d.suid, d.length, d.perms.render()) == (foo.suid, 16, "S:r-- U:rw- K:---")
    assert d.gate_to is None and not d.handler


def test_zero_length_descriptor():
    tt, gst = make_tables()
    e = gst.allocate(0, 1)
    assert build_descriptor(e.suid, gst, tt).length == 0


@given(st.lists(st.tuples(st.integers(0, 64), st.sampled_from([1, 2])), max_size=20))
def test_descriptor_is_composition_of_lookups(segments):
    tt, gst = make_tables()
    for length, type_id in segments:
        e = gst.allocate(length, type_id)
        d = build_descriptor(e.suid, gst, tt)
        entry = gst_lookup(gst, e.suid)
        perms = tuple(type_permissions(tt, entry.type_id, l) for l in (Layer.SERVICES, Layer.UTILITIES, Layer.KERNEL))
        assert d.length == entry.length
        assert (d.perms.services, d.perms.utilities, d.perms.kernel) == perms


def test_same_type_same_permissions():
    tt, gst = make_tables()
    a, b = gst.allocate(3, 1), gst.allocate(9, 1)
    da, db = build_descriptor(a.suid, gst, tt), build_descriptor(b.suid, gst, tt)
    assert (da.perms, da.gate_to, da.handler) == (db.perms, db.gate_to, db.handler)


def test_append_may_not_be_granted():
    tt = TypeTable()
    with pytest.raises(AppendGranted):
        tt.add(TypeEntry(1, "log", LayerPerms.parse("S:r--a U:--- K:---")))


def test_gate_must_sit_below_its_callers():
    tt = TypeTable()
    tt.add(TypeEntry(1, "u_gate", LayerPerms.parse("S:--x U:--x K:---"), gate_to=Layer.UTILITIES))
    with pytest.raises(ValueError):
        tt.add(TypeEntry(2, "bad", LayerPerms.parse("S:--- U:--x K:---"), gate_to=Layer.UTILITIES))
    with pytest.raises(ValueError):
        tt.add(TypeEntry(3, "worse", LayerPerms.parse("S:--x U:--- K:---"), gate_to=Layer.SERVICES))


def test_duplicate_type_name():
    tt, _ = make_tables()
    with pytest.raises(DuplicateName):
        tt.add(TypeEntry(7, "util_data", UTIL_DATA))
