import pytest
from hypothesis import given, strategies as st

from guardvm.core import Descriptor, DuplicateSuid, GlobalSegmentTable, Layer, LayerPerms, NotKernel, PermSet
from guardvm.mmu import (
    AccessKind,
    FaultKind,
    MemFault,
    SegmentStore,
    bind_segment,
    fetch_word,
    read_byte,
    resize_segment,
    translate,
    write_byte,
)
from guardvm.verify.scenarios import run

FOO_PERMS = LayerPerms.parse("S:r-- U:rw- K:---")
S, U, K = Layer.SERVICES, Layer.UTILITIES, Layer.KERNEL


@pytest.fixture
def foo():
    store = SegmentStore()
    bind_segment(store, 0x1000, bytes(range(16)))
    return store, Descriptor(0x1000, 16, FOO_PERMS)


@pytest.mark.parametrize(
    "offset,access,layer,expected",
    [
        (7, AccessKind.READ, S, None),
        (7, AccessKind.WRITE, S, FaultKind.PERMISSION),
        (16, AccessKind.READ, U, FaultKind.BOUNDS),
        (15, AccessKind.READ, S, None),
        (3, AccessKind.WRITE, U, None),
        (3, AccessKind.WRITE, K, FaultKind.PERMISSION),
        (0, AccessKind.EXECUTE_FETCH, U, FaultKind.PERMISSION),
        ((1 << 64) - 1, AccessKind.READ, S, FaultKind.BOUNDS),
    ],
)
def test_translate_examples(foo, offset, access, layer, expected):
    _, d = foo
    fault = translate(d, offset, access, layer)
    assert (fault.kind if fault else None) is expected


def test_bounds_reported_before_permission(foo):
    _, d = foo
    fault = translate(d, 99, AccessKind.WRITE, K)
    assert fault == MemFault(FaultKind.BOUNDS, 0x1000, 99, AccessKind.WRITE, K)


def test_read_the_eighth_byte(foo):
    store, d = foo
    assert read_byte(store, d, 7, S) == 7


def test_write_then_read_every_offset(foo):
    store, d = foo
    for off in range(16):
        write_byte(store, d, off, 0xA0 + off, U)
    assert [read_byte(store, d, off, U) for off in range(16)] == [0xA0 + i for i in range(16)]


def test_faulting_write_changes_nothing(foo):
    store, d = foo
    with pytest.raises(MemFault):
        write_byte(store, d, 3, 0xFF, S)
    assert store.snapshot(0x1000) == bytes(range(16))


@given(
    perms=st.tuples(*[st.booleans()] * 3),
    layer=st.sampled_from(list(Layer)),
    access=st.sampled_from(list(AccessKind)),
    length=st.integers(0, 40),
    offset=st.one_of(st.integers(0, 64), st.just((1 << 64) - 1)),
)
def test_translate_matches_membership(perms, layer, access, length, offset):
    p = PermSet(*perms)
    d = Descriptor(1, length, LayerPerms(p, p, p))
    fault = translate(d, offset, access, layer)
    letter = {"R": "r", "W": "w", "X": "x"}[access.value]
    if offset >= length:
        assert fault.kind is FaultKind.BOUNDS
    elif letter in p.render():
        assert fault is None
    else:
        assert fault.kind is FaultKind.PERMISSION


def test_fetch_needs_execute_only():
    store = SegmentStore()
    bind_segment(store, 1, bytes([0x01, 0x03, 0, 0]))
    code = Descriptor(1, 4, LayerPerms.parse("S:--x U:--- K:---"))
    assert fetch_word(store, code, 0, S) == bytes([0x01, 0x03, 0, 0])
    with pytest.raises(MemFault):
        fetch_word(store, code, 1, S)  # runs off the end


def test_resize_grow_and_shrink():
    store, gst = SegmentStore(), GlobalSegmentTable()
    e = gst.allocate(16, 1)
    bind_segment(store, e.suid, bytes(range(16)))
    resize_segment(store, gst, e.suid, 32, K)
    assert store.snapshot(e.suid) == bytes(range(16)) + bytes(16)
    assert [x.length for x in gst] == [32]
    resize_segment(store, gst, e.suid, 4, K)
    assert store.snapshot(e.suid) == bytes(range(4))
    with pytest.raises(NotKernel):
        resize_segment(store, gst, e.suid, 8, S)


def test_stale_descriptor_after_shrink_faults(foo):
    store, d = foo
    gst = GlobalSegmentTable()
    gst.allocate(16, 1)
    resize_segment(store, gst, 0x1000, 4, K)
    with pytest.raises(MemFault) as exc:
        read_byte(store, d, 7, S)
    assert exc.value.kind is FaultKind.BOUNDS


def test_duplicate_bind():
    store = SegmentStore()
    bind_segment(store, 5, b"a")
    with pytest.raises(DuplicateSuid):
        bind_segment(store, 5, b"b")


@pytest.mark.parametrize("demo", ["tutorial", "guest_linker"])
def test_complete_mediation(demo):
    """Every byte the machine touches was checked first, with the same access."""
    from guardvm.image import load_image
    from guardvm.verify.scenarios import demo_image

    m = load_image(demo_image(demo))
    m.store.audit = []
    m.run()
    assert m.halted == 0
    checked = None
    touches = 0
    for entry in m.store.audit:
        if entry[0] == "check":
            checked = entry[1:4]
        else:
            touches += 1
            assert entry[1:4] == checked
            checked = None
    assert touches > 0


def test_store_matches_gst_after_run(tutorial):
    m = run(tutorial)
    for e in m.gst:
        assert m.store.length(e.suid) == e.length
