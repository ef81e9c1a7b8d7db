import pytest
from hypothesis import given, settings, strategies as st

from guardvm.demos import DEMOS, manifest_path
from guardvm.verify.audit import audit_events
from guardvm.verify.scenarios import NETFILTER_SAMPLE, demo_image, run
from test_acceptance import reference_filter


@pytest.mark.parametrize("name", DEMOS)
def test_demo_runs_clean(name):
    m = run(demo_image(name), NETFILTER_SAMPLE if name == "netfilter" else None)
    assert m.halted == 0
    assert not audit_events(m.log.events)
    assert manifest_path(name).name == "image.manifest"


@pytest.mark.parametrize("stream,verdicts", [
    (b"", b""),
    (bytes([0]), b"\x00"),
    (bytes([1, 9]), b"\x00"),
    (bytes([2, 0, 0x50]), b"\x01"),
    (bytes([2, 0, 0x16]), b"\x00"),
    (bytes([3, 0, 0xBD, 7]), b"\x00"),
    (bytes([4, 0, 0x50]), b"\x00"),  # truncated
    (bytes([2, 0, 0x50, 5, 1]), b"\x01\x00"),
])
def test_netfilter_cases(stream, verdicts):
    assert reference_filter(stream) == verdicts
    assert bytes(run(demo_image("netfilter"), stream, trace_steps=False).output) == verdicts


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.sampled_from([0x16, 0x17, 0xBD, 0x50, 0x00, 0xFF]),
                          st.binary(min_size=6, max_size=6)), max_size=12),
       st.integers(0, 3))
def test_netfilter_matches_reference(packets, chop):
    stream = b"".join(bytes([n]) + (b[:1] + bytes([port]) + b[2:])[:n] for n, port, b in packets)
    stream = stream[:len(stream) - chop] if chop < len(stream) else stream
    m = run(demo_image("netfilter"), stream, trace_steps=False, max_steps=1_000_000)
    assert m.halted == 0
    assert bytes(m.output) == reference_filter(stream)
