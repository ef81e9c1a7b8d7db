import pytest
from hypothesis import given, strategies as st

from guardvm.core import Descriptor, Layer, LayerPerms
from guardvm.layers import MAX_STACK_DEPTH, LayerStack
from guardvm.verify.audit import audit_events, layer_sequence
from guardvm.verify.scenarios import probe_image, restricted_probe, run

RESTRICTED = ["RESOLVE", "SEGLEN scratch", "ALARM #1", "LOGEV #2"]


def gate_image(gate_body, main="CALL u_gate\nHALT #0", extra=(), data=""):
    return probe_image(main, ("u_gate",), (("u_gate", "u_gate", gate_body, tuple(n for n, *_ in extra)),) + extra,
                       data=data)


@pytest.mark.parametrize("op", RESTRICTED)
@pytest.mark.parametrize("layer", ["S", "U"])
def test_restricted_outside_kernel(op, layer):
    m = run(restricted_probe(op, layer))
    fault = next(e for e in m.log.events if e.kind == "FAULT")
    assert (fault["kind"], fault["layer"], m.halted) == ("Permission", layer, 65)
    assert fault["op"] == op.split()[0]


@pytest.mark.parametrize("op", ["SEGLEN scratch", "ALARM #1", "LOGEV #2"])
def test_restricted_in_kernel(op):
    assert run(restricted_probe(op, "K")).halted == 0


def test_kernel_alarm_and_log_events():
    m = run(restricted_probe("ALARM #1\nLOGEV #2", "K"))
    alarm = next(e for e in m.log.events if e.kind == "ALARM")
    assert (alarm["kind"], alarm["layer"], alarm["code"]) == ("Guest", "K", "0x1")
    assert any(e.kind == "IO" and e["ch"] == "log" and e["value"] == "0x2" for e in m.log.events)


def test_resolve_without_pending_link_fault():
    assert run(restricted_probe("RESOLVE", "K")).halted == 69


def test_enter_in_plain_code():
    m = run(probe_image("ENTER U\nHALT"))
    assert m.halted == 69


def test_exit_without_enter():
    assert run(gate_image("EXIT\nRET")).halted == 69


def test_exit_twice():
    m = run(gate_image("ENTER U\nEXIT\nEXIT\nRET"))
    assert m.halted == 69
    assert [e["op"] for e in m.log.events if e.kind == "GATE" and e["op"] in ("ENTER", "EXIT")] == ["ENTER", "EXIT"]


def test_enter_cannot_skip_a_layer():
    img = probe_image("CALL g\nHALT", ("g",), (("g", "skip_gate", "ENTER K\nEXIT\nRET", ()),),
                      data="type skip_gate S:--x U:--x K:--x gate_to=K\n")
    m = run(img)
    fault = next(e for e in m.log.events if e.kind == "FAULT")
    assert (fault["kind"], fault["reason"]) == ("GateSequenceFault", "not-one-layer-down")


def test_enter_wrong_target():
    assert run(gate_image("ENTER K\nEXIT\nRET")).halted == 69


def test_sequential_enter_exit_cycles():
    m = run(gate_image("ENTER U\nEXIT\nENTER U\nEXIT\nRET"))
    assert m.halted == 0
    assert layer_sequence(m.log.serialize()) == ["S", "U", "S", "U", "S"]


def test_ret_out_of_gate_without_exit():
    # The return point sits on the Services stack, out of reach from Utilities.
    assert run(gate_image("ENTER U\nRET")).halted == 68


def test_gate_round_trip(tutorial):
    m = run(tutorial)
    assert layer_sequence(m.log.serialize()) == ["S", "U", "S"]
    visits = []
    for e in m.log.events:
        if e.kind == "STEP" and (not visits or visits[-1] != (e["seg"], e["layer"])):
            visits.append((e["seg"], e["layer"]))
    assert visits == [
        ("foo_user", "S"), ("u_gate", "S"), ("u_gate", "U"), ("foo_owner", "U"),
        ("u_gate", "U"), ("u_gate", "S"), ("foo_user", "S"),
    ]
    assert [len(m.stacks[l]) for l in Layer] == [0, 0, 0]
    assert not m.gates and not m.frames
    assert not audit_events(m.log.events)


def test_stack_depths_mid_flight(tutorial):
    from guardvm.image import load_image

    m = load_image(tutorial)
    depths = set()
    while m.runnable:
        m.step()
        depths.add((len(m.stacks[Layer.SERVICES]), len(m.stacks[Layer.UTILITIES]), m.state.layer.letter))
    # inside foo_owner: one frame on S (foo_user) and one on U (u_gate)
    assert (1, 1, "U") in depths
    assert (0, 0, "S") in depths


def test_gate_calling_services_code_faults():
    m = run(gate_image("ENTER U\nCALL svc\nEXIT\nRET", extra=(("svc", "svc_code", "RET", ()),)))
    fault = next(e for e in m.log.events if e.kind == "FAULT")
    assert (fault["kind"], fault["layer"], fault["access"]) == ("Permission", "U", "X")


def test_permissions_follow_the_layer_register():
    data = "type svc_only S:r-- U:--- K:---\nsegment secret svc_only data=hex:2a\n"
    ok = run(probe_image("LDA secret\nOUT\nHALT", ("secret",), data=data))
    assert bytes(ok.output) == b"*"
    gate = ("u_gate", "u_gate", "ENTER U\nLDA secret\nEXIT\nRET", ("secret",))
    m = run(probe_image("CALL u_gate\nHALT", ("u_gate",), (gate,), data=data))
    fault = next(e for e in m.log.events if e.kind == "FAULT")
    assert (fault["kind"], fault["layer"]) == ("Permission", "U")


def test_stack_overflow_is_a_stack_fault():
    m = run(probe_image("CALL main", ("main",)))
    assert m.halted == 68
    assert len(m.stacks[Layer.SERVICES]) == MAX_STACK_DEPTH


def test_stack_holds_only_return_points():
    s = LayerStack(Layer.SERVICES)
    d = Descriptor(1, 4, LayerPerms())
    s.push(d, 4)
    with pytest.raises(TypeError):
        s.push(42, 0)
    with pytest.raises(TypeError):
        s.push(d, "x")
    assert s.pop() == (d, 4)


@given(st.lists(st.booleans(), max_size=60))
def test_stack_matches_list_model(ops):
    s, model = LayerStack(Layer.UTILITIES), []
    d = Descriptor(1, 4, LayerPerms())
    for i, push in enumerate(ops):
        if push:
            s.push(d, i * 4)
            model.append((d, i * 4))
        elif model:
            assert s.pop() == model.pop()
    assert len(s) == len(model)


@given(st.integers(1, 12))
def test_balanced_calls_restore_depths(n):
    prog = "\n".join(["CALL helper"] * n + ["HALT"])
    m = run(probe_image(prog, ("helper",), (("helper", "svc_code", "RET", ()),)))
    assert m.halted == 0
    assert [len(m.stacks[l]) for l in Layer] == [0, 0, 0]
