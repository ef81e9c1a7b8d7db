import pytest

from guardvm.traps import EXIT_ORDINAL, ResumePolicy, TrapKind, exit_code, resume_policy
from guardvm.verify.audit import audit_events
from guardvm.verify.scenarios import error_probe, probe_image, run

ERROR_KINDS = ["Bounds", "Permission", "IllegalOpcode", "DivideByZero", "StackFault", "GateSequenceFault"]


@pytest.mark.parametrize(
    "kind,policy",
    [(TrapKind.LINK_FAULT, ResumePolicy.RETRY), (TrapKind.USER_TRAP, ResumePolicy.NEXT)]
    + [(TrapKind(k), ResumePolicy.ALARM_AND_HALT) for k in ERROR_KINDS],
)
def test_policy_table(kind, policy):
    assert resume_policy(kind) is policy


def test_exit_code_table():
    assert {k.value: exit_code(k) for k in EXIT_ORDINAL} == {
        "Bounds": 64, "Permission": 65, "IllegalOpcode": 66, "DivideByZero": 67, "StackFault": 68,
        "GateSequenceFault": 69, "LinkUnresolvable": 70, "FatalTrapNesting": 71,
    }


@pytest.mark.parametrize("kind", ERROR_KINDS + ["LinkUnresolvable", "FatalTrapNesting"])
def test_error_fault_alarm_then_halt(kind):
    m = run(error_probe(kind))
    evs = [e for e in m.log.events if e.kind != "STEP"]
    assert m.halted == 64 + EXIT_ORDINAL[TrapKind(kind)]
    assert [e.kind for e in evs].count("FAULT") == 1
    assert [e.kind for e in evs].count("ALARM") == 1
    assert [e.kind for e in evs[-2:]] == ["ALARM", "HALT"]
    fault = next(e for e in evs if e.kind == "FAULT")
    alarm = evs[-2]
    assert fault["kind"] == kind
    assert alarm.fields == fault.fields  # payload carried verbatim
    assert not audit_events(m.log.events)


def test_permission_payload_fields():
    m = run(error_probe("Permission"))
    alarm = next(e for e in m.log.events if e.kind == "ALARM")
    assert alarm.as_dict() == {"kind": "Permission", "suid": "0x1001", "offset": "0x0", "layer": "S", "access": "W"}


def test_exit_codes_stable_across_runs():
    assert {run(error_probe("Bounds")).halted for _ in range(3)} == {64}


def test_unbound_user_trap_continues_after():
    m = run(probe_image("LDA #0x41\nTRAP #5\nOUT\nHALT #0"))
    steps = [e for e in m.log.events if e.kind == "STEP"]
    assert [e["off"] for e in steps] == ["0x0", "0x8", "0xc"]
    assert bytes(m.output) == b"A"


def guest_user_trap(handler_body):
    return probe_image(
        "LDA #0x41\nLDX #3\nTRAP #5\nOUT\nHALT #0",
        extra_segments=(("h", "handler", handler_body, ()),),
        traps="trap LinkFault native\ntrap UserTrap guest h start U\n",
    )


def test_guest_user_trap_resumes_after_and_restores_registers():
    m = run(guest_user_trap("LDA #0x5a\nLDX #9\nOUT\nRESUME"))
    assert bytes(m.output) == b"ZA"
    assert (m.state.acc, m.state.x, m.state.layer.letter) == (0x41, 3, "S")
    gates = [(e["op"], e["from"], e["to"]) for e in m.log.events if e.kind == "GATE"]
    assert gates == [("TRAP", "S", "U"), ("RESUME", "U", "S")]
    trap = next(e for e in m.log.events if e.kind == "TRAP")
    assert (trap["offset"], trap["handler"], trap["code"]) == ("0x8", "guest", "0x5")
    resumed = [e for e in m.log.events if e.kind == "STEP" and e["seg"] == "main"]
    assert resumed[-2]["off"] == "0xc"


def test_resume_outside_handler_is_gate_sequence_fault():
    assert run(probe_image("RESUME")).halted == 69


def test_unbalanced_handler_cannot_resume():
    m = run(guest_user_trap("RET\nRESUME"))
    # RET in the handler underflows the Utilities stack
    assert m.halted == 68


def test_nesting_is_capped_at_four():
    m = run(error_probe("FatalTrapNesting"))
    traps = [e for e in m.log.events if e.kind == "TRAP"]
    assert len(traps) == 4
    assert m.halted == 71


def test_faulting_store_has_no_side_effect():
    img = probe_image("LDA #7\nLDX #4\nSTA buf, X\nHALT", ("buf",), data="segment buf svc_data size=4\n")
    m = run(img)
    assert m.halted == 64
    assert m.store.snapshot(img.names.lookup("buf")) == bytes(4)
