"""Trace auditing as a pure function of trace text.

The parser here is separate from the one in ``namespace`` on purpose.  The
audit checks grammar, step monotonicity, at-most-once linking, trap policy
conformance, the legality of every layer transition and that each STEP line
runs in the layer the GATE events say the process is in.
"""

from __future__ import annotations

import re
from typing import Iterable, List, Optional, Tuple

LINE_RE = re.compile(r"^EV (\d+) ([A-Z]+)((?: [A-Za-z_]+=\S+)*)$")
LEADING = {
    "STEP": ("layer", "seg", "suid", "off", "op", "arg", "acc", "x"),
    "TRAP": ("kind", "suid", "offset", "layer", "handler"),
    "LINK": ("owner", "slot", "sym", "suid", "length", "S", "U", "K", "gate", "handler"),
    "GATE": ("op", "from", "to", "seg"),
    "FAULT": ("kind", "suid", "offset", "layer"),
    "ALARM": ("kind", "suid", "offset", "layer"),
    "IO": ("ch", "value"),
    "HALT": ("code",),
}
EXIT_CODES = {
    "Bounds": 64, "Permission": 65, "IllegalOpcode": 66, "DivideByZero": 67,
    "StackFault": 68, "GateSequenceFault": 69, "LinkUnresolvable": 70, "FatalTrapNesting": 71,
}
BELOW = {"S": "U", "U": "K"}

Parsed = Tuple[int, str, dict, List[str]]


def parse_line(line: str) -> Parsed:
    m = LINE_RE.match(line)
    if not m:
        raise ValueError(f"malformed event line {line!r}")
    pairs = [p.split("=", 1) for p in m.group(3).split()]
    return int(m.group(1)), m.group(2), dict(pairs), [k for k, _ in pairs]


def _num(text: str) -> Optional[int]:
    try:
        return int(text, 16) if text.startswith("0x") else int(text)
    except ValueError:
        return None


def audit_trace(text: str) -> List[str]:
    problems: List[str] = []
    parsed: List[Parsed] = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        try:
            parsed.append(parse_line(line))
        except ValueError as exc:
            problems.append(f"line {n}: {exc}")
    return problems + _audit(parsed)


def audit_events(events: Iterable) -> List[str]:
    """Audit in-memory events by going through their text form."""
    return audit_trace("\n".join(e.format() for e in events))


def _audit(evs: List[Parsed]) -> List[str]:
    out: List[str] = []
    last_step = 0
    linked = set()
    layer = "S"
    # entries are ("gate", from-layer) or ("trap", from-layer)
    nest: List[Tuple[str, str]] = []
    linker_from: Optional[str] = None
    halted_at: Optional[int] = None
    for i, (step, kind, f, keys) in enumerate(evs):
        where = f"event {i + 1} (step {step} {kind})"
        if halted_at is not None:
            out.append(f"{where}: event after HALT")
        if step < last_step:
            out.append(f"{where}: step number went backwards")
        last_step = step
        lead = LEADING.get(kind)
        if lead is None:
            out.append(f"{where}: unknown event kind")
            continue
        if tuple(keys[:len(lead)]) != lead:
            out.append(f"{where}: keys {keys} do not start with {list(lead)}")
            continue
        if kind == "STEP" and f["layer"] != layer:
            out.append(f"{where}: runs at {f['layer']} but the process is in {layer}")
        elif kind == "LINK":
            key = (f["owner"], f["slot"])
            if key in linked:
                out.append(f"{where}: slot {f['slot']} of {f['owner']} linked twice")
            linked.add(key)
        elif kind == "FAULT":
            out.extend(_fault_policy(evs, i, where))
        elif kind == "TRAP":
            if f["kind"] in EXIT_CODES and f["handler"] != "native":
                out.append(f"{where}: error trap sent to a guest handler")
            if f["kind"] == "LinkFault" and f["handler"] == "native":
                out.extend(_native_link_policy(evs, i, where))
        elif kind == "HALT":
            halted_at = i
        elif kind == "GATE":
            op, src, dst = f["op"], f["from"], f["to"]
            if op == "LINKER":
                if linker_from is None:
                    if src != layer or dst != "U":
                        out.append(f"{where}: linker entry {src}->{dst} from layer {layer}")
                    linker_from = src
                elif src != "U" or dst != "K":
                    out.append(f"{where}: second linker hop must be U->K, got {src}->{dst}")
                continue
            if op == "RESUME" and linker_from is not None:
                if src != "K" or dst != linker_from:
                    out.append(f"{where}: native resume {src}->{dst}, expected K->{linker_from}")
                linker_from = None
                continue
            if src != layer:
                out.append(f"{where}: transition from {src} while in {layer}")
            if op == "ENTER":
                if BELOW.get(src) != dst:
                    out.append(f"{where}: ENTER {src}->{dst} is not one layer down")
                nest.append(("gate", src))
            elif op == "EXIT":
                if not nest or nest[-1] != ("gate", dst):
                    out.append(f"{where}: EXIT to {dst} does not match an ENTER")
                else:
                    nest.pop()
            elif op == "TRAP":
                nest.append(("trap", src))
            elif op == "RESUME":
                if not nest or nest[-1] != ("trap", dst):
                    out.append(f"{where}: RESUME to {dst} does not match a trap")
                else:
                    nest.pop()
            else:
                out.append(f"{where}: unknown gate op {op}")
            layer = dst
    return out


def _fault_policy(evs: List[Parsed], i: int, where: str) -> List[str]:
    step, _, f, _ = evs[i]
    rest = [e for e in evs[i + 1:] if e[0] == step]
    kinds = [e[1] for e in rest]
    if "ALARM" not in kinds or kinds[-1:] != ["HALT"]:
        return [f"{where}: fault not followed by ALARM and HALT"]
    if kinds.count("ALARM") != 1 or kinds.index("ALARM") != len(kinds) - 2:
        return [f"{where}: expected exactly one ALARM directly before HALT, got {kinds}"]
    # later events have not been key-checked yet, hence .get
    alarm = rest[kinds.index("ALARM")][2]
    if alarm.get("kind") != f["kind"]:
        return [f"{where}: ALARM kind {alarm.get('kind')} differs from the fault"]
    want = EXIT_CODES.get(f["kind"])
    code = _num(rest[-1][2].get("code", ""))
    if code is None:
        return [f"{where}: exit code {rest[-1][2].get('code')} is not a number"]
    if want is not None and code != want:
        return [f"{where}: exit code {code:#x} != {want:#x}"]
    return []


def _native_link_policy(evs: List[Parsed], i: int, where: str) -> List[str]:
    step, _, f, _ = evs[i]
    for s, kind, g, _ in evs[i + 1:]:
        if s != step:
            break
        if kind == "LINK":
            if (g.get("owner"), g.get("slot")) != (f["suid"], f.get("slot")):
                return [f"{where}: LinkFault on {f['suid']} slot {f.get('slot')} linked "
                        f"{g.get('owner')}/{g.get('slot')}"]
            return []
        if kind == "FAULT" and g.get("kind") == "LinkUnresolvable":
            return []
    return [f"{where}: native LinkFault with no LINK in the same step"]


def layer_sequence(text: str) -> List[str]:
    """Distinct consecutive layers the process occupied, from GATE events."""
    seq = ["S"]
    pending = None
    for line in text.splitlines():
        if not line:
            continue
        _, kind, f, _ = parse_line(line)
        if kind != "GATE":
            continue
        if f["op"] == "LINKER":
            pending = pending or f["from"]
            continue
        if f["op"] == "RESUME" and pending is not None:
            pending = None
            continue
        if f["to"] != seq[-1]:
            seq.append(f["to"])
    return seq
