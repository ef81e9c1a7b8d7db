"""Scenario images and golden traces.

Each scenario runs a fixed image with fixed input and produces trace text.
The committed traces live in ``golden/``; ``run_scenarios(regen=True)``
rewrites them, so any change in behaviour shows up as a diff.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from ..assembler import assemble
from ..demos import manifest_path
from ..image import GuardImage, build_from_path, build_from_text, image_bind, image_rename, load_image
from ..machine import Machine

GOLDEN_DIR = Path(__file__).with_name("golden")

NETFILTER_SAMPLE = bytes.fromhex("0301160502005001090400170101" "0200bd" "050001020304" "0003")
HOTSWAP_INPUT = bytes(range(1, 7))

PROBE_TYPES = """\
type svc_code  S:--x U:--- K:---
type u_gate    S:--x U:--x K:--- gate_to=U
type util_code S:--- U:--x K:---
type k_gate    S:--- U:--x K:--x gate_to=K
type handler   S:--- U:--x K:--- handler
type svc_data  S:rw- U:rw- K:---
type ro_data   S:r-- U:r-- K:---
"""


def _unit(name: str, type_name: str, body: str, externs=()) -> str:
    lines = [f".segment {name} {type_name}"] + [f".extern {e}" for e in externs]
    return "\n".join(lines + ["start:"] + [f"    {l}" for l in body.strip().splitlines()]) + "\n"


def probe_image(main: str, main_externs=(), extra_segments: Tuple[Tuple[str, str, str, tuple], ...] = (),
                data: str = "", traps: str = "trap LinkFault native\n", input_hex: str = "") -> GuardImage:
    """A small image: ``main`` in Services plus any extra code segments.

    ``extra_segments`` holds (name, type, body, externs) tuples.
    """
    sources = {"main.gasm": _unit("main", "svc_code", main, main_externs)}
    manifest = "image probe\n" + PROBE_TYPES + "segment main svc_code asm=main.gasm\n"
    for name, type_name, body, externs in extra_segments:
        sources[f"{name}.gasm"] = _unit(name, type_name, body, externs)
        manifest += f"segment {name} {type_name} asm={name}.gasm\n"
    manifest += data + traps + "entry main start\n"
    if input_hex:
        manifest += f"io in=hex:{input_hex}\n"
    return build_from_text(manifest, sources, "<probe>")


def restricted_probe(op_text: str, layer: str) -> GuardImage:
    """Run ``op_text`` in layer S, U or K, then return and halt 0."""
    if layer == "S":
        return probe_image(f"{op_text}\nHALT #0")
    k_gate = ("k_gate", "k_gate", f"ENTER K\n{op_text}\nEXIT\nRET", ())
    if layer == "U":
        u_body = f"ENTER U\n{op_text}\nEXIT\nRET"
        extras = (("u_gate", "u_gate", u_body, ()),)
    else:
        extras = (("u_gate", "u_gate", "ENTER U\nCALL k_gate\nEXIT\nRET", ("k_gate",)), k_gate)
    return probe_image("CALL u_gate\nHALT #0", ("u_gate",), extras)


def error_probe(kind: str) -> GuardImage:
    """An image whose run ends in an error fault of ``kind``."""
    if kind == "Bounds":
        return probe_image("LDX #4\nLDA buf, X\nHALT #0", ("buf",), data="segment buf svc_data size=4\n")
    if kind == "Permission":
        return probe_image("LDA #1\nSTA ro\nHALT #0", ("ro",), data="segment ro ro_data data=hex:00\n")
    if kind == "IllegalOpcode":
        return probe_image(".word 0xffffffff\nHALT #0")
    if kind == "DivideByZero":
        return probe_image("LDA #9\nDIV #0\nHALT #0")
    if kind == "StackFault":
        return probe_image("RET")
    if kind == "GateSequenceFault":
        return probe_image("ENTER U\nHALT #0")
    if kind == "LinkUnresolvable":
        return probe_image("LDA ghost\nHALT #0", ("ghost",))
    if kind == "FatalTrapNesting":
        return probe_image(
            "TRAP #0\nHALT #0",
            extra_segments=(("h", "handler", "TRAP #1\nRESUME", ()),),
            traps="trap LinkFault native\ntrap UserTrap guest h start U\n",
        )
    raise ValueError(f"no probe for {kind}")


def run(image: GuardImage, input_bytes: Optional[bytes] = None, trace_steps: bool = True,
        max_steps: int = 100_000) -> Machine:
    m = load_image(image, input_bytes, trace_steps)
    m.run(max_steps)
    return m


def demo_image(name: str) -> GuardImage:
    return build_from_path(manifest_path(name))


def firewall_v2():
    return assemble((manifest_path("hotswap").parent / "firewall_v2.gasm").read_text(), "firewall_v2.gasm")


def hotswap_runs(swap_after: int = 3) -> Tuple[Machine, Machine, int, int]:
    """Live swap during one run, then a fresh run of the swapped image.

    Returns (live machine, fresh machine, old suid, new suid).
    """
    image = demo_image("hotswap")
    old = image.names.lookup("firewall")
    live = load_image(image, HOTSWAP_INPUT, trace_steps=True)
    while live.output.__len__() < swap_after and live.runnable:
        live.step()
    v2 = firewall_v2()
    live.admin_rename("firewall", "oldfirewall")
    live.admin_bind("firewall", v2.code, "svc_code", v2.template)
    live.run()
    image_rename(image, "firewall", "oldfirewall")
    new = image_bind(image, "firewall", v2, "svc_code")
    fresh = run(image, HOTSWAP_INPUT)
    return live, fresh, old, new


def _trace(m: Machine) -> str:
    return m.log.serialize()


def _scenarios() -> Dict[str, Callable[[], str]]:
    def hot(which: int) -> Callable[[], str]:
        return lambda: _trace(hotswap_runs()[which])

    return {
        "tutorial": lambda: _trace(run(demo_image("tutorial"))),
        "guest_linker": lambda: _trace(run(demo_image("guest_linker"))),
        "netfilter": lambda: _trace(run(demo_image("netfilter"), NETFILTER_SAMPLE, trace_steps=False)),
        "hotswap_live": hot(0),
        "hotswap_fresh": hot(1),
        "resolve_in_services": lambda: _trace(run(restricted_probe("RESOLVE", "S"))),
        "user_trap": lambda: _trace(run(probe_image("LDA #0x41\nTRAP #5\nOUT\nHALT #0"))),
    }


SCENARIOS = tuple(_scenarios())


@dataclass
class ScenarioResult:
    name: str
    ok: bool
    diff: str = ""


def run_scenarios(regen: bool = False, golden_dir: Path = GOLDEN_DIR) -> List[ScenarioResult]:
    results = []
    for name, produce in _scenarios().items():
        text = produce()
        path = Path(golden_dir) / f"{name}.trace"
        if regen:
            path.write_text(text)
            results.append(ScenarioResult(name, True, "regenerated"))
            continue
        want = path.read_text() if path.exists() else ""
        if text == want:
            results.append(ScenarioResult(name, True))
        else:
            diff = "".join(difflib.unified_diff(
                want.splitlines(True), text.splitlines(True), f"golden/{name}.trace", "actual"))
            results.append(ScenarioResult(name, False, diff or "golden file missing"))
    return results
