"""Command-line driver: ``guardvm asm|build|run|inspect|rename|bind|verify``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .assembler import AssemblyError, assemble, disassemble, read_gobj, write_gobj
from .core import GuardError
from .image import (
    GuardImage,
    build_from_path,
    image_bind,
    image_rename,
    load_image,
    read_image,
    write_image,
)
from .machine import DEFAULT_MAX_STEPS, Status

USAGE_ERROR = 2
BUDGET_EXIT = 124


class CliError(Exception):
    pass


def _cmd_asm(args) -> int:
    path = Path(args.file)
    unit = assemble(path.read_text(), str(path))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{unit.name}.gobj"
    target.write_text(write_gobj(unit))
    print(target)
    return 0


def _cmd_build(args) -> int:
    image = build_from_path(args.manifest)
    write_image(image, args.output)
    return 0


def _cmd_run(args) -> int:
    image = read_image(args.image)
    data = Path(args.input).read_bytes() if args.input else None
    machine = load_image(image, data, trace_steps=args.trace_steps)
    result = machine.run(args.max_steps)
    if args.trace:
        Path(args.trace).write_text(machine.log.serialize())
    if args.out:
        Path(args.out).write_bytes(bytes(machine.output))
    else:
        sys.stdout.buffer.write(bytes(machine.output))
        sys.stdout.flush()
    if result.status is Status.BUDGET_EXCEEDED:
        print(f"guardvm: step budget of {args.max_steps} exhausted", file=sys.stderr)
        return BUDGET_EXIT
    return min(result.code, 255)


def describe(image: GuardImage, segment: Optional[str] = None) -> str:
    if segment is not None:
        return _describe_segment(image, segment)
    out = [f"image {image.name}"]
    entry_suid, entry_off = image.entry
    out.append(f"entry {image.seg_names.get(entry_suid, '-')}+{entry_off:#x} suid={entry_suid:#x}")
    out.append("types:")
    for t in image.types:
        extra = (f" gate_to={t.gate_to.letter}" if t.gate_to is not None else "") + (" handler" if t.handler else "")
        out.append(f"  {t.type_id:#x} {t.name} {t.perms.render()}{extra}")
    out.append("segments:")
    for e in image.gst:
        tpl = image.templates.get(e.suid)
        externs = f" externs={','.join(tpl.externs) or '-'}" if tpl is not None else ""
        out.append(f"  {e.suid:#x} {image.seg_names.get(e.suid, '-')} type={image.types.get(e.type_id).name} "
                   f"length={e.length:#x}{externs}")
    out.append("names:")
    for name, suid in image.names.items():
        out.append(f"  {name} -> {suid:#x}")
    out.append("traps:")
    for b in image.bindings.values():
        out.append(f"  {b.render()}")
    out.append(f"input {len(image.input)} bytes")
    return "\n".join(out) + "\n"


def _describe_segment(image: GuardImage, name: str) -> str:
    from .assembler import ObjectUnit

    suid = image.names.lookup(name)
    entry = next(e for e in image.gst if e.suid == suid)
    t = image.types.get(entry.type_id)
    head = f"; {name} suid={suid:#x} type={t.name} {t.perms.render()} length={entry.length:#x}\n"
    unit = ObjectUnit(name, t.name, image.contents[suid], image.templates.get(suid), image.labels.get(suid, {}))
    return head + disassemble(unit)


def _cmd_inspect(args) -> int:
    sys.stdout.write(describe(read_image(args.image), args.segment))
    return 0


def _cmd_rename(args) -> int:
    image = read_image(args.image)
    image_rename(image, args.old, args.new)
    write_image(image, args.image)
    return 0


def _cmd_bind(args) -> int:
    image = read_image(args.image)
    path = Path(args.objfile)
    text = path.read_text()
    unit = assemble(text, str(path)) if path.suffix == ".gasm" else read_gobj(text)
    suid = image_bind(image, args.name, unit, args.type)
    write_image(image, args.image)
    print(f"{args.name} -> {suid:#x}")
    return 0


def _cmd_verify(args) -> int:
    if args.what == "matrix":
        from .verify.matrix import permission_matrix_check

        r = permission_matrix_check()
        print(f"matrix cases={r.cases} checks={r.checks} mismatches={len(r.mismatches)}")
        if r.first_mismatch:
            print(f"first mismatch: {r.first_mismatch}")
        return 0 if r.ok else 1
    if args.what == "fuzz":
        from .verify.fuzz import fuzz_programs

        r = fuzz_programs(args.seed, args.count)
        print(r.summary())
        for d in (r.divergences + r.host_faults)[:10]:
            print(f"  {d}")
        return 0 if r.ok else 1
    from .verify.scenarios import run_scenarios

    ok = True
    for res in run_scenarios(regen=args.regen):
        print(f"{'PASS' if res.ok else 'FAIL'} {res.name}{' (' + res.diff + ')' if res.diff == 'regenerated' else ''}")
        if not res.ok:
            ok = False
            print(res.diff)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guardvm", description="Layered segment-descriptor VM toolchain")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("asm", help="assemble a .gasm file into a .gobj")
    s.add_argument("file")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=_cmd_asm)

    s = sub.add_parser("build", help="build an image from a manifest")
    s.add_argument("manifest")
    s.add_argument("-o", "--output", required=True, help="image file to write")
    s.set_defaults(func=_cmd_build)

    s = sub.add_parser("run", help="run an image")
    s.add_argument("image")
    s.add_argument("--trace", help="write the event trace here")
    s.add_argument("--trace-steps", action="store_true", help="add one STEP event per instruction")
    s.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    s.add_argument("--in", dest="input", help="input channel bytes (default: the image's own input)")
    s.add_argument("--out", help="write output channel bytes here instead of stdout")
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("inspect", help="describe an image or one of its segments")
    s.add_argument("image")
    s.add_argument("--segment")
    s.set_defaults(func=_cmd_inspect)

    s = sub.add_parser("rename", help="rename a segment in an image")
    s.add_argument("image")
    s.add_argument("old")
    s.add_argument("new")
    s.set_defaults(func=_cmd_rename)

    s = sub.add_parser("bind", help="bind a new segment under a name")
    s.add_argument("image")
    s.add_argument("name")
    s.add_argument("objfile", help=".gobj (or .gasm) file")
    s.add_argument("type")
    s.set_defaults(func=_cmd_bind)

    s = sub.add_parser("verify", help="run a verification harness")
    s.add_argument("what", choices=["matrix", "fuzz", "scenarios"])
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--count", type=int, default=10_000)
    s.add_argument("--regen", action="store_true", help="rewrite golden traces (scenarios)")
    s.set_defaults(func=_cmd_verify)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code else 0
    if getattr(args, "max_steps", 1) <= 0:
        print("guardvm: --max-steps must be positive", file=sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except AssemblyError as exc:
        print(str(exc), file=sys.stderr)
        return USAGE_ERROR
    except (GuardError, ValueError, OSError, KeyError) as exc:
        print(f"guardvm: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
