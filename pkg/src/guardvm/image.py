"""Manifests, image building, the ``.gim`` image text format, and loading.

A manifest declares types, segments, trap bindings, the entry point and an
optional default input channel::

    image tutorial
    type util_data S:r-- U:rw- K:---
    type svc_code  S:--x U:--- K:---
    type u_gate    S:--x U:--x K:--- gate_to=U
    segment foo_user svc_code asm=foo_user.gasm
    segment foo      util_data data=hex:000102030405060708090a0b0c0d0e0f
    trap LinkFault native
    entry foo_user start

Every permission is fixed here, at build time.  SUIDs are handed out from
0x1000 in declaration order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .assembler import ObjectUnit, assemble, parse_int, read_gobj
from .core import (
    FIRST_SUID,
    AppendGranted,
    DuplicateName,
    GlobalSegmentTable,
    GstEntry,
    GuardError,
    Layer,
    LayerPerms,
    TypeEntry,
    TypeTable,
    UnknownType,
    gst_lookup,
)
from .linker import SCRATCH_PREFIX, LinkageTemplate, scratch_perms, scratch_type_name
from .machine import Machine
from .mmu import SegmentStore
from .namespace import NameTable, valid_name
from .traps import BINDABLE_KINDS, HandlerBinding, TrapKind

IMAGE_MAGIC = "guard-image 1"
HEX_CHUNK = 32


class ManifestError(GuardError):
    pass


class EntryNotServices(GuardError):
    pass


class ImageFormatError(GuardError):
    pass


def _at(where: str, line: int, msg: str) -> str:
    return f"{where}:{line}: {msg}"


@dataclass
class TypeDecl:
    name: str
    perms: LayerPerms
    gate_to: Optional[Layer] = None
    handler: bool = False
    line: int = 0


@dataclass
class SegmentDecl:
    name: str
    type_name: str
    source: str  # "asm", "obj", "data", "size" or "unit"
    value: object = None
    line: int = 0


@dataclass
class TrapDecl:
    kind: TrapKind
    native: bool = True
    segment: Optional[str] = None
    label: Optional[str] = None
    layer: Layer = Layer.UTILITIES
    line: int = 0


@dataclass
class Manifest:
    name: str = "image"
    types: List[TypeDecl] = field(default_factory=list)
    segments: List[SegmentDecl] = field(default_factory=list)
    traps: List[TrapDecl] = field(default_factory=list)
    entry: Optional[Tuple[str, Optional[str]]] = None
    entry_line: int = 0
    input: bytes = b""
    where: str = "<manifest>"


def _hex_value(text: str) -> bytes:
    if not text.startswith("hex:"):
        raise ValueError(f"expected hex:..., got {text!r}")
    return bytes.fromhex(text[4:])


def parse_manifest(text: str, base_dir: Optional[Path] = None, where: str = "<manifest>") -> Manifest:
    m = Manifest(where=where)
    base = Path(base_dir) if base_dir is not None else Path(".")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        key, args = words[0], words[1:]
        try:
            if key == "image":
                (m.name,) = args
            elif key == "type":
                m.types.append(_parse_type(args, lineno))
            elif key == "segment":
                m.segments.append(_parse_segment(args, lineno, base))
            elif key == "trap":
                m.traps.append(_parse_trap(args, lineno))
            elif key == "entry":
                if len(args) not in (1, 2):
                    raise ValueError("entry <segment> [<label>]")
                m.entry = (args[0], args[1] if len(args) == 2 else None)
                m.entry_line = lineno
            elif key == "io":
                m.input = _parse_io(args, base)
            else:
                raise ValueError(f"unknown manifest keyword {key!r}")
        except (ValueError, KeyError) as exc:
            raise ManifestError(_at(where, lineno, str(exc).strip("'\""))) from None
    return m


def _parse_type(args: List[str], lineno: int) -> TypeDecl:
    if len(args) < 4:
        raise ValueError("type <name> S:... U:... K:... [gate_to=U|K] [handler]")
    name = args[0]
    if not valid_name(name) or name.startswith(SCRATCH_PREFIX):
        raise ValueError(f"illegal type name {name!r}")
    perms = LayerPerms.parse(" ".join(args[1:4]))
    decl = TypeDecl(name, perms, line=lineno)
    for opt in args[4:]:
        if opt.startswith("gate_to="):
            decl.gate_to = Layer.from_letter(opt[len("gate_to="):])
        elif opt == "handler":
            decl.handler = True
        else:
            raise ValueError(f"unknown type option {opt!r}")
    return decl


def _parse_segment(args: List[str], lineno: int, base: Path) -> SegmentDecl:
    if len(args) != 3:
        raise ValueError("segment <name> <type> asm=FILE|obj=FILE|data=hex:..|size=N")
    name, type_name, src = args
    kind, sep, value = src.partition("=")
    if not sep:
        raise ValueError(f"bad segment source {src!r}")
    if kind in ("asm", "obj"):
        return SegmentDecl(name, type_name, kind, base / value, lineno)
    if kind == "data":
        return SegmentDecl(name, type_name, "data", _hex_value(value), lineno)
    if kind == "size":
        return SegmentDecl(name, type_name, "size", parse_int(value), lineno)
    raise ValueError(f"bad segment source {src!r}")


def _parse_trap(args: List[str], lineno: int) -> TrapDecl:
    if not args:
        raise ValueError("trap <Kind> native | trap <Kind> guest <segment> <label> <layer>")
    kind = TrapKind(args[0])
    if kind not in BINDABLE_KINDS:
        raise ValueError(f"{kind.value} always goes to the error handler and cannot be bound")
    if args[1:] == ["native"]:
        return TrapDecl(kind, True, line=lineno)
    if len(args) == 5 and args[1] == "guest":
        return TrapDecl(kind, False, args[2], args[3], Layer.from_letter(args[4]), lineno)
    raise ValueError("trap <Kind> native | trap <Kind> guest <segment> <label> <layer>")


def _parse_io(args: List[str], base: Path) -> bytes:
    if len(args) != 1 or not args[0].startswith("in="):
        raise ValueError("io in=hex:... | io in=file:PATH")
    value = args[0][3:]
    if value.startswith("file:"):
        return (base / value[5:]).read_bytes()
    return _hex_value(value)


def load_units(manifest: Manifest) -> Dict[str, ObjectUnit]:
    """Assemble or read every file-backed segment a manifest references."""
    units: Dict[str, ObjectUnit] = {}
    for decl in manifest.segments:
        if decl.source == "asm":
            path = Path(decl.value)
            units[decl.name] = assemble(path.read_text(), str(path))
        elif decl.source == "obj":
            units[decl.name] = read_gobj(Path(decl.value).read_text())
    return units


@dataclass
class GuardImage:
    name: str
    types: TypeTable
    gst: GlobalSegmentTable
    names: NameTable
    contents: Dict[int, bytes]
    templates: Dict[int, LinkageTemplate]
    seg_names: Dict[int, str]
    labels: Dict[int, Dict[str, int]]
    bindings: Dict[TrapKind, HandlerBinding]
    entry: Tuple[int, int]
    input: bytes = b""


_LAYER_SETS = [
    tuple(c)
    for n in (1, 2, 3)
    for c in itertools.combinations((Layer.SERVICES, Layer.UTILITIES, Layer.KERNEL), n)
]


def build_image(manifest: Manifest, units: Optional[Dict[str, ObjectUnit]] = None) -> GuardImage:
    units = units or {}
    where = manifest.where
    tt = TypeTable()
    for i, decl in enumerate(manifest.types, 1):
        entry = TypeEntry(i, decl.name, decl.perms, decl.gate_to, decl.handler)
        try:
            tt.add(entry)
        except AppendGranted as exc:
            raise AppendGranted(_at(where, decl.line, str(exc))) from None
        except DuplicateName as exc:
            raise DuplicateName(_at(where, decl.line, str(exc))) from None
        except ValueError as exc:
            raise ManifestError(_at(where, decl.line, str(exc))) from None
    exec_sets = {t.perms.executable_layers() for t in tt}
    next_id = len(manifest.types) + 1
    for layers in _LAYER_SETS:
        if layers in exec_sets:
            tt.add(TypeEntry(next_id, scratch_type_name(layers), scratch_perms(layers)))
            next_id += 1

    gst = GlobalSegmentTable(FIRST_SUID)
    names = NameTable()
    contents: Dict[int, bytes] = {}
    templates: Dict[int, LinkageTemplate] = {}
    seg_names: Dict[int, str] = {}
    labels: Dict[int, Dict[str, int]] = {}
    for decl in manifest.segments:
        if decl.name in names:
            raise DuplicateName(_at(where, decl.line, f"segment {decl.name} declared twice"))
        try:
            t = tt.by_name(decl.type_name)
        except UnknownType:
            raise UnknownType(_at(where, decl.line, f"unknown type {decl.type_name!r}")) from None
        if decl.source in ("asm", "obj", "unit"):
            unit = decl.value if decl.source == "unit" else units.get(decl.name)
            if unit is None:
                raise ManifestError(_at(where, decl.line, f"no object unit for {decl.name}"))
            if unit.name != decl.name or unit.type_name != decl.type_name:
                raise ManifestError(_at(
                    where, decl.line,
                    f"unit declares {unit.name} {unit.type_name}, manifest says {decl.name} {decl.type_name}",
                ))
            data = unit.code
            if unit.template is not None:
                templates_entry = unit.template
            else:
                templates_entry = None
            seg_labels = dict(unit.labels)
        elif decl.source == "data":
            data, templates_entry, seg_labels = decl.value, None, {}
        else:
            data, templates_entry, seg_labels = bytes(decl.value), None, {}
        e = gst.allocate(len(data), t.type_id)
        try:
            names.bind(decl.name, e.suid)
        except ValueError as exc:
            raise ManifestError(_at(where, decl.line, str(exc))) from None
        contents[e.suid] = bytes(data)
        seg_names[e.suid] = decl.name
        labels[e.suid] = seg_labels
        if templates_entry is not None:
            templates[e.suid] = templates_entry

    def locate(seg: str, label: Optional[str], line: int) -> Tuple[int, int]:
        if seg not in names:
            raise ManifestError(_at(where, line, f"unknown segment {seg!r}"))
        suid = names.lookup(seg)
        if label is None:
            return suid, 0
        try:
            return suid, labels[suid][label]
        except KeyError:
            raise ManifestError(_at(where, line, f"segment {seg} has no label {label!r}")) from None

    bindings: Dict[TrapKind, HandlerBinding] = {}
    for td in manifest.traps:
        if td.kind in bindings:
            raise DuplicateName(_at(where, td.line, f"trap {td.kind.value} bound twice"))
        if td.native:
            bindings[td.kind] = HandlerBinding(td.kind)
            continue
        suid, off = locate(td.segment, td.label, td.line)
        t = tt.get(gst_lookup(gst, suid).type_id)
        if not t.handler:
            raise ManifestError(_at(where, td.line, f"{td.segment} is not of a handler type"))
        if not t.perms.for_layer(td.layer).execute:
            raise ManifestError(_at(where, td.line, f"{td.segment} is not executable at {td.layer.letter}"))
        bindings[td.kind] = HandlerBinding(td.kind, False, suid, off, td.layer)

    if manifest.entry is None:
        raise ManifestError(_at(where, 0, "no entry point"))
    entry = locate(*manifest.entry, manifest.entry_line)
    et = tt.get(gst_lookup(gst, entry[0]).type_id)
    if not et.perms.services.execute:
        raise EntryNotServices(_at(
            where, manifest.entry_line, f"entry segment {manifest.entry[0]} is not executable in the Services layer"
        ))
    return GuardImage(manifest.name, tt, gst, names, contents, templates, seg_names, labels, bindings, entry,
                      manifest.input)


def load_image(image: GuardImage, input_bytes: Optional[bytes] = None, trace_steps: bool = False) -> Machine:
    """A fresh machine at the image's entry point, in the Services layer."""
    gst = GlobalSegmentTable(image.gst.next_suid)
    for e in image.gst:
        gst.insert(e)
    gst.next_suid = image.gst.next_suid
    store = SegmentStore()
    for suid, data in sorted(image.contents.items()):
        store.bind(suid, data)
    return Machine(
        types=image.types,
        gst=gst,
        names=image.names.copy(),
        store=store,
        templates=dict(image.templates),
        seg_names=dict(image.seg_names),
        bindings=dict(image.bindings),
        entry=image.entry,
        input_bytes=image.input if input_bytes is None else input_bytes,
        trace_steps=trace_steps,
    )


# -- administration between runs ---------------------------------------------


def image_rename(image: GuardImage, old: str, new: str) -> None:
    image.names.rename(old, new)
    suid = image.names.lookup(new)
    if image.seg_names.get(suid) == old:
        image.seg_names[suid] = new


def image_bind(image: GuardImage, name: str, unit: ObjectUnit, type_name: str) -> int:
    t = image.types.by_name(type_name)
    if name in image.names:
        raise DuplicateName(f"name {name!r} is already bound")
    e = image.gst.allocate(len(unit.code), t.type_id)
    image.names.bind(name, e.suid)
    image.contents[e.suid] = bytes(unit.code)
    image.seg_names[e.suid] = name
    image.labels[e.suid] = dict(unit.labels)
    if unit.template is not None:
        image.templates[e.suid] = unit.template
    return e.suid


def image_delete(image: GuardImage, name: str) -> int:
    suid = image.names.unbind(name)
    image.gst.delete(suid)
    del image.contents[suid]
    image.templates.pop(suid, None)
    return suid


# -- .gim text format --------------------------------------------------------


def _hexlines(tag: str, data: bytes) -> List[str]:
    if not data:
        return [f"{tag} hex:"]
    return [f"{tag} hex:{data[i:i + HEX_CHUNK].hex()}" for i in range(0, len(data), HEX_CHUNK)]


def serialize_image(image: GuardImage) -> str:
    out = [IMAGE_MAGIC, f"name {image.name}", f"next-suid {image.gst.next_suid:#x}"]
    for t in image.types:
        line = f"type {t.type_id:#x} {t.name} {t.perms.render()}"
        if t.gate_to is not None:
            line += f" gate_to={t.gate_to.letter}"
        if t.handler:
            line += " handler"
        out.append(line)
    for e in image.gst:
        out.append(f"segment {e.suid:#x} {image.seg_names.get(e.suid, '-')} type={e.type_id:#x} length={e.length:#x}")
        for label, off in sorted(image.labels.get(e.suid, {}).items(), key=lambda kv: (kv[1], kv[0])):
            out.append(f"label {e.suid:#x} {label} {off:#x}")
        tpl = image.templates.get(e.suid)
        if tpl is not None:
            out.append(f"template {e.suid:#x} scratch={tpl.scratch:#x}")
            for i, sym in enumerate(tpl.externs, 1):
                out.append(f"extern {e.suid:#x} {i:#x} {sym}")
        out.extend(_hexlines(f"data {e.suid:#x}", image.contents[e.suid]))
    for name, suid in image.names.items():
        out.append(f"bind {name} {suid:#x}")
    for kind in TrapKind:
        if kind in image.bindings:
            out.append(image.bindings[kind].render())
    out.append(f"entry {image.entry[0]:#x} {image.entry[1]:#x}")
    out.extend(_hexlines("input", image.input))
    return "\n".join(out) + "\n"


def parse_image(text: str) -> GuardImage:
    lines = text.splitlines()
    if not lines or lines[0] != IMAGE_MAGIC:
        raise ImageFormatError("not a guard image (bad header)")
    name = "image"
    next_suid = FIRST_SUID
    tt = TypeTable()
    entries: List[GstEntry] = []
    seg_names: Dict[int, str] = {}
    labels: Dict[int, Dict[str, int]] = {}
    scratch: Dict[int, int] = {}
    externs: Dict[int, List[str]] = {}
    data: Dict[int, bytearray] = {}
    names = NameTable()
    bindings: Dict[TrapKind, HandlerBinding] = {}
    entry = None
    input_bytes = bytearray()
    for lineno, line in enumerate(lines[1:], 2):
        w = line.split()
        if not w:
            continue
        try:
            key = w[0]
            if key == "name":
                name = w[1]
            elif key == "next-suid":
                next_suid = int(w[1], 16)
            elif key == "type":
                perms = LayerPerms.parse(" ".join(w[3:6]))
                gate_to, handler = None, False
                for opt in w[6:]:
                    if opt.startswith("gate_to="):
                        gate_to = Layer.from_letter(opt[8:])
                    elif opt == "handler":
                        handler = True
                    else:
                        raise ValueError(f"bad type option {opt}")
                tt.add(TypeEntry(int(w[1], 16), w[2], perms, gate_to, handler))
            elif key == "segment":
                suid = int(w[1], 16)
                fields = dict(kv.split("=", 1) for kv in w[3:])
                entries.append(GstEntry(suid, int(fields["length"], 16), int(fields["type"], 16)))
                seg_names[suid] = w[2]
                labels[suid] = {}
                data[suid] = bytearray()
            elif key == "label":
                labels[int(w[1], 16)][w[2]] = int(w[3], 16)
            elif key == "template":
                scratch[int(w[1], 16)] = int(w[2].split("=", 1)[1], 16)
                externs[int(w[1], 16)] = []
            elif key == "extern":
                suid = int(w[1], 16)
                if int(w[2], 16) != len(externs[suid]) + 1:
                    raise ValueError("extern slots out of order")
                externs[suid].append(w[3])
            elif key == "data":
                data[int(w[1], 16)] += _hex_value(w[2])
            elif key == "bind":
                names.bind(w[1], int(w[2], 16))
            elif key == "trap":
                kind = TrapKind(w[1])
                if w[2] == "native":
                    bindings[kind] = HandlerBinding(kind)
                else:
                    f = dict(kv.split("=", 1) for kv in w[3:])
                    bindings[kind] = HandlerBinding(
                        kind, False, int(f["suid"], 16), int(f["entry"], 16), Layer.from_letter(f["layer"])
                    )
            elif key == "entry":
                entry = (int(w[1], 16), int(w[2], 16))
            elif key == "input":
                input_bytes += _hex_value(w[1])
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, KeyError, IndexError, GuardError) as exc:
            raise ImageFormatError(f"image line {lineno}: {exc}") from None
    if entry is None:
        raise ImageFormatError("image has no entry line")
    gst = GlobalSegmentTable(next_suid)
    for e in entries:
        if len(data[e.suid]) != e.length:
            raise ImageFormatError(f"segment {e.suid:#x}: {len(data[e.suid])} data bytes, length says {e.length}")
        gst.insert(e)
    gst.next_suid = next_suid
    templates = {s: LinkageTemplate(scratch[s], tuple(externs[s])) for s in scratch}
    return GuardImage(name, tt, gst, names, {s: bytes(b) for s, b in data.items()}, templates, seg_names, labels,
                      bindings, entry, bytes(input_bytes))


def read_image(path) -> GuardImage:
    return parse_image(Path(path).read_text())


def write_image(image: GuardImage, path) -> None:
    Path(path).write_text(serialize_image(image))


def build_from_path(manifest_path) -> GuardImage:
    path = Path(manifest_path)
    manifest = parse_manifest(path.read_text(), path.parent, str(path))
    return build_image(manifest, load_units(manifest))


def build_from_text(manifest_text: str, sources: Dict[str, str], where: str = "<manifest>") -> GuardImage:
    """Build from manifest text whose ``asm=`` files are keys of ``sources``."""
    manifest = parse_manifest(manifest_text, Path(""), where)
    units: Dict[str, ObjectUnit] = {}
    for decl in manifest.segments:
        if decl.source == "asm":
            key = str(decl.value)
            if key not in sources:
                raise ManifestError(_at(where, decl.line, f"no source named {key!r}"))
            units[decl.name] = assemble(sources[key], key)
        elif decl.source == "obj":
            raise ManifestError(_at(where, decl.line, "obj= needs files on disk"))
    return build_image(manifest, units)
