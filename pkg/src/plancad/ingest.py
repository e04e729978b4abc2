"""Reader, writer and block flattener for the ASCII group-code interchange subset.

The accepted grammar is documented in docs/formats.md: alternating group-code
and value lines, sections HEADER / TABLES / BLOCKS / ENTITIES, entity kinds
LINE, ARC, CIRCLE, LWPOLYLINE, INSERT, TEXT and MTEXT. Anything else is
skipped and counted, never fatal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Union

from . import geometry
from .geometry import Affine, Kind, Primitive

SUPPORTED_ENTITY_TYPES = {"LINE", "ARC", "CIRCLE", "LWPOLYLINE", "INSERT", "TEXT", "MTEXT"}

# Header units variable value -> drawing-unit-to-meter factor.
UNIT_SCALES = {1: 0.0254, 2: 0.3048, 4: 0.001, 5: 0.01, 6: 1.0}
DEFAULT_UNIT_SCALE = 0.001  # millimeters


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class LayerRecord:
    name: str
    visible: bool = True


@dataclass(frozen=True)
class PrimitiveEntity:
    primitive: Primitive
    layer: str


@dataclass(frozen=True)
class BlockRef:
    """A block placement: translate(insert) . rotate(rotation_deg) . scale(sx, sy)."""

    block_name: str
    insert: geometry.Point
    layer: str
    ref_id: str
    scale_x: float = 1.0
    scale_y: float = 1.0
    rotation_deg: float = 0.0

    def __post_init__(self):
        if self.scale_x == 0.0 or self.scale_y == 0.0:
            raise ValueError(f"block reference {self.ref_id} has a zero scale")

    @property
    def placement(self) -> Affine:
        t = Affine.scaling(self.scale_x, self.scale_y)
        t = t.then(Affine.rotation(math.radians(self.rotation_deg)))
        return t.then(Affine.translation(*self.insert))


@dataclass(frozen=True)
class TextEntity:
    content: str
    anchor: geometry.Point
    layer: str
    text_id: str


Entity = Union[PrimitiveEntity, BlockRef, TextEntity]


@dataclass(frozen=True)
class BlockDef:
    name: str
    base: geometry.Point
    entities: tuple[Entity, ...]


@dataclass(frozen=True)
class ParseReport:
    skipped: dict[str, int] = field(default_factory=dict)

    def total_skipped(self) -> int:
        return sum(self.skipped.values())


@dataclass(frozen=True)
class ScrubReport:
    policy: str
    affected: int


@dataclass(frozen=True)
class DrawingDocument:
    layers: tuple[LayerRecord, ...]
    blocks: dict[str, BlockDef]
    entities: tuple[Entity, ...]
    unit_scale: float = DEFAULT_UNIT_SCALE
    parse_report: ParseReport = field(default_factory=ParseReport, compare=False)
    scrub_report: ScrubReport | None = field(default=None, compare=False)

    def text_entities(self) -> list[TextEntity]:
        return [e for e in self.entities if isinstance(e, TextEntity)]


@dataclass(frozen=True)
class PlacedPrimitive:
    primitive: Primitive
    layer: str
    # (blockName, refId) of the outermost reference; None for top-level entities.
    provenance: tuple[str, str] | None = None


@dataclass(frozen=True)
class FlatDrawing:
    primitives: tuple[PlacedPrimitive, ...]
    layers: tuple[LayerRecord, ...]
    unit_scale: float

    def primitive_layers(self) -> list[str]:
        """Distinct primitive-bearing layer names, in first-seen order."""
        seen: dict[str, None] = {}
        for pp in self.primitives:
            seen.setdefault(pp.layer, None)
        return list(seen)


# -- tag stream -------------------------------------------------------------

class _TagStream:
    def __init__(self, text: str):
        self._lines = text.splitlines()
        while self._lines and self._lines[-1].strip() == "":
            self._lines.pop()
        self._pos = 0
        self._pushed: tuple[int, str, int] | None = None
        self.last_line = 0

    def read(self) -> tuple[int, str, int] | None:
        """Next (code, value, line-number-of-code) pair, or None at EOF."""
        if self._pushed is not None:
            tag, self._pushed = self._pushed, None
            return tag
        if self._pos >= len(self._lines):
            return None
        code_line = self._pos + 1
        raw = self._lines[self._pos].strip()
        if self._pos + 1 >= len(self._lines):
            raise ParseError(code_line, f"dangling group code {raw!r} at end of stream")
        try:
            code = int(raw)
        except ValueError:
            raise ParseError(code_line, f"group code is not an integer: {raw!r}") from None
        value = self._lines[self._pos + 1].strip()
        self._pos += 2
        self.last_line = code_line
        return code, value, code_line

    def expect(self) -> tuple[int, str, int]:
        tag = self.read()
        if tag is None:
            raise ParseError(self.last_line + 1, "unexpected end of stream")
        return tag

    def push(self, tag: tuple[int, str, int]) -> None:
        self._pushed = tag


def _as_float(value: str, line: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise ParseError(line, f"expected a number, got {value!r}") from None


def _collect_codes(stream: _TagStream) -> dict[int, list[tuple[str, int]]]:
    """Gather an entity's tags until the next 0-code."""
    by_code: dict[int, list[tuple[str, int]]] = {}
    while True:
        tag = stream.read()
        if tag is None:
            return by_code
        code, value, line = tag
        if code == 0:
            stream.push(tag)
            return by_code
        by_code.setdefault(code, []).append((value, line))


def _first(by_code, code, default=None):
    vals = by_code.get(code)
    return vals[0][0] if vals else default


def _first_float(by_code, code, line, default=None):
    vals = by_code.get(code)
    if not vals:
        if default is None:
            raise ParseError(line, f"missing required group code {code}")
        return default
    return _as_float(vals[0][0], vals[0][1])


# -- entity parsing ---------------------------------------------------------

def _bulge_to_arc(p0: geometry.Point, p1: geometry.Point, bulge: float,
                  source_id: str) -> Primitive:
    """Convert a bulged polyline segment to an arc primitive.

    bulge = tan(theta/4); positive bulges turn counter-clockwise.
    """
    chord = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    theta = 4.0 * math.atan(abs(bulge))
    radius = chord / (2.0 * math.sin(theta / 2.0))
    mx, my = (p0[0] + p1[0]) / 2.0, (p0[1] + p1[1]) / 2.0
    h = radius * math.cos(theta / 2.0)
    if theta > math.pi:
        h = -h
    ux, uy = (p1[0] - p0[0]) / chord, (p1[1] - p0[1]) / chord
    if bulge > 0:
        nx, ny = -uy, ux
    else:
        nx, ny = uy, -ux
    cx, cy = mx + nx * h, my + ny * h
    a0 = math.atan2(p0[1] - cy, p0[0] - cx)
    a1 = math.atan2(p1[1] - cy, p1[0] - cx)
    if bulge < 0:
        a0, a1 = a1, a0
    return geometry.arc((cx, cy), radius, a0, a1, source_id)


def _parse_lwpolyline(stream: _TagStream, eid: str, line0: int) -> tuple[list[Primitive], str]:
    layer = "0"
    closed = False
    verts: list[geometry.Point] = []
    bulges: list[float] = []
    pending_x: float | None = None
    while True:
        tag = stream.read()
        if tag is None:
            break
        code, value, line = tag
        if code == 0:
            stream.push(tag)
            break
        if code == 8:
            layer = value
        elif code == 70:
            closed = bool(int(_as_float(value, line)) & 1)
        elif code == 10:
            pending_x = _as_float(value, line)
        elif code == 20:
            if pending_x is None:
                raise ParseError(line, "vertex y before x in LWPOLYLINE")
            verts.append((pending_x, _as_float(value, line)))
            bulges.append(0.0)
            pending_x = None
        elif code == 42:
            if not bulges:
                raise ParseError(line, "bulge before first vertex in LWPOLYLINE")
            bulges[-1] = _as_float(value, line)
    if len(verts) < 2:
        raise ParseError(line0, "LWPOLYLINE needs at least two vertices")
    pairs = list(zip(verts, verts[1:]))
    seg_bulges = bulges[:-1]
    if closed:
        pairs.append((verts[-1], verts[0]))
        seg_bulges = bulges[:]
    segs: list[Primitive] = []
    for i, ((a, b), bulge) in enumerate(zip(pairs, seg_bulges)):
        if a == b:
            continue  # degenerate repeated vertex
        sid = f"{eid}.{i}"
        if bulge == 0.0:
            segs.append(geometry.polyseg(a, b, sid))
        else:
            segs.append(_bulge_to_arc(a, b, bulge, sid))
    return segs, layer


class _Skipped(dict):
    def bump(self, kind: str) -> None:
        self[kind] = self.get(kind, 0) + 1


def _parse_entity(stream: _TagStream, etype: str, line0: int,
                  next_id: Callable[[], str], note_layer: Callable[[str], None],
                  skipped: _Skipped, into: list[Entity]) -> None:
    if etype == "LWPOLYLINE":
        eid = next_id()
        segs, layer = _parse_lwpolyline(stream, eid, line0)
        note_layer(layer)
        for seg in segs:
            into.append(PrimitiveEntity(seg, layer))
        return

    by_code = _collect_codes(stream)
    layer = _first(by_code, 8, "0")
    note_layer(layer)
    eid = next_id()
    if etype == "LINE":
        p0 = (_first_float(by_code, 10, line0), _first_float(by_code, 20, line0))
        p1 = (_first_float(by_code, 11, line0), _first_float(by_code, 21, line0))
        if p0 == p1:
            skipped.bump("degenerate")
            return
        into.append(PrimitiveEntity(geometry.line(p0, p1, eid), layer))
    elif etype == "CIRCLE":
        center = (_first_float(by_code, 10, line0), _first_float(by_code, 20, line0))
        radius = _first_float(by_code, 40, line0)
        if radius <= 0:
            skipped.bump("degenerate")
            return
        into.append(PrimitiveEntity(geometry.circle(center, radius, eid), layer))
    elif etype == "ARC":
        center = (_first_float(by_code, 10, line0), _first_float(by_code, 20, line0))
        radius = _first_float(by_code, 40, line0)
        a0 = math.radians(_first_float(by_code, 50, line0))
        a1 = math.radians(_first_float(by_code, 51, line0))
        if radius <= 0 or geometry.normalize_angle(a0) == geometry.normalize_angle(a1):
            skipped.bump("degenerate")
            return
        into.append(PrimitiveEntity(geometry.arc(center, radius, a0, a1, eid), layer))
    elif etype in ("TEXT", "MTEXT"):
        content = "".join(v for v, _ in by_code.get(3, [])) + _first(by_code, 1, "")
        anchor = (_first_float(by_code, 10, line0, 0.0), _first_float(by_code, 20, line0, 0.0))
        into.append(TextEntity(content, anchor, layer, eid))
    elif etype == "INSERT":
        name = _first(by_code, 2)
        if name is None:
            raise ParseError(line0, "INSERT without a block name")
        ins = (_first_float(by_code, 10, line0, 0.0), _first_float(by_code, 20, line0, 0.0))
        sx = _first_float(by_code, 41, line0, 1.0)
        sy = _first_float(by_code, 42, line0, 1.0)
        rot = _first_float(by_code, 50, line0, 0.0)
        cols = max(int(_first_float(by_code, 70, line0, 1.0)), 1)
        rows = max(int(_first_float(by_code, 71, line0, 1.0)), 1)
        col_dx = _first_float(by_code, 44, line0, 0.0)
        row_dy = _first_float(by_code, 45, line0, 0.0)
        if cols == 1 and rows == 1:
            into.append(BlockRef(name, ins, layer, eid, sx, sy, rot))
        else:
            # Array placement: one reference per cell, offset in the rotated frame.
            rot_rad = math.radians(rot)
            cr, sr = math.cos(rot_rad), math.sin(rot_rad)
            for r in range(rows):
                for c in range(cols):
                    ox, oy = c * col_dx, r * row_dy
                    cell_ins = (ins[0] + cr * ox - sr * oy, ins[1] + sr * ox + cr * oy)
                    into.append(BlockRef(name, cell_ins, layer, f"{eid}@{r},{c}", sx, sy, rot))
    else:
        raise ParseError(line0, f"unsupported entity routed to _parse_entity: {etype}")


def _skip_entity(stream: _TagStream) -> None:
    while True:
        tag = stream.read()
        if tag is None:
            return
        if tag[0] == 0:
            stream.push(tag)
            return


# -- section parsing --------------------------------------------------------

class _DocBuilder:
    def __init__(self):
        self.layers: list[LayerRecord] = []
        self._layer_names: set[str] = set()
        self.blocks: dict[str, BlockDef] = {}
        self.entities: list[Entity] = []
        self.unit_scale = DEFAULT_UNIT_SCALE
        self.skipped = _Skipped()
        self._counter = 0

    def next_id(self) -> str:
        eid = f"E{self._counter:05d}"
        self._counter += 1
        return eid

    def add_layer(self, name: str, visible: bool = True) -> None:
        if name not in self._layer_names:
            self._layer_names.add(name)
            self.layers.append(LayerRecord(name, visible))

    def build(self) -> DrawingDocument:
        return DrawingDocument(
            layers=tuple(self.layers),
            blocks=dict(self.blocks),
            entities=tuple(self.entities),
            unit_scale=self.unit_scale,
            parse_report=ParseReport(dict(self.skipped)),
        )


def _parse_header(stream: _TagStream, builder: _DocBuilder) -> None:
    current_var = None
    while True:
        code, value, line = stream.expect()
        if code == 0 and value == "ENDSEC":
            return
        if code == 9:
            current_var = value.upper()
        elif code == 70 and current_var == "$INSUNITS":
            units = int(_as_float(value, line))
            if units in UNIT_SCALES:
                builder.unit_scale = UNIT_SCALES[units]


def _parse_tables(stream: _TagStream, builder: _DocBuilder) -> None:
    while True:
        code, value, line = stream.expect()
        if code == 0 and value == "ENDSEC":
            return
        if code == 0 and value == "LAYER":
            by_code = _collect_codes(stream)
            name = _first(by_code, 2)
            if name is None:
                continue
            flags = int(_first_float(by_code, 70, line, 0.0))
            color = _first_float(by_code, 62, line, 7.0)
            builder.add_layer(name, visible=not (flags & 1) and color >= 0)


def _parse_block_body(stream: _TagStream, name: str, builder: _DocBuilder) -> tuple[Entity, ...]:
    members: list[Entity] = []
    index = [0]

    def member_id() -> str:
        eid = f"{name}.{index[0]}"
        index[0] += 1
        return eid

    def note_layer(layer: str) -> None:
        # "0" inside a block is the inheritance placeholder, not a layer.
        if layer != "0":
            builder.add_layer(layer)

    while True:
        code, value, line = stream.expect()
        if code != 0:
            raise ParseError(line, f"unexpected code {code} inside block {name!r}")
        if value == "ENDBLK":
            _collect_codes(stream)
            return tuple(members)
        if value in SUPPORTED_ENTITY_TYPES:
            _parse_entity(stream, value, line, member_id, note_layer,
                          builder.skipped, members)
        else:
            builder.skipped.bump(value)
            _skip_entity(stream)


def _parse_blocks(stream: _TagStream, builder: _DocBuilder) -> None:
    while True:
        code, value, line = stream.expect()
        if code == 0 and value == "ENDSEC":
            return
        if code != 0 or value != "BLOCK":
            continue
        by_code = _collect_codes(stream)
        name = _first(by_code, 2)
        if name is None:
            raise ParseError(line, "BLOCK without a name")
        base = (_first_float(by_code, 10, line, 0.0), _first_float(by_code, 20, line, 0.0))
        builder.blocks[name] = BlockDef(name, base, _parse_block_body(stream, name, builder))


def _parse_entities(stream: _TagStream, builder: _DocBuilder) -> None:
    while True:
        code, value, line = stream.expect()
        if code == 0 and value == "ENDSEC":
            return
        if code != 0:
            raise ParseError(line, f"expected an entity marker, got code {code}")
        if value in SUPPORTED_ENTITY_TYPES:
            _parse_entity(stream, value, line, builder.next_id, builder.add_layer,
                          builder.skipped, builder.entities)
        else:
            builder.skipped.bump(value)
            _skip_entity(stream)


def parse_document(source: str | bytes) -> DrawingDocument:
    """Parse the interchange subset into a DrawingDocument."""
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    stream = _TagStream(source)
    builder = _DocBuilder()
    saw_eof = False
    while True:
        tag = stream.read()
        if tag is None:
            break
        code, value, line = tag
        if code == 0 and value == "EOF":
            saw_eof = True
            break
        if code != 0 or value != "SECTION":
            raise ParseError(line, f"expected SECTION or EOF, got ({code}, {value!r})")
        code2, name, line2 = stream.expect()
        if code2 != 2:
            raise ParseError(line2, "SECTION without a name")
        if name == "HEADER":
            _parse_header(stream, builder)
        elif name == "TABLES":
            _parse_tables(stream, builder)
        elif name == "BLOCKS":
            _parse_blocks(stream, builder)
        elif name == "ENTITIES":
            _parse_entities(stream, builder)
        else:
            while True:
                c, v, _ = stream.expect()
                if c == 0 and v == "ENDSEC":
                    break
    if not saw_eof:
        raise ParseError(stream.last_line + 1, "stream ended without EOF marker")
    doc = builder.build()
    for ref in _iter_refs(doc):
        if ref.block_name not in doc.blocks:
            raise ParseError(0, f"reference to undefined block {ref.block_name!r}")
    return doc


def _iter_refs(doc: DrawingDocument):
    for e in doc.entities:
        if isinstance(e, BlockRef):
            yield e
    for b in doc.blocks.values():
        for e in b.entities:
            if isinstance(e, BlockRef):
                yield e


# -- flattening -------------------------------------------------------------

def _effective_layer(member_layer: str, inherited: str) -> str:
    # Placeholder layer "0" inherits the reference's layer.
    return inherited if member_layer == "0" else member_layer


def flatten_blocks(doc: DrawingDocument) -> FlatDrawing:
    """Expand block references recursively into placed primitives."""
    out: list[PlacedPrimitive] = []

    def expand(ref: BlockRef, transform: Affine, id_prefix: str,
               outer: tuple[str, str], inherited_layer: str, stack: tuple[str, ...]) -> None:
        if ref.block_name in stack:
            cycle = " -> ".join(stack + (ref.block_name,))
            raise CycleError(f"block reference cycle: {cycle}")
        block = doc.blocks.get(ref.block_name)
        if block is None:
            raise CycleError(f"reference to undefined block {ref.block_name!r}")
        local = Affine.translation(-block.base[0], -block.base[1]).then(transform)
        for member in block.entities:
            if isinstance(member, PrimitiveEntity):
                placed_id = f"{id_prefix}/{member.primitive.source_id}"
                prim = geometry.apply_transform(member.primitive, local, derived_id=placed_id)
                layer = _effective_layer(member.layer, inherited_layer)
                out.append(PlacedPrimitive(prim, layer, outer))
            elif isinstance(member, BlockRef):
                expand(member, member.placement.then(local),
                       f"{id_prefix}/{member.ref_id}", outer,
                       _effective_layer(member.layer, inherited_layer),
                       stack + (ref.block_name,))

    for e in doc.entities:
        if isinstance(e, PrimitiveEntity):
            out.append(PlacedPrimitive(e.primitive, e.layer, None))
        elif isinstance(e, BlockRef):
            expand(e, e.placement, e.ref_id, (e.block_name, e.ref_id), e.layer, ())
    return FlatDrawing(tuple(out), doc.layers, doc.unit_scale)


def scrub_text(doc: DrawingDocument, policy: str = "Blank") -> DrawingDocument:
    """Remove identifying text: Blank empties content, Drop removes records."""
    if policy not in ("Blank", "Drop"):
        raise ValueError(f"unknown scrub policy {policy!r}")
    affected = 0

    def scrub_list(entities):
        nonlocal affected
        out = []
        for e in entities:
            if isinstance(e, TextEntity):
                affected += 1
                if policy == "Blank":
                    out.append(replace(e, content=""))
            else:
                out.append(e)
        return tuple(out)

    entities = scrub_list(doc.entities)
    blocks = {name: BlockDef(name, b.base, scrub_list(b.entities))
              for name, b in doc.blocks.items()}
    return replace(doc, entities=entities, blocks=blocks,
                   scrub_report=ScrubReport(policy, affected))


# -- serialization ----------------------------------------------------------

def _fmt(x: float) -> str:
    if x == 0.0:
        x = 0.0  # canonicalize -0.0
    return f"{x:.17g}"


def _fmt_angle_deg(rad: float) -> str:
    # 12 significant digits: coarse enough that degree<->radian conversion
    # round-trips to the same printed string, fine enough for 1e-9 geometry.
    d = math.degrees(rad)
    if d == 0.0:
        d = 0.0
    return f"{d:.12g}"


def _emit_entity(out: list[str], e: Entity) -> None:
    if isinstance(e, PrimitiveEntity):
        p = e.primitive
        if p.kind is Kind.LINE:
            out += ["0", "LINE", "8", e.layer,
                    "10", _fmt(p.p0[0]), "20", _fmt(p.p0[1]),
                    "11", _fmt(p.p1[0]), "21", _fmt(p.p1[1])]
        elif p.kind is Kind.POLYSEG:
            # Canonical form: one two-vertex polyline per segment; original
            # polyline grouping is not preserved.
            out += ["0", "LWPOLYLINE", "8", e.layer, "90", "2",
                    "10", _fmt(p.p0[0]), "20", _fmt(p.p0[1]),
                    "10", _fmt(p.p1[0]), "20", _fmt(p.p1[1])]
        elif p.kind is Kind.CIRCLE:
            out += ["0", "CIRCLE", "8", e.layer,
                    "10", _fmt(p.center[0]), "20", _fmt(p.center[1]),
                    "40", _fmt(p.radius)]
        else:
            out += ["0", "ARC", "8", e.layer,
                    "10", _fmt(p.center[0]), "20", _fmt(p.center[1]),
                    "40", _fmt(p.radius),
                    "50", _fmt_angle_deg(p.start_angle),
                    "51", _fmt_angle_deg(p.end_angle)]
    elif isinstance(e, TextEntity):
        out += ["0", "TEXT", "8", e.layer,
                "10", _fmt(e.anchor[0]), "20", _fmt(e.anchor[1]),
                "1", e.content]
    elif isinstance(e, BlockRef):
        out += ["0", "INSERT", "8", e.layer, "2", e.block_name,
                "10", _fmt(e.insert[0]), "20", _fmt(e.insert[1]),
                "41", _fmt(e.scale_x), "42", _fmt(e.scale_y),
                "50", f"{e.rotation_deg:.12g}"]


def serialize_document(doc: DrawingDocument) -> str:
    """Write the supported subset back out; parsing the result is stable."""
    inv = {v: k for k, v in UNIT_SCALES.items()}
    units = inv.get(doc.unit_scale)
    if units is None:
        raise ValueError(f"unit scale {doc.unit_scale} has no header units value")
    out: list[str] = []
    out += ["0", "SECTION", "2", "HEADER", "9", "$INSUNITS", "70", str(units), "0", "ENDSEC"]
    out += ["0", "SECTION", "2", "TABLES", "0", "TABLE", "2", "LAYER"]
    for layer in doc.layers:
        out += ["0", "LAYER", "2", layer.name, "70", "0" if layer.visible else "1"]
    out += ["0", "ENDTAB", "0", "ENDSEC"]
    out += ["0", "SECTION", "2", "BLOCKS"]
    for name in doc.blocks:
        block = doc.blocks[name]
        out += ["0", "BLOCK", "2", name,
                "10", _fmt(block.base[0]), "20", _fmt(block.base[1])]
        for e in block.entities:
            _emit_entity(out, e)
        out += ["0", "ENDBLK"]
    out += ["0", "ENDSEC"]
    out += ["0", "SECTION", "2", "ENTITIES"]
    for e in doc.entities:
        _emit_entity(out, e)
    out += ["0", "ENDSEC", "0", "EOF"]
    return "\n".join(out) + "\n"
