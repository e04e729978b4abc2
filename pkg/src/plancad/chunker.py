"""Tile annotated drawings into square chunks, read/write the annotated
vector chunk format (schema plancad-chunk/1), and rasterize chunks.

Boundary-crossing primitives are duplicated into every chunk whose window
they intersect; geometry is never cut. Chunk files are canonical: elements
sorted by source id, numbers printed with 9 significant digits, so
export(import(export(c))) is byte-identical to export(c).
"""

from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .annotator import AnnotatedDrawing, PanopticLabel
from .geometry import Affine, Kind, Primitive, Rect
from .screening import UNLABELED, ClassCatalog

SCHEMA = "plancad-chunk/1"
DEFAULT_CHUNK_SIZE_M = 14.0
DEFAULT_RENDER_SIZE = 700  # pixels per side
# Rasterization sampling step as a fraction of the pixel pitch.
SAMPLING_STEP_FRACTION = 0.25


class NoExtent(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, element: str, reason: str):
        super().__init__(f"{element}: {reason}")
        self.element = element
        self.reason = reason


@dataclass(frozen=True)
class ChunkPrimitive:
    primitive: Primitive  # chunk-local meters
    label: PanopticLabel
    source_id: str  # original id in the drawing


@dataclass(frozen=True)
class Chunk:
    drawing_id: str
    col: int
    row: int
    origin: geometry.Point  # world min-corner, meters
    size_m: float
    primitives: tuple[ChunkPrimitive, ...]
    catalog: ClassCatalog
    scores: dict[int, float] = field(default_factory=dict, compare=False)

    @property
    def chunk_id(self) -> str:
        return f"{self.drawing_id}_{self.col}_{self.row}"

    def labels(self) -> dict[str, PanopticLabel]:
        return {cp.source_id: cp.label for cp in self.primitives}

    def weights(self) -> dict[str, float]:
        return {cp.source_id: geometry.primitive_length(cp.primitive)
                for cp in self.primitives}


def drawing_aabb(ann: AnnotatedDrawing) -> Rect:
    boxes = [geometry.primitive_aabb(pp.primitive) for pp in ann.drawing.primitives]
    if not boxes:
        raise NoExtent("drawing has no primitives")
    box = boxes[0]
    for b in boxes[1:]:
        box = box.union(b)
    return box


def chunk_drawing(ann: AnnotatedDrawing, size_m: float = DEFAULT_CHUNK_SIZE_M,
                  drawing_id: str = "drawing") -> list[Chunk]:
    """Tile the drawing into size_m x size_m chunks anchored at its AABB
    min-corner. Instance ids stay drawing-global; empty cells are omitted."""
    if size_m <= 0:
        raise ValueError("chunk size must be positive")
    scale = ann.drawing.unit_scale
    box = drawing_aabb(ann)
    ox, oy = box.min_x * scale, box.min_y * scale
    ncols = max(1, math.ceil((box.max_x * scale - ox) / size_m))
    nrows = max(1, math.ceil((box.max_y * scale - oy) / size_m))

    to_m = Affine.scaling(scale)
    cells: dict[tuple[int, int], list[ChunkPrimitive]] = {}
    for pp in ann.drawing.primitives:
        sid = pp.primitive.source_id
        prim_m = geometry.apply_transform(pp.primitive, to_m, derived_id=sid)
        b = geometry.primitive_aabb(prim_m)
        c0 = max(0, math.floor((b.min_x - ox) / size_m))
        c1 = min(ncols - 1, math.floor((b.max_x - ox) / size_m))
        r0 = max(0, math.floor((b.min_y - oy) / size_m))
        r1 = min(nrows - 1, math.floor((b.max_y - oy) / size_m))
        label = ann.labels[sid]
        for row in range(r0, r1 + 1):
            for col in range(c0, c1 + 1):
                window = Rect(ox + col * size_m, oy + row * size_m,
                              ox + (col + 1) * size_m, oy + (row + 1) * size_m)
                if not geometry.intersects_rect(prim_m, window):
                    continue
                local = geometry.apply_transform(
                    prim_m, Affine.translation(-window.min_x, -window.min_y),
                    derived_id=sid)
                cells.setdefault((col, row), []).append(ChunkPrimitive(local, label, sid))

    out = []
    for (col, row) in sorted(cells):
        out.append(Chunk(
            drawing_id=drawing_id, col=col, row=row,
            origin=(ox + col * size_m, oy + row * size_m),
            size_m=size_m, primitives=tuple(cells[(col, row)]), catalog=ann.catalog))
    return out


# -- canonical chunk markup ---------------------------------------------------

def _fmt(x: float) -> str:
    if x == 0.0:
        x = 0.0  # canonicalize -0.0
    return f"{x:.9g}"


def _catalog_json(catalog: ClassCatalog) -> str:
    classes = [[c.name, "thing" if c.is_thing else "stuff"] for c in catalog.classes]
    return json.dumps({"classes": classes}, separators=(",", ":"))


def export_chunk(chunk: Chunk) -> str:
    """Canonical scalable-vector markup for one chunk."""
    lines = []
    size = _fmt(chunk.size_m)
    lines.append('<?xml version="1.0" encoding="UTF-8"?>')
    lines.append(
        '<svg xmlns="http://www.w3.org/2000/svg"'
        f' viewBox="0 0 {size} {size}"'
        f' data-schema="{SCHEMA}"'
        f' data-drawing="{_xml_escape(chunk.drawing_id)}"'
        f' data-col="{chunk.col}" data-row="{chunk.row}"'
        f' data-origin-x="{_fmt(chunk.origin[0])}" data-origin-y="{_fmt(chunk.origin[1])}"'
        f' data-size="{size}">')
    lines.append(f'<metadata id="plancad">{_catalog_json(chunk.catalog)}</metadata>')
    stroke = _fmt(chunk.size_m / DEFAULT_RENDER_SIZE)
    lines.append(f'<g transform="translate(0,{size}) scale(1,-1)" fill="none"'
                 f' stroke="#000" stroke-width="{stroke}">')
    for cp in sorted(chunk.primitives, key=lambda c: c.source_id):
        p = cp.primitive
        common = (f' data-semantic="{chunk.catalog.name_of(cp.label.l)}"'
                  f' data-instance="{cp.label.z}"'
                  f' data-source="{_xml_escape(cp.source_id)}"')
        score = chunk.scores.get(cp.label.z) if cp.label.z > 0 else None
        if score is not None:
            common += f' data-score="{_fmt(score)}"'
        if p.kind in (Kind.LINE, Kind.POLYSEG):
            lines.append(
                f'<line data-kind="{p.kind.value}"{common}'
                f' x1="{_fmt(p.p0[0])}" y1="{_fmt(p.p0[1])}"'
                f' x2="{_fmt(p.p1[0])}" y2="{_fmt(p.p1[1])}"/>')
        elif p.kind is Kind.CIRCLE:
            lines.append(
                f'<circle data-kind="circle"{common}'
                f' cx="{_fmt(p.center[0])}" cy="{_fmt(p.center[1])}" r="{_fmt(p.radius)}"/>')
        else:
            # The d attribute is display-only and derived from the rounded
            # data-* values so that re-export reproduces it byte for byte.
            cx, cy = (float(_fmt(p.center[0])), float(_fmt(p.center[1])))
            r = float(_fmt(p.radius))
            a0 = float(_fmt(p.start_angle))
            a1 = float(_fmt(p.end_angle))
            x0, y0 = geometry.arc_point((cx, cy), r, a0)
            x1, y1 = geometry.arc_point((cx, cy), r, a1)
            sweep = (a1 - a0) % geometry.TAU
            large = 1 if sweep > math.pi else 0
            d = (f"M {_fmt(x0)} {_fmt(y0)} A {_fmt(r)} {_fmt(r)} 0 {large} 1"
                 f" {_fmt(x1)} {_fmt(y1)}")
            lines.append(
                f'<path data-kind="arc"{common}'
                f' data-cx="{_fmt(p.center[0])}" data-cy="{_fmt(p.center[1])}"'
                f' data-r="{_fmt(p.radius)}"'
                f' data-start="{_fmt(p.start_angle)}" data-end="{_fmt(p.end_angle)}"'
                f' d="{d}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _xml_escape(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _req(el, name: str, ident: str) -> str:
    v = el.get(name)
    if v is None:
        raise FormatError(ident, f"missing attribute {name}")
    return v


def _req_float(el, name: str, ident: str) -> float:
    v = _req(el, name, ident)
    try:
        return float(v)
    except ValueError:
        raise FormatError(ident, f"attribute {name} is not a number: {v!r}") from None


def _local(tag: str) -> str:
    return tag.split("}")[-1]


def import_chunk(text: str | bytes) -> Chunk:
    """Parse chunk markup produced by export_chunk (or conforming to its schema)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise FormatError("document", f"not well-formed XML: {e}") from None
    if _local(root.tag) != "svg":
        raise FormatError("document", f"root element is {_local(root.tag)!r}, expected svg")
    schema = root.get("data-schema")
    if schema != SCHEMA:
        raise FormatError("document", f"unsupported schema {schema!r}")
    drawing_id = _req(root, "data-drawing", "document")
    col = int(_req(root, "data-col", "document"))
    row = int(_req(root, "data-row", "document"))
    origin = (_req_float(root, "data-origin-x", "document"),
              _req_float(root, "data-origin-y", "document"))
    size_m = _req_float(root, "data-size", "document")

    catalog = None
    for child in root:
        if _local(child.tag) == "metadata" and child.get("id") == "plancad":
            try:
                classes = json.loads(child.text or "")["classes"]
                catalog = ClassCatalog([(name, kind == "thing") for name, kind in classes])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise FormatError("metadata", f"bad class catalog: {e}") from None
    if catalog is None:
        raise FormatError("document", "missing plancad metadata element")

    prims: list[ChunkPrimitive] = []
    scores: dict[int, float] = {}
    for child in root:
        if _local(child.tag) != "g":
            continue
        for el in child:
            ident = el.get("data-source") or _local(el.tag)
            kind = _req(el, "data-kind", ident)
            sem = _req(el, "data-semantic", ident)
            z_text = _req(el, "data-instance", ident)
            sid = _req(el, "data-source", ident)
            try:
                z = int(z_text)
            except ValueError:
                raise FormatError(ident, f"data-instance is not an integer: {z_text!r}") from None
            if sem == "unlabeled":
                cls = UNLABELED
            elif catalog.has(sem):
                cls = catalog.id_of(sem)
            else:
                raise FormatError(ident, f"unknown class name {sem!r}")
            try:
                label = PanopticLabel(cls, z)
                if z > 0 and not catalog.is_thing(cls):
                    raise ValueError("positive instance id on a non-thing class")
            except ValueError as e:
                raise FormatError(ident, str(e)) from None
            try:
                if kind in ("line", "polyseg"):
                    p0 = (_req_float(el, "x1", ident), _req_float(el, "y1", ident))
                    p1 = (_req_float(el, "x2", ident), _req_float(el, "y2", ident))
                    k = Kind.LINE if kind == "line" else Kind.POLYSEG
                    prim = Primitive(k, sid, p0=p0, p1=p1)
                elif kind == "circle":
                    prim = geometry.circle(
                        (_req_float(el, "cx", ident), _req_float(el, "cy", ident)),
                        _req_float(el, "r", ident), sid)
                elif kind == "arc":
                    prim = geometry.arc(
                        (_req_float(el, "data-cx", ident), _req_float(el, "data-cy", ident)),
                        _req_float(el, "data-r", ident),
                        _req_float(el, "data-start", ident),
                        _req_float(el, "data-end", ident), sid)
                else:
                    raise FormatError(ident, f"unknown primitive kind {kind!r}")
            except geometry.GeometryError as e:
                raise FormatError(ident, f"malformed geometry: {e}") from None
            score_text = el.get("data-score")
            if score_text is not None and z > 0:
                try:
                    scores[z] = float(score_text)
                except ValueError:
                    raise FormatError(ident, f"bad data-score {score_text!r}") from None
            prims.append(ChunkPrimitive(prim, label, sid))
    return Chunk(drawing_id, col, row, origin, size_m, tuple(prims), catalog, scores)


# -- rasterization ------------------------------------------------------------

@dataclass(frozen=True)
class ImageGrid:
    width: int
    height: int
    channels: int
    size_m: float
    values: np.ndarray  # (height, width) for one channel; row 0 is y in [0, pitch)

    def to_pgm(self) -> str:
        rows = ["P2", f"{self.width} {self.height}", "1"]
        # Top image row is the highest y band.
        for r in range(self.height - 1, -1, -1):
            rows.append(" ".join(str(int(v)) for v in self.values[r]))
        return "\n".join(rows) + "\n"

    def to_floatgrid(self) -> bytes:
        header = f"plancad-grid/1 {self.height} {self.width} {self.channels}\n"
        return header.encode("ascii") + self.values.astype("<f4").tobytes()


def render_chunk(chunk: Chunk, width: int = DEFAULT_RENDER_SIZE,
                 height: int = DEFAULT_RENDER_SIZE, stroke_px: float = 1.0) -> ImageGrid:
    """Binary occupancy rendering by dense point sampling.

    A pixel is on when some sampled point of the primitive set lies within
    stroke_px/2 of its center; samples are spaced at a quarter pixel pitch.
    """
    if width <= 0 or height <= 0:
        raise ValueError("render size must be positive")
    grid = np.zeros((height, width), dtype=np.float64)
    pitch_x = chunk.size_m / width
    pitch_y = chunk.size_m / height
    pitch = min(pitch_x, pitch_y)
    step = SAMPLING_STEP_FRACTION * pitch
    radius = stroke_px / 2.0
    for cp in chunk.primitives:
        length = geometry.primitive_length(cp.primitive)
        n = max(2, int(math.ceil(length / step)) + 1)
        for x, y in geometry.sample_points(cp.primitive, n):
            # Pixel-center coordinates of the sample.
            px = x / pitch_x - 0.5
            py = y / pitch_y - 0.5
            c0 = max(0, math.ceil(px - radius))
            c1 = min(width - 1, math.floor(px + radius))
            r0 = max(0, math.ceil(py - radius))
            r1 = min(height - 1, math.floor(py + radius))
            for r in range(r0, r1 + 1):
                dy = py - r
                for c in range(c0, c1 + 1):
                    dx = px - c
                    if dx * dx + dy * dy <= radius * radius:
                        grid[r, c] = 1.0
    return ImageGrid(width, height, 1, chunk.size_m, grid)
