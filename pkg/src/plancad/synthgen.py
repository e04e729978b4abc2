"""Deterministic miniature standardized drawings with exact ground truth.

Symbols are canonical glyphs (arc+line door, triple-line window, tread-line
stairs, circle column, rectangle furniture), one block reference per
instance, walls as stuff lines. Randomness comes from an in-repo SplitMix64
generator so outputs are reproducible from the seed alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from . import geometry, ingest
from .annotator import PanopticLabel
from .ingest import BlockDef, BlockRef, DrawingDocument, LayerRecord, PrimitiveEntity, TextEntity
from .metrics import SymbolInstance
from .screening import UNLABELED, ClassCatalog

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64: state advances by 0x9E3779B97F4A7C15; output is the
    xor-shift-multiply finalizer. randint uses plain modulo reduction."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randint(self, n: int) -> int:
        """Uniform-ish integer in [0, n) by modulo reduction."""
        if n <= 0:
            raise ValueError("randint needs a positive bound")
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    seed: int = 1
    area_m: tuple[float, float] = (20.0, 20.0)
    doors: int = 3
    windows: int = 3
    stairs: int = 1
    columns: int = 2
    furniture: int = 2
    wall_grid: int = 2  # interior grid lines per direction
    unmatched_layers: int = 0
    text_entities: int = 2

    def __post_init__(self):
        counts = (self.doors, self.windows, self.stairs, self.columns,
                  self.furniture, self.wall_grid, self.unmatched_layers,
                  self.text_entities)
        if min(counts) < 0:
            raise SpecError("counts must be nonnegative")
        if self.area_m[0] <= 0 or self.area_m[1] <= 0:
            raise SpecError("area must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "GenSpec":
        known = {f: obj[f] for f in cls.__dataclass_fields__ if f in obj}
        if "area_m" in known:
            known["area_m"] = tuple(known["area_m"])
        return cls(**known)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "area_m": list(self.area_m), "doors": self.doors,
            "windows": self.windows, "stairs": self.stairs, "columns": self.columns,
            "furniture": self.furniture, "wall_grid": self.wall_grid,
            "unmatched_layers": self.unmatched_layers,
            "text_entities": self.text_entities,
        }


@dataclass(frozen=True)
class GroundTruth:
    labels: dict[str, PanopticLabel]
    instances: tuple[SymbolInstance, ...]

    def to_dict(self, catalog: ClassCatalog) -> dict:
        return {
            "labels": {sid: [lab.l, lab.z] for sid, lab in sorted(self.labels.items())},
            "instances": [
                {"class": catalog.name_of(inst.class_id),
                 "members": sorted(inst.member_ids)}
                for inst in self.instances
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict, catalog: ClassCatalog) -> "GroundTruth":
        labels = {sid: PanopticLabel(l, z) for sid, (l, z) in obj["labels"].items()}
        instances = tuple(
            SymbolInstance(catalog.id_of(e["class"]), frozenset(e["members"]))
            for e in obj["instances"])
        return cls(labels, instances)


# Glyph blocks; member coordinates in millimeters, members on layer "0" so
# they inherit each reference's layer.
_DOOR = "SYM_DOOR"
_WINDOW = "SYM_WINDOW"
_STAIRS = "SYM_STAIRS"
_COLUMN = "SYM_COLUMN"
_FURN = "SYM_FURN"

# (block, reference layer, class name, symbol count attribute)
_SYMBOLS = (
    (_DOOR, "A-DOOR", "door", "doors"),
    (_WINDOW, "A-GLAZ", "window", "windows"),
    (_STAIRS, "A-STRS-TREA", "stairs", "stairs"),
    (_COLUMN, "S-COLS", "column", "columns"),
    (_FURN, "A-FURN", "furniture", "furniture"),
)

_WALL_LAYER = "A-WALL-CONC"
_NOTE_LAYER = "A-ANNO-NOTE"


def _door_block() -> BlockDef:
    members = (
        PrimitiveEntity(geometry.line((0.0, 0.0), (900.0, 0.0), f"{_DOOR}.0"), "0"),
        PrimitiveEntity(geometry.arc((0.0, 0.0), 900.0, 0.0, math.pi / 2.0,
                                     f"{_DOOR}.1"), "0"),
    )
    return BlockDef(_DOOR, (0.0, 0.0), members)


def _window_block() -> BlockDef:
    members = tuple(
        PrimitiveEntity(geometry.line((0.0, 60.0 * i), (1200.0, 60.0 * i),
                                      f"{_WINDOW}.{i}"), "0")
        for i in range(3))
    return BlockDef(_WINDOW, (0.0, 0.0), members)


def _stairs_block() -> BlockDef:
    members = tuple(
        PrimitiveEntity(geometry.line((250.0 * i, 0.0), (250.0 * i, 1200.0),
                                      f"{_STAIRS}.{i}"), "0")
        for i in range(6))
    return BlockDef(_STAIRS, (0.0, 0.0), members)


def _column_block() -> BlockDef:
    members = (
        PrimitiveEntity(geometry.circle((0.0, 0.0), 250.0, f"{_COLUMN}.0"), "0"),
    )
    return BlockDef(_COLUMN, (0.0, 0.0), members)


def _furniture_block() -> BlockDef:
    corners = [(0.0, 0.0), (1400.0, 0.0), (1400.0, 700.0), (0.0, 700.0)]
    members = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        # Each edge is a separate two-vertex polyline; see the serializer's
        # canonical polyline form.
        members.append(PrimitiveEntity(geometry.polyseg(a, b, f"{_FURN}.{i}.0"), "0"))
    return BlockDef(_FURN, (0.0, 0.0), tuple(members))


def generate_drawing(spec: GenSpec) -> tuple[DrawingDocument, GroundTruth]:
    """Deterministic drawing plus the labels/instances the automated
    annotator is expected to reproduce."""
    rng = SplitMix64(spec.seed)
    width_mm = spec.area_m[0] * 1000.0
    height_mm = spec.area_m[1] * 1000.0

    margin = 2000.0
    pitch = 2500.0
    cols = int((width_mm - 2 * margin) // pitch) + 1 if width_mm >= 2 * margin else 0
    rows = int((height_mm - 2 * margin) // pitch) + 1 if height_mm >= 2 * margin else 0
    slots = [(margin + c * pitch, margin + r * pitch)
             for r in range(rows) for c in range(cols)]
    n_symbols = spec.doors + spec.windows + spec.stairs + spec.columns + spec.furniture
    if n_symbols > len(slots):
        raise SpecError(
            f"{n_symbols} symbols do not fit {len(slots)} slots in the given area")
    rng.shuffle(slots)

    entities: list = []
    layers: list[LayerRecord] = []
    layer_names: set[str] = set()
    counter = [0]

    def next_id() -> str:
        eid = f"E{counter[0]:05d}"
        counter[0] += 1
        return eid

    def note_layer(name: str) -> None:
        if name not in layer_names:
            layer_names.add(name)
            layers.append(LayerRecord(name))

    labels: dict[str, PanopticLabel] = {}
    catalog = _default_catalog()
    wall_cls = catalog.id_of("wall")

    def add_wall(p0, p1) -> None:
        note_layer(_WALL_LAYER)
        eid = next_id()
        entities.append(PrimitiveEntity(geometry.line(p0, p1, eid), _WALL_LAYER))
        labels[eid] = PanopticLabel(wall_cls, 0)

    # Perimeter walls.
    add_wall((0.0, 0.0), (width_mm, 0.0))
    add_wall((width_mm, 0.0), (width_mm, height_mm))
    add_wall((width_mm, height_mm), (0.0, height_mm))
    add_wall((0.0, height_mm), (0.0, 0.0))
    for i in range(1, spec.wall_grid + 1):
        x = width_mm * i / (spec.wall_grid + 1)
        y = height_mm * i / (spec.wall_grid + 1)
        add_wall((x, 0.0), (x, height_mm))
        add_wall((0.0, y), (width_mm, y))

    # Symbol placements: one block reference per instance.
    blocks = {b.name: b for b in (_door_block(), _window_block(), _stairs_block(),
                                  _column_block(), _furniture_block())}
    instances: list[SymbolInstance] = []
    slot_idx = 0
    z = 0
    for block_name, layer, cls_name, attr in _SYMBOLS:
        cls = catalog.id_of(cls_name)
        for _ in range(getattr(spec, attr)):
            note_layer(layer)
            eid = next_id()
            rotation = 90.0 * rng.randint(4)
            ref = BlockRef(block_name, slots[slot_idx], layer, eid,
                           rotation_deg=rotation)
            slot_idx += 1
            entities.append(ref)
            z += 1
            members = frozenset(f"{eid}/{m.primitive.source_id}"
                                for m in blocks[block_name].entities)
            for sid in members:
                labels[sid] = PanopticLabel(cls, z)
            instances.append(SymbolInstance(cls, members))

    # Unmatched layers carry one line each.
    for i in range(spec.unmatched_layers):
        name = f"X-UNKN{i:02d}"
        note_layer(name)
        eid = next_id()
        x = 500.0 + i * 700.0
        entities.append(PrimitiveEntity(
            geometry.line((x, 500.0), (x + 500.0, 500.0), eid), name))
        labels[eid] = PanopticLabel(UNLABELED, 0)

    for i in range(spec.text_entities):
        note_layer(_NOTE_LAYER)
        eid = next_id()
        entities.append(TextEntity(f"NOTE-{i}", (600.0 + 900.0 * i, height_mm - 600.0),
                                   _NOTE_LAYER, eid))

    doc = DrawingDocument(
        layers=tuple(layers),
        blocks=blocks,
        entities=tuple(entities),
        unit_scale=0.001,
    )
    return doc, GroundTruth(labels, tuple(instances))


def _default_catalog() -> ClassCatalog:
    from .screening import bundled_table

    return bundled_table().catalog


def perturb_labels(gt: GroundTruth, rate: float, seed: int,
                   catalog: ClassCatalog) -> GroundTruth:
    """Give round(rate*N) primitives a uniformly different class and drop
    them from their instances."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    rng = SplitMix64(seed)
    ids = sorted(gt.labels)
    rng.shuffle(ids)
    k = round(rate * len(ids))
    changed = set(ids[:k])
    n_classes = len(catalog)
    labels = dict(gt.labels)
    for sid in ids[:k]:
        current = labels[sid].l
        # Uniform over catalog classes other than the current one.
        pick = rng.randint(n_classes - 1) + 1 if current != UNLABELED else rng.randint(n_classes) + 1
        if current != UNLABELED and pick >= current:
            pick += 1
        labels[sid] = PanopticLabel(pick, 0)
    instances = []
    for inst in gt.instances:
        members = frozenset(m for m in inst.member_ids if m not in changed)
        if members:
            instances.append(replace(inst, member_ids=members))
    return GroundTruth(labels, tuple(instances))


def canonical_instance_ids(labels: dict[str, PanopticLabel]) -> dict[str, PanopticLabel]:
    """Renumber instance ids densely, ordered by each instance's smallest
    member id; makes labelings comparable up to instance renaming."""
    groups: dict[int, list[str]] = {}
    for sid, lab in labels.items():
        if lab.z > 0:
            groups.setdefault(lab.z, []).append(sid)
    order = sorted(groups, key=lambda zz: min(groups[zz]))
    renum = {old: i + 1 for i, old in enumerate(order)}
    return {sid: (lab if lab.z == 0 else replace(lab, z=renum[lab.z]))
            for sid, lab in labels.items()}
