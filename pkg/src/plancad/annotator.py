"""Per-primitive panoptic labeling from layer semantics and block provenance,
compliance checking, and replayable human corrections."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .ingest import FlatDrawing
from .screening import UNLABELED, ClassCatalog, ReferenceTable


class BadEvent(ValueError):
    def __init__(self, seq: int, reason: str):
        super().__init__(f"event seq {seq}: {reason}")
        self.seq = seq
        self.reason = reason


@dataclass(frozen=True)
class PanopticLabel:
    """Semantic class id and instance id; 0 means unlabeled / no instance."""

    l: int
    z: int

    def __post_init__(self):
        if self.l == UNLABELED and self.z != 0:
            raise ValueError("unlabeled primitives cannot carry an instance id")
        if self.z < 0:
            raise ValueError("instance ids are nonnegative")


@dataclass(frozen=True)
class ComplianceFlag:
    kind: str  # UnblockedThing | ClassConflictInBlock | UnmatchedLayer | EmptyInstance
    subject: str
    detail: str

    @property
    def ref(self) -> str:
        return f"{self.kind}:{self.subject}"


EVENT_KINDS = ("SemanticOverride", "PrimitiveOverride", "MergeInstances",
               "SplitInstance", "AcceptFlag")


@dataclass(frozen=True)
class CorrectionEvent:
    event_id: str
    seq: int
    kind: str
    payload: dict
    author: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")

    def to_json(self) -> str:
        return json.dumps({
            "eventId": self.event_id,
            "seq": self.seq,
            "kind": self.kind,
            "payload": self.payload,
            "author": self.author,
            "timestamp": self.timestamp,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CorrectionEvent":
        obj = json.loads(text)
        return cls(event_id=obj["eventId"], seq=int(obj["seq"]), kind=obj["kind"],
                   payload=obj.get("payload", {}), author=obj.get("author", ""),
                   timestamp=obj.get("timestamp", ""))


def instances_of(labels: dict[str, PanopticLabel]) -> dict[int, set[str]]:
    """Instance membership, id -> set of source ids."""
    out: dict[int, set[str]] = {}
    for sid, lab in labels.items():
        if lab.z > 0:
            out.setdefault(lab.z, set()).add(sid)
    return out


@dataclass(frozen=True)
class AnnotatedDrawing:
    drawing: FlatDrawing
    catalog: ClassCatalog
    labels: dict[str, PanopticLabel]
    flags: tuple[ComplianceFlag, ...] = ()
    provenance_index: dict[str, frozenset[str]] = field(default_factory=dict)
    live_instances: frozenset[int] = frozenset()
    accepted_flags: frozenset[str] = frozenset()
    applied_event_ids: frozenset[str] = frozenset()
    pinned: frozenset[str] = frozenset()  # primitives with primitive-level overrides
    next_instance_id: int = 1

    def label_of(self, source_id: str) -> PanopticLabel:
        return self.labels[source_id]

    def instances(self) -> dict[int, set[str]]:
        return instances_of(self.labels)

    def instance_count(self) -> int:
        return len(self.instances())

    def check_invariants(self) -> None:
        ids = {pp.primitive.source_id for pp in self.drawing.primitives}
        if set(self.labels) != ids:
            raise AssertionError("labels do not cover the primitive set exactly")
        by_z: dict[int, set[int]] = {}
        for lab in self.labels.values():
            if lab.z > 0:
                if not self.catalog.is_thing(lab.l):
                    raise AssertionError("positive instance id on a non-thing class")
                by_z.setdefault(lab.z, set()).add(lab.l)
        for z, classes in by_z.items():
            if len(classes) != 1:
                raise AssertionError(f"instance {z} mixes classes {sorted(classes)}")


def assign_semantics(drawing: FlatDrawing, table: ReferenceTable) -> AnnotatedDrawing:
    """Semantic stage: label every primitive from its layer, instances empty."""
    layer_class = {name: table.match_layer(name) for name in drawing.primitive_layers()}
    labels = {}
    for pp in drawing.primitives:
        cls = layer_class[pp.layer]
        labels[pp.primitive.source_id] = PanopticLabel(cls if cls is not None else UNLABELED, 0)
    flags = tuple(ComplianceFlag("UnmatchedLayer", name, "no reference-table pattern matches")
                  for name, cls in layer_class.items() if cls is None)
    provenance: dict[str, set[str]] = {}
    for pp in drawing.primitives:
        if pp.provenance is not None:
            provenance.setdefault(pp.provenance[1], set()).add(pp.primitive.source_id)
    return AnnotatedDrawing(
        drawing=drawing,
        catalog=table.catalog,
        labels=labels,
        flags=flags,
        provenance_index={k: frozenset(v) for k, v in provenance.items()},
    )


def propose_instances(ann: AnnotatedDrawing) -> AnnotatedDrawing:
    """Instance stage: one instance per outermost block reference, flagged
    singletons for unblocked thing primitives. Ids are dense, in reference
    order then singleton order."""
    labels = dict(ann.labels)
    flags = list(ann.flags)
    ref_of = {}
    for pp in ann.drawing.primitives:
        if pp.provenance is not None:
            ref_of[pp.primitive.source_id] = pp.provenance[1]

    groups: dict[str, list[str]] = {}
    singletons: list[str] = []
    for pp in ann.drawing.primitives:
        sid = pp.primitive.source_id
        if not ann.catalog.is_thing(labels[sid].l):
            continue
        ref = ref_of.get(sid)
        if ref is None:
            singletons.append(sid)
        else:
            groups.setdefault(ref, []).append(sid)

    next_z = 1
    for ref in sorted(groups):
        for sid in groups[ref]:
            labels[sid] = replace(labels[sid], z=next_z)
        next_z += 1
    for sid in sorted(singletons):
        labels[sid] = replace(labels[sid], z=next_z)
        next_z += 1
        flags.append(ComplianceFlag(
            "UnblockedThing", sid, "thing-class primitive outside any block reference"))
    return replace(ann, labels=labels, flags=tuple(flags),
                   live_instances=frozenset(range(1, next_z)), next_instance_id=next_z)


def check_compliance(ann: AnnotatedDrawing) -> list[ComplianceFlag]:
    """Current flag list: carried stage flags plus block-consistency checks."""
    flags = list(ann.flags)
    seen = {f.ref for f in flags}

    def add(flag: ComplianceFlag) -> None:
        if flag.ref not in seen:
            flags.append(flag)
            seen.add(flag.ref)

    for ref_id in sorted(ann.provenance_index):
        classes = {ann.labels[sid].l for sid in ann.provenance_index[ref_id]
                   if sid in ann.labels and ann.labels[sid].l != UNLABELED}
        if len(classes) > 1:
            names = ",".join(sorted(ann.catalog.name_of(c) for c in classes))
            add(ComplianceFlag("ClassConflictInBlock", ref_id,
                               f"block members map to multiple classes: {names}"))
    populated = set(instances_of(ann.labels))
    for z in sorted(ann.live_instances - populated):
        add(ComplianceFlag("EmptyInstance", str(z), "instance id retains no primitives"))
    order = {"UnmatchedLayer": 0, "UnblockedThing": 1, "ClassConflictInBlock": 2,
             "EmptyInstance": 3}
    return sorted(flags, key=lambda f: (order[f.kind], f.subject))


class _State:
    """Mutable working copy used while applying one event."""

    def __init__(self, ann: AnnotatedDrawing):
        self.labels = dict(ann.labels)
        self.catalog = ann.catalog
        self.live = set(ann.live_instances)
        self.next_id = ann.next_instance_id

    def fresh_id(self) -> int:
        z = self.next_id
        self.next_id += 1
        self.live.add(z)
        return z

    def renormalize(self, touched: list[str]) -> None:
        """Restore instance/class consistency after class changes on `touched`.

        Stuff and unlabeled primitives leave their instance. When an instance
        ends up mixing thing classes, the cell that kept the pre-event class
        keeps the id and every other cell becomes a fresh instance.
        """
        touched_set = set(touched)
        touched_zs = sorted({self.labels[sid].z for sid in touched if self.labels[sid].z > 0})
        for sid in touched:
            lab = self.labels[sid]
            if lab.z > 0 and not self.catalog.is_thing(lab.l):
                self.labels[sid] = replace(lab, z=0)
        for z in touched_zs:
            members = [sid for sid, lab in self.labels.items() if lab.z == z]
            cells: dict[int, list[str]] = {}
            for sid in members:
                cells.setdefault(self.labels[sid].l, []).append(sid)
            if len(cells) <= 1:
                continue
            untouched_classes = sorted({self.labels[sid].l for sid in members
                                        if sid not in touched_set})
            keeper = untouched_classes[0] if untouched_classes else sorted(cells)[0]
            for cls in sorted(cells):
                if cls == keeper:
                    continue
                fresh = self.fresh_id()
                for sid in cells[cls]:
                    self.labels[sid] = replace(self.labels[sid], z=fresh)


def _apply_event(ann: AnnotatedDrawing, ev: CorrectionEvent) -> AnnotatedDrawing:
    st = _State(ann)
    pinned = set(ann.pinned)
    accepted = set(ann.accepted_flags)

    def class_id(name) -> int:
        if isinstance(name, int):
            if 0 <= name <= len(st.catalog):
                return name
            raise BadEvent(ev.seq, f"class id {name} out of range")
        if name == "unlabeled":
            return UNLABELED
        if isinstance(name, str) and st.catalog.has(name):
            return st.catalog.id_of(name)
        raise BadEvent(ev.seq, f"unknown class {name!r}")

    if ev.kind == "SemanticOverride":
        layer = ev.payload.get("layer")
        cls = class_id(ev.payload.get("class"))
        members = [pp.primitive.source_id for pp in ann.drawing.primitives
                   if pp.layer == layer]
        if not members:
            raise BadEvent(ev.seq, f"unknown layer {layer!r}")
        touched = []
        for sid in members:
            if sid in pinned:
                continue  # primitive-specific overrides beat layer-wide ones
            if st.labels[sid].l != cls:
                st.labels[sid] = replace(st.labels[sid], l=cls)
                touched.append(sid)
        st.renormalize(touched)
    elif ev.kind == "PrimitiveOverride":
        sid = ev.payload.get("source")
        cls = class_id(ev.payload.get("class"))
        if sid not in st.labels:
            raise BadEvent(ev.seq, f"unknown primitive {sid!r}")
        pinned.add(sid)
        if st.labels[sid].l != cls:
            st.labels[sid] = replace(st.labels[sid], l=cls)
            st.renormalize([sid])
    elif ev.kind == "MergeInstances":
        ids = sorted({int(z) for z in ev.payload.get("ids", [])})
        if len(ids) < 2:
            raise BadEvent(ev.seq, "merge needs at least two distinct instance ids")
        current = instances_of(st.labels)
        classes = set()
        for z in ids:
            if z not in current:
                raise BadEvent(ev.seq, f"unknown instance id {z}")
            classes.update(st.labels[sid].l for sid in current[z])
        if len(classes) != 1:
            raise BadEvent(ev.seq, "cannot merge instances of different classes")
        if not st.catalog.is_thing(next(iter(classes))):
            raise BadEvent(ev.seq, "merge targets must be thing instances")
        survivor = ids[0]
        for z in ids[1:]:
            for sid in current[z]:
                st.labels[sid] = replace(st.labels[sid], z=survivor)
            st.live.discard(z)
    elif ev.kind == "SplitInstance":
        z = ev.payload.get("z")
        cells = ev.payload.get("cells", [])
        current = instances_of(st.labels)
        if z not in current:
            raise BadEvent(ev.seq, f"unknown instance id {z}")
        if len(cells) < 2:
            raise BadEvent(ev.seq, "split needs at least two cells")
        if any(not cell for cell in cells):
            raise BadEvent(ev.seq, "split cells must be nonempty")
        flat = [sid for cell in cells for sid in cell]
        if len(flat) != len(set(flat)) or set(flat) != current[z]:
            raise BadEvent(ev.seq, "cells must partition the instance exactly")
        for cell in cells:
            fresh = st.fresh_id()
            for sid in cell:
                st.labels[sid] = replace(st.labels[sid], z=fresh)
        st.live.discard(z)
    elif ev.kind == "AcceptFlag":
        ref = ev.payload.get("flag")
        known = {f.ref for f in check_compliance(ann)}
        if ref not in known:
            raise BadEvent(ev.seq, f"unknown flag {ref!r}")
        accepted.add(ref)
    return replace(ann, labels=st.labels, live_instances=frozenset(st.live),
                   next_instance_id=st.next_id, pinned=frozenset(pinned),
                   accepted_flags=frozenset(accepted),
                   applied_event_ids=ann.applied_event_ids | {ev.event_id})


def apply_corrections(ann: AnnotatedDrawing,
                      log: list[CorrectionEvent]) -> AnnotatedDrawing:
    """Replay a correction log in sequence order.

    Events whose eventId has already been applied are skipped, which makes
    replay idempotent. Validation failures raise BadEvent and leave the
    input value untouched.
    """
    last_seq = None
    for ev in log:
        if last_seq is not None and ev.seq <= last_seq:
            raise BadEvent(ev.seq, f"seq not strictly increasing (after {last_seq})")
        last_seq = ev.seq
        if ev.event_id in ann.applied_event_ids:
            continue
        ann = _apply_event(ann, ev)
    return ann


def annotate(drawing: FlatDrawing, table: ReferenceTable) -> AnnotatedDrawing:
    """Both automated stages: semantics from layers, instances from blocks."""
    ann = propose_instances(assign_semantics(drawing, table))
    return replace(ann, flags=tuple(check_compliance(ann)))
