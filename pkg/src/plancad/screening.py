"""Layer-name screening against a reference table.

A drawing is accepted when at most the configured fraction (default 5%) of
its primitive-bearing layers fail to match any table pattern; strictly over
the threshold rejects.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .ingest import FlatDrawing

UNLABELED = 0
DEFAULT_DEVIATION_THRESHOLD = 0.05

_PATTERN_CHARS = re.compile(r"^[A-Za-z0-9 _.$*?|-]+$")


class TableError(ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"table row {row}: {reason}")
        self.row = row
        self.reason = reason


class EmptyDrawing(ValueError):
    pass


@dataclass(frozen=True)
class ClassDef:
    class_id: int
    name: str
    is_thing: bool


class ClassCatalog:
    """Ordered class list; id 0 is reserved for the unlabeled class."""

    def __init__(self, classes: list[tuple[str, bool]]):
        self.classes: tuple[ClassDef, ...] = tuple(
            ClassDef(i + 1, name, is_thing) for i, (name, is_thing) in enumerate(classes))
        self._by_name = {c.name: c for c in self.classes}
        if len(self._by_name) != len(self.classes):
            raise ValueError("duplicate class names in catalog")

    def __len__(self) -> int:
        return len(self.classes)

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassCatalog) and self.classes == other.classes

    def id_of(self, name: str) -> int:
        c = self._by_name.get(name)
        if c is None:
            raise KeyError(f"unknown class {name!r}")
        return c.class_id

    def has(self, name: str) -> bool:
        return name in self._by_name

    def name_of(self, class_id: int) -> str:
        if class_id == UNLABELED:
            return "unlabeled"
        return self.classes[class_id - 1].name

    def is_thing(self, class_id: int) -> bool:
        if class_id == UNLABELED:
            return False
        return self.classes[class_id - 1].is_thing

    def thing_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if c.is_thing]

    def stuff_ids(self) -> list[int]:
        return [c.class_id for c in self.classes if not c.is_thing]


@dataclass(frozen=True)
class TableRow:
    pattern: str
    class_id: int
    description: str
    regex: re.Pattern = field(compare=False, repr=False, default=None)


def compile_pattern(pattern: str) -> re.Pattern:
    """Anchored, case-insensitive matcher for the `*`/`?`/`|` pattern language."""
    alternatives = []
    for alt in pattern.split("|"):
        if not alt:
            raise ValueError("empty alternative")
        piece = "".join(".*" if ch == "*" else "." if ch == "?" else re.escape(ch)
                        for ch in alt)
        alternatives.append(piece)
    return re.compile("^(?:" + "|".join(alternatives) + ")$", re.IGNORECASE)


@dataclass(frozen=True)
class ReferenceTable:
    catalog: ClassCatalog
    rows: tuple[TableRow, ...]

    def match_layer(self, layer_name: str) -> int | None:
        """Class id of the first matching row, or None."""
        for row in self.rows:
            if row.regex.match(layer_name):
                return row.class_id
        return None


def load_reference_table(source: str) -> ReferenceTable:
    """Parse the tab-separated reference table format.

    A `@classes` block declares the catalog (`name<TAB>thing|stuff` per line,
    closed by `@end`), then one rule per line: `pattern<TAB>class<TAB>description`.
    `#` starts a comment. Earlier rules win.
    """
    lines = source.splitlines()
    classes: list[tuple[str, bool]] = []
    rows: list[TableRow] = []
    seen_patterns: set[str] = set()
    in_classes = False
    catalog: ClassCatalog | None = None
    for i, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        if text == "@classes":
            if catalog is not None or in_classes:
                raise TableError(i, "duplicate @classes block")
            in_classes = True
            continue
        if text == "@end":
            if not in_classes:
                raise TableError(i, "@end without @classes")
            in_classes = False
            try:
                catalog = ClassCatalog(classes)
            except ValueError as e:
                raise TableError(i, str(e)) from None
            continue
        fields = raw.rstrip("\n").split("\t")
        if in_classes:
            if len(fields) < 2:
                raise TableError(i, "class line needs `name<TAB>thing|stuff`")
            name, kind = fields[0].strip(), fields[1].strip().lower()
            if kind not in ("thing", "stuff"):
                raise TableError(i, f"class kind must be thing or stuff, got {kind!r}")
            classes.append((name, kind == "thing"))
            continue
        if catalog is None:
            raise TableError(i, "rule before @classes block")
        if len(fields) < 3:
            raise TableError(i, "rule needs `pattern<TAB>class<TAB>description`")
        pattern, cls_name, description = (fields[0].strip(), fields[1].strip(),
                                          fields[2].strip())
        if not _PATTERN_CHARS.match(pattern):
            raise TableError(i, f"pattern has unsupported characters: {pattern!r}")
        key = pattern.upper()
        if key in seen_patterns:
            raise TableError(i, f"duplicate pattern {pattern!r}")
        seen_patterns.add(key)
        if not catalog.has(cls_name):
            raise TableError(i, f"unknown class {cls_name!r}")
        try:
            regex = compile_pattern(pattern)
        except (ValueError, re.error) as e:
            raise TableError(i, f"bad pattern {pattern!r}: {e}") from None
        rows.append(TableRow(pattern, catalog.id_of(cls_name), description, regex))
    if in_classes:
        raise TableError(len(lines), "unterminated @classes block")
    if catalog is None:
        catalog = ClassCatalog([])
    return ReferenceTable(catalog, tuple(rows))


def load_reference_table_file(path) -> ReferenceTable:
    with open(path, "r", encoding="utf-8") as fh:
        return load_reference_table(fh.read())


def bundled_table() -> ReferenceTable:
    """The reference table shipped with the package."""
    from importlib.resources import files

    text = files("plancad.data").joinpath("default_table.tsv").read_text("utf-8")
    return load_reference_table(text)


@dataclass(frozen=True)
class ScreeningReport:
    total_layers: int
    matched_layers: int
    unmatched: tuple[str, ...]
    deviation: float
    accepted: bool
    threshold: float

    def to_dict(self) -> dict:
        return {
            "totalLayers": self.total_layers,
            "matchedLayers": self.matched_layers,
            "unmatched": list(self.unmatched),
            "deviation": self.deviation,
            "accepted": self.accepted,
            "threshold": self.threshold,
        }


def screen_drawing(table: ReferenceTable, drawing: FlatDrawing,
                   threshold: float = DEFAULT_DEVIATION_THRESHOLD,
                   weight_by_primitives: bool = False) -> ScreeningReport:
    """Validate layer names; deviation over `threshold` rejects.

    The acceptance rule counts distinct primitive-bearing layers. The
    primitive-weighted mode is for analysis only.
    """
    layers = drawing.primitive_layers()
    if not layers:
        raise EmptyDrawing("drawing has no primitive-bearing layers")
    unmatched = tuple(sorted(name for name in layers if table.match_layer(name) is None))
    if weight_by_primitives:
        unmatched_set = set(unmatched)
        total = len(drawing.primitives)
        bad = sum(1 for pp in drawing.primitives if pp.layer in unmatched_set)
        deviation = bad / total
    else:
        deviation = len(unmatched) / len(layers)
    return ScreeningReport(
        total_layers=len(layers),
        matched_layers=len(layers) - len(unmatched),
        unmatched=unmatched,
        deviation=deviation,
        accepted=deviation <= threshold,
        threshold=threshold,
    )
