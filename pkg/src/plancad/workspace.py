"""Filesystem workspace: drawings, screening, base annotations, and an
append-only correction log per drawing (fsync on append, prefix-closed)."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from . import annotator, chunker, ingest, screening
from .annotator import AnnotatedDrawing, BadEvent, CorrectionEvent
from .chunker import Chunk
from .screening import ReferenceTable, ScreeningReport


class UnknownDrawing(KeyError):
    pass


class SeqConflict(ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"expected seq {expected}, got {got}")
        self.expected = expected
        self.got = got


class CorruptLog(ValueError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"log record {position}: {reason}")
        self.position = position
        self.reason = reason


class CorrectionLogFile:
    """Line-delimited JSON event log; one record per line, fsync on append."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def read_all(self) -> list[CorrectionEvent]:
        if not self.path.exists():
            return []
        events: list[CorrectionEvent] = []
        last_seq = 0
        with open(self.path, "r", encoding="utf-8") as fh:
            for pos, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    ev = CorrectionEvent.from_json(line)
                except (json.JSONDecodeError, KeyError, ValueError) as e:
                    raise CorruptLog(pos, str(e)) from None
                if ev.seq <= last_seq:
                    raise CorruptLog(pos, f"seq {ev.seq} not above {last_seq}")
                last_seq = ev.seq
                events.append(ev)
        return events

    def append(self, event: CorrectionEvent) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(event.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())


@dataclass
class DrawingState:
    drawing_id: str
    source_path: Path
    screening: ScreeningReport
    base: AnnotatedDrawing
    log: CorrectionLogFile
    lock: threading.Lock
    projection: AnnotatedDrawing | None = None
    chunks_cache: list[Chunk] | None = None


class Workspace:
    """Root layout: drawings/<id>.dxf sources, logs/<id>.log correction logs."""

    def __init__(self, root: str | Path, table: ReferenceTable | None = None,
                 chunk_size_m: float = chunker.DEFAULT_CHUNK_SIZE_M):
        self.root = Path(root)
        self.table = table if table is not None else screening.bundled_table()
        self.chunk_size_m = chunk_size_m
        self._states: dict[str, DrawingState] = {}
        self._registry_lock = threading.Lock()

    @property
    def drawings_dir(self) -> Path:
        return self.root / "drawings"

    @property
    def logs_dir(self) -> Path:
        return self.root / "logs"

    def drawing_ids(self) -> list[str]:
        if not self.drawings_dir.is_dir():
            return []
        return sorted(p.stem for p in self.drawings_dir.glob("*.dxf"))

    def _load(self, drawing_id: str) -> DrawingState:
        with self._registry_lock:
            state = self._states.get(drawing_id)
            if state is not None:
                return state
            source = self.drawings_dir / f"{drawing_id}.dxf"
            if not source.is_file():
                raise UnknownDrawing(drawing_id)
            doc = ingest.parse_document(source.read_text("utf-8"))
            flat = ingest.flatten_blocks(doc)
            report = screening.screen_drawing(self.table, flat)
            base = annotator.annotate(flat, self.table)
            state = DrawingState(
                drawing_id=drawing_id,
                source_path=source,
                screening=report,
                base=base,
                log=CorrectionLogFile(self.logs_dir / f"{drawing_id}.log"),
                lock=threading.Lock(),
            )
            self._states[drawing_id] = state
            return state

    def screening_report(self, drawing_id: str) -> ScreeningReport:
        return self._load(drawing_id).screening

    def project_state(self, drawing_id: str) -> AnnotatedDrawing:
        """Base annotation with the full correction log replayed."""
        state = self._load(drawing_id)
        with state.lock:
            if state.projection is None:
                events = state.log.read_all()
                try:
                    state.projection = annotator.apply_corrections(state.base, events)
                except BadEvent as e:
                    raise CorruptLog(e.seq, e.reason) from None
            return state.projection

    def record_correction(self, drawing_id: str, event: CorrectionEvent) -> tuple[int, bool]:
        """Append one event; duplicates by eventId are acknowledged without
        re-append. Returns (assigned seq, created)."""
        state = self._load(drawing_id)
        with state.lock:
            events = state.log.read_all()
            for known in events:
                if known.event_id == event.event_id:
                    return known.seq, False
            next_seq = events[-1].seq + 1 if events else 1
            if event.seq and event.seq != next_seq:
                raise SeqConflict(next_seq, event.seq)
            event = CorrectionEvent(event.event_id, next_seq, event.kind,
                                    event.payload, event.author, event.timestamp)
            base_projection = state.projection
            if base_projection is None:
                base_projection = annotator.apply_corrections(state.base, events)
            # Validate before touching the log; BadEvent leaves it unchanged.
            projected = annotator.apply_corrections(base_projection, [event])
            state.log.append(event)
            state.projection = projected
            state.chunks_cache = None
            return next_seq, True

    def chunks(self, drawing_id: str) -> list[Chunk]:
        state = self._load(drawing_id)
        projection = self.project_state(drawing_id)
        with state.lock:
            if state.chunks_cache is None:
                state.chunks_cache = chunker.chunk_drawing(
                    projection, self.chunk_size_m, drawing_id=drawing_id)
            return state.chunks_cache

    def chunk_by_id(self, drawing_id: str, chunk_id: str) -> Chunk:
        for chunk in self.chunks(drawing_id):
            if chunk.chunk_id == chunk_id:
                return chunk
        raise KeyError(chunk_id)

    def flags(self, drawing_id: str) -> list[dict]:
        projection = self.project_state(drawing_id)
        flags = annotator.check_compliance(projection)
        return [{
            "kind": f.kind, "subject": f.subject, "detail": f.detail,
            "ref": f.ref, "accepted": f.ref in projection.accepted_flags,
        } for f in flags]
