"""HTTP review service over a workspace: read drawings, flags, labels and
chunks; append correction events. Single writer per drawing log."""

from __future__ import annotations

from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse

from . import chunker
from .annotator import BadEvent, CorrectionEvent
from .workspace import CorruptLog, SeqConflict, UnknownDrawing, Workspace


def create_app(workspace: Workspace, auth_token: str | None = None) -> FastAPI:
    app = FastAPI(title="plancad review service", version="1")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    def check_auth(authorization: str | None) -> None:
        if auth_token is None:
            return
        if authorization != f"Bearer {auth_token}":
            raise HTTPException(status_code=401, detail="missing or bad auth token")

    def load_or_404(drawing_id: str):
        try:
            return workspace.project_state(drawing_id)
        except UnknownDrawing:
            raise HTTPException(status_code=404,
                                detail=f"UnknownDrawing: {drawing_id}") from None

    @app.get("/v1/drawings")
    def list_drawings():
        return {"drawings": workspace.drawing_ids()}

    @app.get("/v1/drawings/{drawing_id}")
    def drawing_summary(drawing_id: str):
        projection = load_or_404(drawing_id)
        report = workspace.screening_report(drawing_id)
        flags = workspace.flags(drawing_id)
        layers = []
        for name in projection.drawing.primitive_layers():
            cls = workspace.table.match_layer(name)
            layers.append({
                "name": name,
                "class": projection.catalog.name_of(cls) if cls else "unlabeled",
            })
        return {
            "id": drawing_id,
            "layers": layers,
            "screening": report.to_dict(),
            "flags": {
                "total": len(flags),
                "open": sum(1 for f in flags if not f["accepted"]),
            },
            "instanceCount": projection.instance_count(),
            "classes": [
                {"name": c.name, "kind": "thing" if c.is_thing else "stuff"}
                for c in projection.catalog.classes
            ],
        }

    @app.get("/v1/drawings/{drawing_id}/labels")
    def labels(drawing_id: str):
        projection = load_or_404(drawing_id)
        return {
            "labels": {sid: [lab.l, lab.z]
                       for sid, lab in sorted(projection.labels.items())},
        }

    @app.get("/v1/drawings/{drawing_id}/flags")
    def flags(drawing_id: str):
        load_or_404(drawing_id)
        return {"flags": workspace.flags(drawing_id)}

    @app.get("/v1/drawings/{drawing_id}/chunks")
    def chunk_list(drawing_id: str):
        load_or_404(drawing_id)
        return {"chunks": [c.chunk_id for c in workspace.chunks(drawing_id)]}

    @app.get("/v1/drawings/{drawing_id}/chunks/{chunk_id}")
    def chunk_markup(drawing_id: str, chunk_id: str):
        load_or_404(drawing_id)
        try:
            chunk = workspace.chunk_by_id(drawing_id, chunk_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"unknown chunk {chunk_id}") from None
        return PlainTextResponse(chunker.export_chunk(chunk),
                                 media_type="image/svg+xml")

    @app.get("/v1/drawings/{drawing_id}/export")
    def export(drawing_id: str):
        load_or_404(drawing_id)
        return {
            "chunks": [{"id": c.chunk_id, "markup": chunker.export_chunk(c)}
                       for c in workspace.chunks(drawing_id)],
        }

    @app.post("/v1/drawings/{drawing_id}/corrections")
    async def corrections(drawing_id: str, request: Request,
                          authorization: str | None = Header(default=None)):
        check_auth(authorization)
        load_or_404(drawing_id)
        body = await request.json()
        try:
            event = CorrectionEvent(
                event_id=str(body["eventId"]),
                seq=int(body.get("seq", 0)),
                kind=str(body["kind"]),
                payload=body.get("payload", {}),
                author=str(body.get("author", "")),
                timestamp=str(body.get("timestamp", "")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=400, detail=f"BadEvent: {e}") from None
        try:
            seq, created = workspace.record_correction(drawing_id, event)
        except BadEvent as e:
            raise HTTPException(status_code=400, detail=f"BadEvent: {e}") from None
        except SeqConflict as e:
            raise HTTPException(status_code=409, detail=str(e)) from None
        except CorruptLog as e:
            raise HTTPException(status_code=500, detail=str(e)) from None
        return JSONResponse({"eventId": event.event_id, "seq": seq,
                             "created": created},
                            status_code=201 if created else 200)

    return app
