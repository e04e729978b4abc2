"""Command-line interface: screen, annotate, chunk, eval, gen, render, serve.

Exit codes: 0 success (screen: accepted), 3 screening rejected, 2 usage
error, 1 processing error with a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

from . import annotator, chunker, evaluate, ingest, screening, synthgen
from .annotator import AnnotatedDrawing, PanopticLabel
from .screening import ReferenceTable

EXIT_OK = 0
EXIT_PROCESSING = 1
EXIT_USAGE = 2
EXIT_REJECTED = 3

ANNOTATION_SCHEMA = "plancad-annotation/1"
GROUND_TRUTH_SCHEMA = "plancad-groundtruth/1"


def _load_table(path: str | None) -> ReferenceTable:
    if path is None:
        return screening.bundled_table()
    return screening.load_reference_table_file(path)


def _parse_file(path: str):
    doc = ingest.parse_document(Path(path).read_text("utf-8"))
    return ingest.flatten_blocks(doc)


def _cmd_screen(args) -> int:
    table = _load_table(args.table)
    flat = _parse_file(getattr(args, "in"))
    report = screening.screen_drawing(table, flat, threshold=args.max_deviation,
                                      weight_by_primitives=args.weight_by_primitives)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.accepted else EXIT_REJECTED


def _write_annotation(out_dir: Path, drawing_id: str, ann: AnnotatedDrawing) -> None:
    flags = annotator.check_compliance(ann)
    payload = {
        "schema": ANNOTATION_SCHEMA,
        "drawing": drawing_id,
        "classes": [[c.name, "thing" if c.is_thing else "stuff"]
                    for c in ann.catalog.classes],
        "labels": {sid: [lab.l, lab.z] for sid, lab in sorted(ann.labels.items())},
        "flags": [{"kind": f.kind, "subject": f.subject, "detail": f.detail}
                  for f in flags],
    }
    (out_dir / "annotation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def _cmd_annotate(args) -> int:
    table = _load_table(args.table)
    src = Path(getattr(args, "in"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flat = _parse_file(src)
    ann = annotator.annotate(flat, table)
    shutil.copyfile(src, out_dir / "source.dxf")
    _write_annotation(out_dir, src.stem, ann)
    return EXIT_OK


def _read_annotated_dir(in_dir: Path) -> tuple[str, AnnotatedDrawing]:
    payload = json.loads((in_dir / "annotation.json").read_text("utf-8"))
    if payload.get("schema") != ANNOTATION_SCHEMA:
        raise ValueError(f"{in_dir}: not an annotation directory")
    catalog = screening.ClassCatalog(
        [(name, kind == "thing") for name, kind in payload["classes"]])
    doc = ingest.parse_document((in_dir / "source.dxf").read_text("utf-8"))
    flat = ingest.flatten_blocks(doc)
    labels = {sid: PanopticLabel(l, z) for sid, (l, z) in payload["labels"].items()}
    ann = AnnotatedDrawing(drawing=flat, catalog=catalog, labels=labels)
    ann.check_invariants()
    return payload["drawing"], ann


def _cmd_chunk(args) -> int:
    in_dir = Path(getattr(args, "in"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    drawing_id, ann = _read_annotated_dir(in_dir)
    chunks = chunker.chunk_drawing(ann, size_m=args.size, drawing_id=drawing_id)
    for chunk in chunks:
        (out_dir / f"{chunk.chunk_id}.svg").write_text(
            chunker.export_chunk(chunk), "utf-8")
    print(json.dumps({"chunks": len(chunks)}))
    return EXIT_OK


def _cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    gt_files = sorted(gt_dir.glob("*.svg"))
    if not gt_files:
        raise FileNotFoundError(f"no chunk files in {gt_dir}")
    pairs = []
    for gt_file in gt_files:
        pred_file = pred_dir / gt_file.name
        if not pred_file.is_file():
            raise FileNotFoundError(f"prediction missing for {gt_file.name}")
        gt_chunk = chunker.import_chunk(gt_file.read_text("utf-8"))
        pred_chunk = chunker.import_chunk(pred_file.read_text("utf-8"))
        pairs.append((gt_chunk, pred_chunk))
    report = evaluate.evaluate_chunk_pairs(pairs, weight_mode=args.weight)
    text = report.to_json()
    Path(args.report).write_text(text, "utf-8")
    print(text, end="")
    return EXIT_OK


def _cmd_gen(args) -> int:
    spec_obj = {}
    if args.spec:
        spec_obj = json.loads(Path(args.spec).read_text("utf-8"))
    if args.seed is not None:
        spec_obj["seed"] = args.seed
    spec = synthgen.GenSpec.from_dict(spec_obj)
    doc, gt = synthgen.generate_drawing(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "drawing.dxf").write_text(ingest.serialize_document(doc), "utf-8")
    catalog = screening.bundled_table().catalog
    payload = {"schema": GROUND_TRUTH_SCHEMA, "spec": spec.to_dict()}
    payload.update(gt.to_dict(catalog))
    (out_dir / "ground_truth.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    return EXIT_OK


def _cmd_render(args) -> int:
    chunk = chunker.import_chunk(Path(getattr(args, "in")).read_text("utf-8"))
    grid = chunker.render_chunk(chunk, width=args.w, height=args.h,
                                stroke_px=args.stroke)
    if args.format == "pgm":
        data = grid.to_pgm().encode("ascii")
    else:
        data = grid.to_floatgrid()
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    from .workspace import Workspace

    table = _load_table(args.table)
    workspace = Workspace(args.root, table=table)
    app = create_app(workspace, auth_token=args.auth_token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plancad")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("screen", help="validate layer names against a reference table")
    p.add_argument("--table", help="reference table file (default: bundled)")
    p.add_argument("--in", required=True, help="drawing file")
    p.add_argument("--max-deviation", type=float, default=0.05, dest="max_deviation")
    p.add_argument("--weight-by-primitives", action="store_true")
    p.set_defaults(fn=_cmd_screen)

    p = sub.add_parser("annotate", help="run the automated annotation stages")
    p.add_argument("--table")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_annotate)

    p = sub.add_parser("chunk", help="tile an annotated drawing into chunk files")
    p.add_argument("--in", required=True, help="annotate output directory")
    p.add_argument("--size", type=float, default=chunker.DEFAULT_CHUNK_SIZE_M)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_chunk)

    p = sub.add_parser("eval", help="score predicted chunks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--weight", choices=("length", "count"), default="length")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("gen", help="generate a synthetic drawing with ground truth")
    p.add_argument("--seed", type=int)
    p.add_argument("--spec", help="GenSpec JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("render", help="rasterize a chunk file")
    p.add_argument("--in", required=True)
    p.add_argument("--w", type=int, default=chunker.DEFAULT_RENDER_SIZE)
    p.add_argument("--h", type=int, default=chunker.DEFAULT_RENDER_SIZE)
    p.add_argument("--stroke", type=float, default=1.0)
    p.add_argument("--format", choices=("pgm", "grid"), default="pgm")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("serve", help="run the review HTTP service")
    p.add_argument("--root", default=os.environ.get("PLANCAD_ROOT", "."),
                   help="workspace root (default: $PLANCAD_ROOT or .)")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--table")
    p.add_argument("--auth-token", dest="auth_token")
    p.set_defaults(fn=_cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.fn(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(e).__name__, "detail": str(e)}),
              file=sys.stderr)
        return EXIT_PROCESSING


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
