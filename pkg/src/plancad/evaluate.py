"""Assemble chunk-level labelings into metric inputs and a full report.

Evaluation units (chunks or whole drawings) are namespaced so instances from
different units can never match; stuff labels become one implicit instance
per class per unit before matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .annotator import PanopticLabel
from .chunker import Chunk
from .metrics import (APReport, CoverageError, PanopticReport, SymbolInstance,
                      instance_ap, match_instances, panoptic_quality,
                      semantic_scores)
from .screening import UNLABELED, ClassCatalog

REPORT_SCHEMA = "plancad-report/1"


@dataclass(frozen=True)
class EvalUnit:
    unit_id: str
    gt_labels: dict[str, PanopticLabel]
    pred_labels: dict[str, PanopticLabel]
    weights: dict[str, float]  # per source id, shared by both labelings
    pred_scores: dict[int, float] = field(default_factory=dict)  # pred z -> score


@dataclass(frozen=True)
class MetricsReport:
    panoptic: PanopticReport
    f1: float
    wf1: float
    instance: APReport
    catalog: ClassCatalog

    def to_dict(self) -> dict:
        def agg(a):
            return {"pq": a.pq, "sq": a.sq, "rq": a.rq, "classes": a.classes}

        per_class = {}
        for cid, row in sorted(self.panoptic.per_class.items()):
            per_class[self.catalog.name_of(cid)] = {
                "pq": row.pq, "sq": row.sq, "rq": row.rq,
                "tp": row.tp, "fp": row.fp, "fn": row.fn,
            }
        ap_per_class = {}
        for cid, by_t in sorted(self.instance.per_class.items()):
            ap_per_class[self.catalog.name_of(cid)] = {str(t): v for t, v in by_t.items()}
        return {
            "schema": REPORT_SCHEMA,
            "panoptic": {
                "total": agg(self.panoptic.total),
                "thing": agg(self.panoptic.thing),
                "stuff": agg(self.panoptic.stuff),
                "totalUnweightedMean": agg(self.panoptic.total_mean),
                "thingUnweightedMean": agg(self.panoptic.thing_mean),
                "stuffUnweightedMean": agg(self.panoptic.stuff_mean),
                "perClass": per_class,
            },
            "semantic": {"f1": self.f1, "wf1": self.wf1},
            "instance": {"ap50": self.instance.ap50, "ap75": self.instance.ap75,
                         "map": self.instance.map, "perClass": ap_per_class},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def instances_from_labels(labels: dict[str, PanopticLabel], catalog: ClassCatalog,
                          scores: dict[int, float] | None = None,
                          default_score: float | None = None) -> list[SymbolInstance]:
    """Thing instances grouped by z; stuff classes become one instance each.

    Unlabeled primitives produce no instance. Scores apply to thing
    instances; stuff instances get the default score.
    """
    scores = scores or {}
    by_z: dict[int, set[str]] = {}
    by_stuff: dict[int, set[str]] = {}
    for sid, lab in labels.items():
        if lab.l == UNLABELED:
            continue
        if catalog.is_thing(lab.l) and lab.z > 0:
            by_z.setdefault(lab.z, set()).add(sid)
        elif not catalog.is_thing(lab.l):
            by_stuff.setdefault(lab.l, set()).add(sid)
        # thing-class primitives without an instance id stay out of matching
    out: list[SymbolInstance] = []
    class_of: dict[int, int] = {}
    for z, members in sorted(by_z.items()):
        classes = {labels[sid].l for sid in members}
        assert len(classes) == 1, f"instance {z} mixes classes"
        class_of[z] = classes.pop()
    for z, members in sorted(by_z.items()):
        out.append(SymbolInstance(class_of[z], frozenset(members),
                                  scores.get(z, default_score)))
    for cls, members in sorted(by_stuff.items()):
        out.append(SymbolInstance(cls, frozenset(members), default_score))
    return out


def _namespaced(unit_id: str, mapping: dict) -> dict:
    return {f"{unit_id}::{k}": v for k, v in mapping.items()}


def unit_from_chunks(gt_chunk: Chunk, pred_chunk: Chunk) -> EvalUnit:
    if gt_chunk.catalog != pred_chunk.catalog:
        raise CoverageError(f"chunk {gt_chunk.chunk_id}: class catalogs differ")
    return EvalUnit(
        unit_id=gt_chunk.chunk_id,
        gt_labels=gt_chunk.labels(),
        pred_labels=pred_chunk.labels(),
        weights=gt_chunk.weights(),
        pred_scores=dict(pred_chunk.scores),
    )


def evaluate_units(units: list[EvalUnit], catalog: ClassCatalog,
                   weight_mode: str = "length") -> MetricsReport:
    """Full metric suite over namespaced evaluation units.

    weight_mode `length` uses primitive lengths for IoU and wF1; `count`
    weights every primitive equally. Predictions without scores default to
    confidence 1.0 for AP.
    """
    if weight_mode not in ("length", "count"):
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    gt_labels: dict[str, PanopticLabel] = {}
    pred_labels: dict[str, PanopticLabel] = {}
    weights: dict[str, float] = {}
    gt_instances: list[SymbolInstance] = []
    pred_instances: list[SymbolInstance] = []
    for unit in units:
        if set(unit.gt_labels) != set(unit.pred_labels):
            raise CoverageError(
                f"unit {unit.unit_id}: prediction does not cover the ground-truth primitives")
        ns_gt = _namespaced(unit.unit_id, unit.gt_labels)
        ns_pred = _namespaced(unit.unit_id, unit.pred_labels)
        ns_weights = _namespaced(unit.unit_id, unit.weights)
        if weight_mode == "count":
            ns_weights = {k: 1.0 for k in ns_weights}
        gt_labels.update(ns_gt)
        pred_labels.update(ns_pred)
        weights.update(ns_weights)
        # Per-unit grouping keeps instance ids unit-local.
        gt_instances.extend(instances_from_labels(ns_gt, catalog))
        pred_instances.extend(instances_from_labels(ns_pred, catalog,
                                                    scores=unit.pred_scores,
                                                    default_score=1.0))
    matching = match_instances(pred_instances, gt_instances, weights)
    panoptic = panoptic_quality(matching, catalog)
    f1, wf1 = semantic_scores(pred_labels, gt_labels, weights)
    ap = instance_ap(pred_instances, gt_instances, weights, catalog)
    return MetricsReport(panoptic, f1, wf1, ap, catalog)


def evaluate_chunk_pairs(pairs: list[tuple[Chunk, Chunk]],
                         weight_mode: str = "length") -> MetricsReport:
    """Evaluate (gt, pred) chunk pairs; catalogs must agree across all chunks."""
    if not pairs:
        raise ValueError("no chunk pairs to evaluate")
    catalog = pairs[0][0].catalog
    units = []
    for gt_chunk, pred_chunk in pairs:
        if gt_chunk.catalog != catalog:
            raise CoverageError(f"chunk {gt_chunk.chunk_id}: class catalogs differ")
        units.append(unit_from_chunks(gt_chunk, pred_chunk))
    return evaluate_units(units, catalog, weight_mode)
